from dataclasses import dataclass

import torch

from hanlab.errors import InvalidArgumentError, NonFiniteError

DTYPE = torch.float32


def _as_vector(values, name: str) -> torch.Tensor:
    tensor = torch.as_tensor(values, dtype=DTYPE)
    if tensor.dim() != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {tuple(tensor.shape)}")
    return tensor


@dataclass(frozen=True)
class KeyBatch:
    """Private key pairs, one ``(sk_a[i], sk_b[i])`` pair per plaintext scalar."""

    sk_a: torch.Tensor
    sk_b: torch.Tensor

    def __post_init__(self):
        if self.sk_a.shape != self.sk_b.shape or self.sk_a.dim() != 1:
            raise InvalidArgumentError("sk_a and sk_b must be vectors of equal length")
        if not (torch.isfinite(self.sk_a).all() and torch.isfinite(self.sk_b).all()):
            raise NonFiniteError("private keys must be finite")

    def __len__(self) -> int:
        return self.sk_a.shape[0]

    def public(self) -> "PublicKeyBatch":
        return PublicKeyBatch(self.sk_a + self.sk_b)

    def select(self, index: torch.Tensor) -> "KeyBatch":
        return KeyBatch(self.sk_a[index], self.sk_b[index])


@dataclass(frozen=True)
class PublicKeyBatch:
    """Public keys ``pk[i] = sk_a[i] + sk_b[i]``."""

    pk: torch.Tensor

    def __len__(self) -> int:
        return self.pk.shape[0]


@dataclass(frozen=True)
class PlaintextBatch:
    """
    Plaintext scalars inside ``[-psi, psi]``.

    Values outside the bound are clipped on construction and ``clip_count`` grows by the
    number of clipped entries. Non-finite values are rejected.
    """

    m: torch.Tensor
    psi: float
    clip_count: int = 0

    def __post_init__(self):
        m = self.m if torch.is_tensor(self.m) and self.m.is_floating_point() else _as_vector(self.m, "plaintext")
        if m.dim() != 1:
            raise InvalidArgumentError(f"plaintext must be one-dimensional, got shape {tuple(m.shape)}")
        if not self.psi > 0:
            raise InvalidArgumentError(f"psi must be positive, got {self.psi}")
        if not torch.isfinite(m).all():
            raise NonFiniteError("plaintext values must be finite")
        outside = int((m.abs() > self.psi).sum())
        if outside:
            m = m.clamp(-self.psi, self.psi)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "clip_count", self.clip_count + outside)

    @classmethod
    def from_values(cls, values, psi: float) -> "PlaintextBatch":
        return cls(_as_vector(values, "plaintext"), psi)

    def __len__(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True)
class CiphertextBatch:
    """Ciphertext vectors, shape ``B x L``. Every entry must be finite."""

    c: torch.Tensor

    def __post_init__(self):
        if self.c.dim() != 2:
            raise InvalidArgumentError(f"ciphertexts must be B x L, got shape {tuple(self.c.shape)}")
        if not torch.isfinite(self.c).all():
            raise NonFiniteError("ciphertexts contain non-finite entries")

    def __len__(self) -> int:
        return self.c.shape[0]

    @property
    def length(self) -> int:
        return self.c.shape[1]
