from typing import Optional, Sequence, Tuple

import torch

from hanlab.ahe.config import AheConfig
from hanlab.ahe.types import DTYPE, CiphertextBatch, KeyBatch, PlaintextBatch, PublicKeyBatch
from hanlab.errors import InvalidArgumentError


def _device_of(model) -> torch.device:
    for param in model.parameters():
        return param.device
    return torch.device("cpu")


def keygen(batch_size: int, cfg: AheConfig, generator: Optional[torch.Generator] = None) -> Tuple[KeyBatch, PublicKeyBatch]:
    """
    Sample one fresh private key pair per plaintext scalar.

    Parameters
    ----------
    batch_size : int
        Number of key pairs.
    cfg : AheConfig
        Supplies the sampling range ``[key_low, key_high]``.
    generator : torch.Generator, optional
        Random stream. Two calls with identically seeded generators return identical keys.

    Returns
    -------
    tuple of (KeyBatch, PublicKeyBatch)
        ``pk[i] == sk_a[i] + sk_b[i]`` exactly.
    """
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    span = cfg.key_high - cfg.key_low
    sk_a = torch.rand(batch_size, generator=generator, dtype=DTYPE) * span + cfg.key_low
    sk_b = torch.rand(batch_size, generator=generator, dtype=DTYPE) * span + cfg.key_low
    keys = KeyBatch(sk_a, sk_b)
    return keys, keys.public()


def encrypt(enc, m: PlaintextBatch, keys: KeyBatch, cfg: AheConfig) -> CiphertextBatch:
    """
    ``Enc(m, sk_a, sk_b, psi)``: one ciphertext row of length ``L`` per plaintext scalar.

    Differentiable when ``enc`` has trainable weights; wrap the call in
    ``torch.no_grad()`` for inference.
    """
    if getattr(enc, "role", "encryptor") != "encryptor":
        raise InvalidArgumentError(f"expected an encryptor, got role {enc.role!r}")
    if len(m) != len(keys):
        raise InvalidArgumentError(f"plaintext/key length mismatch: {len(m)} vs {len(keys)}")
    if len(m) and m.m.abs().max() > cfg.psi:
        raise InvalidArgumentError(f"plaintext outside [-{cfg.psi}, {cfg.psi}]; clip before encrypting")
    device = _device_of(enc)
    x = torch.stack([m.m, keys.sk_a, keys.sk_b], dim=1).to(device)
    c = enc(x)
    if c.shape[1] != cfg.ciphertext_len:
        raise InvalidArgumentError(f"encryptor emits width {c.shape[1]}, cfg expects {cfg.ciphertext_len}")
    return CiphertextBatch(c)


def aggregation_input(ciphertexts: Sequence[CiphertextBatch], pks: Sequence[PublicKeyBatch]) -> torch.Tensor:
    """Concatenate ``[c_1, pk_1, ..., c_N, pk_N]`` row-wise, clients in slot order."""
    if len(ciphertexts) != len(pks):
        raise InvalidArgumentError("one public-key batch is required per ciphertext batch")
    lengths = {len(c) for c in ciphertexts} | {len(p) for p in pks}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"all batches must share one length, got {sorted(lengths)}")
    device = ciphertexts[0].c.device
    parts = []
    for c, pk in zip(ciphertexts, pks):
        parts.append(c.c)
        parts.append(pk.pk.to(device).unsqueeze(1))
    return torch.cat(parts, dim=1)


def aggregate(agg, ciphertexts: Sequence[CiphertextBatch], pks: Sequence[PublicKeyBatch]) -> torch.Tensor:
    """
    ``Agg``: map ``N`` ciphertext batches and their public keys to the plaintext sums.

    Client slots are positional; the aggregator is not permutation invariant.
    """
    if getattr(agg, "role", "aggregator") != "aggregator":
        raise InvalidArgumentError(f"expected an aggregator, got role {agg.role!r}")
    if not ciphertexts:
        raise InvalidArgumentError("no ciphertexts to aggregate")
    width = ciphertexts[0].length + 1
    arity = agg.in_width // width
    if len(ciphertexts) != arity or agg.in_width != arity * width:
        raise InvalidArgumentError(f"aggregator takes {arity} clients, got {len(ciphertexts)}")
    x = aggregation_input(ciphertexts, pks).to(_device_of(agg))
    return agg(x).squeeze(-1)


def attack_forward(atk, c: CiphertextBatch, pk: Optional[PublicKeyBatch] = None) -> torch.Tensor:
    """
    Per-row plaintext guess of an attacker network.

    ``pk`` must be supplied to ``attacker_pk`` networks and withheld from ``attacker_nopk`` ones.
    """
    role = getattr(atk, "role", None)
    if role == "attacker_pk":
        if pk is None:
            raise InvalidArgumentError("attacker_pk needs the public keys")
        if len(pk) != len(c):
            raise InvalidArgumentError("public key / ciphertext length mismatch")
        x = torch.cat([c.c, pk.pk.to(c.c.device).unsqueeze(1)], dim=1)
    elif role == "attacker_nopk":
        if pk is not None:
            raise InvalidArgumentError("attacker_nopk must not receive public keys")
        x = c.c
    else:
        raise InvalidArgumentError(f"expected an attacker, got role {role!r}")
    return atk(x.to(_device_of(atk))).squeeze(-1)
