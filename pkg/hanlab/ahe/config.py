from dataclasses import dataclass

from hanlab.errors import InvalidArgumentError


@dataclass
class AheConfig:
    """
    Parameters of the aggregatable hybrid encryption scheme.

    Parameters
    ----------
    psi : float
        Plaintext bound. Every plaintext scalar lives in ``[-psi, psi]``.
    ciphertext_len : int
        Length ``L`` of the ciphertext vector produced per plaintext scalar.
    num_clients : int
        Number of clients ``N``. Baked into the aggregator's input width.
    key_low, key_high : float
        Uniform sampling range of each private key component.
    hidden_dim : int
        Width of the expanded representation inside every network.
    conv_channels : int
        Channels of the 1-D convolutions run over the expanded representation.
    num_res_blocks : int
        Residual blocks of a standard-depth network. Double-depth attackers use twice as many.
    seed : int
        Seed for weight initialisation and key streams.
    """

    psi: float = 1.0
    ciphertext_len: int = 28
    num_clients: int = 3
    key_low: float = -1.0
    key_high: float = 1.0
    hidden_dim: int = 32
    conv_channels: int = 4
    num_res_blocks: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.psi > 0:
            raise InvalidArgumentError(f"psi must be positive, got {self.psi}")
        if self.ciphertext_len < 2:
            raise InvalidArgumentError(f"ciphertext_len must be >= 2, got {self.ciphertext_len}")
        if self.num_clients < 2:
            raise InvalidArgumentError(f"num_clients must be >= 2, got {self.num_clients}")
        if not self.key_low < self.key_high:
            raise InvalidArgumentError(
                f"key_low must be below key_high, got [{self.key_low}, {self.key_high}]"
            )
        if self.hidden_dim < 1 or self.conv_channels < 1 or self.num_res_blocks < 1:
            raise InvalidArgumentError("hidden_dim, conv_channels and num_res_blocks must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidArgumentError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def upload_width(self) -> int:
        """Reals uploaded per plaintext scalar: the ciphertext plus its public key."""
        return self.ciphertext_len + 1
