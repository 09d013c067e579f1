from dataclasses import dataclass
from typing import Any, Dict

from hanlab.ahe.config import AheConfig
from hanlab.errors import InvalidArgumentError

BYTES_PER_FLOAT = 4


@dataclass(frozen=True)
class CommEstimate:
    """
    One-round upload size of one client.

    HANs sends ``L`` ciphertext floats plus one public key per parameter; the plain
    baseline sends one float32 per parameter.
    """

    model_size: int
    ciphertext_len: int
    bytes_hans: int
    bytes_plain: int

    @property
    def ratio(self) -> float:
        return self.bytes_hans / self.bytes_plain

    @property
    def mib_hans(self) -> float:
        return self.bytes_hans / 2 ** 20

    @property
    def mib_plain(self) -> float:
        return self.bytes_plain / 2 ** 20

    def to_record(self) -> Dict[str, Any]:
        return {
            "model_size": self.model_size,
            "ciphertext_len": self.ciphertext_len,
            "bytes_hans": self.bytes_hans,
            "bytes_plain": self.bytes_plain,
            "ratio": self.ratio,
        }


def comm_estimate(model_size: int, cfg: AheConfig) -> CommEstimate:
    """
    Closed-form communication cost: ``model_size * (L + 1) * 4`` bytes against ``model_size * 4``.

    Examples
    --------
    >>> comm_estimate(1, AheConfig(ciphertext_len=28)).bytes_hans
    116
    """
    if model_size < 1:
        raise InvalidArgumentError(f"model_size must be >= 1, got {model_size}")
    return CommEstimate(
        model_size=int(model_size),
        ciphertext_len=cfg.ciphertext_len,
        bytes_hans=int(model_size) * cfg.upload_width * BYTES_PER_FLOAT,
        bytes_plain=int(model_size) * BYTES_PER_FLOAT,
    )
