from dataclasses import dataclass
from typing import List, Optional

import torch

from hanlab.ahe.config import AheConfig
from hanlab.ahe.ops import keygen
from hanlab.ahe.types import DTYPE, KeyBatch, PlaintextBatch
from hanlab.errors import InvalidArgumentError


@dataclass
class ClientBatches:
    """One training step's worth of data: plaintexts and fresh keys per client, plus the exact sums."""

    plaintexts: List[PlaintextBatch]
    keys: List[KeyBatch]
    targets: torch.Tensor

    def __len__(self) -> int:
        return self.targets.shape[0]


def uniform_plaintexts(batch_size: int, cfg: AheConfig, generator: Optional[torch.Generator] = None) -> PlaintextBatch:
    values = (torch.rand(batch_size, generator=generator, dtype=DTYPE) * 2 - 1) * cfg.psi
    return PlaintextBatch(values, cfg.psi, 0)


def gen_batch(batch_size: int, cfg: AheConfig, generator: Optional[torch.Generator] = None) -> ClientBatches:
    """
    Plaintexts drawn i.i.d. from ``U(-psi, psi)`` for every client, a fresh key pair per
    scalar, and the element-wise sums as targets.
    """
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    plaintexts, keys = [], []
    for _ in range(cfg.num_clients):
        plaintexts.append(uniform_plaintexts(batch_size, cfg, generator))
        keys.append(keygen(batch_size, cfg, generator)[0])
    targets = torch.stack([p.m for p in plaintexts]).sum(dim=0)
    return ClientBatches(plaintexts, keys, targets)
