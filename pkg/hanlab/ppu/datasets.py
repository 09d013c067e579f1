# HANLAB
# ***
# Public datasets of the privacy-preserving update

import os
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import torch

from hanlab.ahe.config import AheConfig
from hanlab.ahe.ops import encrypt, keygen
from hanlab.ahe.types import DTYPE, CiphertextBatch, PublicKeyBatch
from hanlab.errors import InvalidArgumentError, NoiseFloorError
from hanlab.ppu.config import NOISE_FLOOR
from hanlab.tools.logging import log_records, read_records
from hanlab.training.data import uniform_plaintexts


@dataclass(frozen=True)
class PublicDatasetEntry:
    x_noisy: float
    pk: float
    c: Tuple[float, ...]


@dataclass
class PublicDataset:
    """
    A client's published ``(x_noisy, pk, c)`` triples.

    ``c`` was produced under fresh keys used for nothing else; ``x_noisy`` is the
    plaintext plus Gaussian noise of scale ``sigma``.
    """

    client_id: int
    round: int
    x_noisy: torch.Tensor
    pk: torch.Tensor
    c: torch.Tensor
    sigma: float

    def __post_init__(self):
        n = self.x_noisy.shape[0]
        if self.pk.shape != (n,) or self.c.dim() != 2 or self.c.shape[0] != n:
            raise InvalidArgumentError("x_noisy, pk and c must describe the same number of entries")

    def __len__(self) -> int:
        return self.x_noisy.shape[0]

    def __getitem__(self, k: int) -> PublicDatasetEntry:
        return PublicDatasetEntry(float(self.x_noisy[k]), float(self.pk[k]), tuple(self.c[k].tolist()))

    def __iter__(self) -> Iterator[PublicDatasetEntry]:
        for k in range(len(self)):
            yield self[k]

    def ciphertexts(self, index: Optional[torch.Tensor] = None) -> Tuple[CiphertextBatch, PublicKeyBatch]:
        if index is None:
            return CiphertextBatch(self.c), PublicKeyBatch(self.pk)
        return CiphertextBatch(self.c[index]), PublicKeyBatch(self.pk[index])

    def to_records(self) -> List[dict]:
        return [
            {"client_id": self.client_id, "round": self.round, "x_noisy": e.x_noisy, "pk": e.pk, "c": list(e.c)}
            for e in self
        ]


class Publication(NamedTuple):
    """A published dataset and the true plaintexts its publisher keeps private."""

    dataset: PublicDataset
    x_true: torch.Tensor


@torch.no_grad()
def publish(
    enc,
    size: int,
    cfg: AheConfig,
    sigma: float,
    client_id: int,
    round: int,
    generator: Optional[torch.Generator] = None,
) -> Publication:
    """
    Draw ``size`` fresh plaintexts and key pairs, encrypt them under ``enc`` and
    publish the ciphertexts with noise-perturbed plaintexts.

    There is no noise-free path: ``sigma`` must exceed the 0.01 floor.

    Parameters
    ----------
    enc : HanNetwork
        The publisher's current encryptor.
    size : int
        Entries to publish.
    cfg : AheConfig
        Scheme parameters.
    sigma : float
        Noise std.
    client_id, round : int
        Provenance stored with the dataset.
    generator : torch.Generator, optional
        Random stream for plaintexts, keys and noise.

    Returns
    -------
    Publication
    """
    if not sigma > NOISE_FLOOR:
        raise NoiseFloorError(f"publication noise sigma must exceed {NOISE_FLOOR}, got {sigma}", stage="ppu")
    if size < 1:
        raise InvalidArgumentError(f"public dataset size must be >= 1, got {size}")
    m = uniform_plaintexts(size, cfg, generator)
    keys, pk = keygen(size, cfg, generator)
    c = encrypt(enc, m, keys, cfg)
    noise = torch.randn(size, generator=generator, dtype=DTYPE) * sigma
    dataset = PublicDataset(client_id, round, m.m + noise, pk.pk.clone(), c.c.detach().cpu(), sigma)
    return Publication(dataset, m.m)


def write_public_datasets(datasets: Sequence[PublicDataset], path: str) -> str:
    """JSON lines ``{client_id, round, x_noisy, pk, c}``, client then entry order."""
    records = [r for ds in sorted(datasets, key=lambda d: d.client_id) for r in ds.to_records()]
    log_path, file_name = os.path.split(os.path.abspath(path))
    log_records(records, file_name, log_path=log_path, overwrite=True)
    return path


def read_public_datasets(path: str, sigma: float = float("nan")) -> List[PublicDataset]:
    grouped = {}
    for record in read_records(path):
        grouped.setdefault((record["client_id"], record["round"]), []).append(record)
    datasets = []
    for (client_id, round_), records in sorted(grouped.items()):
        datasets.append(
            PublicDataset(
                client_id,
                round_,
                torch.tensor([r["x_noisy"] for r in records], dtype=DTYPE),
                torch.tensor([r["pk"] for r in records], dtype=DTYPE),
                torch.tensor([r["c"] for r in records], dtype=DTYPE),
                sigma,
            )
        )
    return datasets
