from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch

from hanlab.ahe.ops import aggregate, encrypt
from hanlab.ahe.types import DTYPE, CiphertextBatch, KeyBatch, PlaintextBatch, PublicKeyBatch
from hanlab.errors import InvalidArgumentError
from hanlab.losses import mse
from hanlab.ppu.datasets import PublicDataset


@dataclass
class TrainingSet:
    """
    Samples of one client's update round.

    Row ``k`` holds the client's own ``(sk_a[k], sk_b[k])`` and plaintext ``x_own[k]``,
    one ``(pk, c)`` pair drawn from every other client's public dataset, and the target
    ``y[k] = x_own[k] + sum_j x_j^pub``.
    """

    client_id: int
    x_own: torch.Tensor
    keys: KeyBatch
    other_ids: List[int]
    others_pk: torch.Tensor
    others_c: torch.Tensor
    y: torch.Tensor

    def __len__(self) -> int:
        return self.y.shape[0]


def sample_with_replacement(
    others: Sequence[PublicDataset],
    x_own,
    sk1,
    sk2,
    generator: Optional[torch.Generator] = None,
    client_id: int = 0,
) -> TrainingSet:
    """
    Pair each own plaintext with one entry drawn uniformly, with replacement, from
    every other client's public dataset.

    Parameters
    ----------
    others : sequence of PublicDataset
        Public datasets of the other clients.
    x_own, sk1, sk2 : array-like
        Own plaintexts and private keys, equal length.
    generator : torch.Generator, optional
        Random stream for the draws.
    client_id : int, optional
        The sampling client's slot.

    Returns
    -------
    TrainingSet
        ``len(x_own)`` samples.

    Raises
    ------
    InvalidArgumentError
        On unequal input lengths, no other datasets, or an empty one.
    """
    x_own = torch.as_tensor(x_own, dtype=DTYPE)
    keys = KeyBatch(torch.as_tensor(sk1, dtype=DTYPE), torch.as_tensor(sk2, dtype=DTYPE))
    if x_own.dim() != 1 or len(x_own) != len(keys):
        raise InvalidArgumentError(f"x_own and keys must be equal-length vectors, got {len(x_own)} / {len(keys)}")
    if not others:
        raise InvalidArgumentError("no other public datasets to sample from")
    n = len(x_own)
    pks, cs = [], []
    y = x_own.clone()
    for ds in others:
        if len(ds) == 0:
            raise InvalidArgumentError(f"public dataset of client {ds.client_id} is empty")
        index = torch.randint(len(ds), (n,), generator=generator)
        pks.append(ds.pk[index])
        cs.append(ds.c[index])
        y = y + ds.x_noisy[index]
    return TrainingSet(
        client_id=client_id,
        x_own=x_own,
        keys=keys,
        other_ids=[ds.client_id for ds in others],
        others_pk=torch.stack(pks, dim=1),
        others_c=torch.stack(cs, dim=1),
        y=y,
    )


def training_set_loss(enc, agg, ts: TrainingSet, cfg) -> torch.Tensor:
    """
    Aggregation MSE over a training set: the client's fresh ciphertext goes in its own
    slot, the sampled public ``(pk, c)`` pairs in the slots of their publishers.
    """
    ciphertexts: List[Optional[CiphertextBatch]] = [None] * cfg.num_clients
    pks: List[Optional[PublicKeyBatch]] = [None] * cfg.num_clients
    ciphertexts[ts.client_id] = encrypt(enc, PlaintextBatch(ts.x_own, cfg.psi), ts.keys, cfg)
    pks[ts.client_id] = ts.keys.public()
    device = ciphertexts[ts.client_id].c.device
    for j, other in enumerate(ts.other_ids):
        ciphertexts[other] = CiphertextBatch(ts.others_c[:, j].to(device))
        pks[other] = PublicKeyBatch(ts.others_pk[:, j])
    if any(c is None for c in ciphertexts):
        raise InvalidArgumentError("training set does not fill every aggregator slot")
    m_agg = aggregate(agg, ciphertexts, pks)
    return mse(m_agg, ts.y.to(m_agg.device))
