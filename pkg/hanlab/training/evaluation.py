from typing import Dict, Optional

import pandas as pd
import torch

from hanlab.ahe.ops import aggregate, attack_forward, encrypt, keygen
from hanlab.losses import EvalStats, l1_stats
from hanlab.training.data import gen_batch, uniform_plaintexts

EVAL_CHUNK = 65536

TABLE_COLUMNS = {
    ("pk", "standard"): "Atk 1",
    ("pk", "double"): "Atk 1 (Dbl)",
    ("nopk", "standard"): "Atk 2",
    ("nopk", "double"): "Atk 2 (Dbl)",
}


def _chunks(n: int, chunk: int):
    start = 0
    while start < n:
        yield min(chunk, n - start)
        start += chunk


@torch.no_grad()
def evaluate_aggregation(bundle, n: int, generator: Optional[torch.Generator] = None) -> EvalStats:
    """L1 statistics of ``Agg(Enc(m_1), ..., Enc(m_N))`` against the exact sums over ``n`` fresh scalars."""
    outputs, targets = [], []
    for size in _chunks(n, EVAL_CHUNK):
        batch = gen_batch(size, bundle.cfg, generator)
        ciphertexts = [
            encrypt(bundle.encryptor(i), p, k, bundle.cfg)
            for i, (p, k) in enumerate(zip(batch.plaintexts, batch.keys))
        ]
        m_agg = aggregate(bundle.aggregator, ciphertexts, [k.public() for k in batch.keys])
        outputs.append(m_agg.cpu())
        targets.append(batch.targets)
    return l1_stats(torch.cat(outputs), torch.cat(targets))


@torch.no_grad()
def evaluate_attacker(enc, atk, cfg, n: int, generator: Optional[torch.Generator] = None) -> EvalStats:
    """L1 statistics of an attacker's guesses on ``n`` fresh ciphertexts produced by ``enc``."""
    guesses, truths = [], []
    for size in _chunks(n, EVAL_CHUNK):
        m = uniform_plaintexts(size, cfg, generator)
        keys, pk = keygen(size, cfg, generator)
        c = encrypt(enc, m, keys, cfg)
        guess = attack_forward(atk, c, pk if atk.role == "attacker_pk" else None)
        guesses.append(guess.cpu())
        truths.append(m.m)
    return l1_stats(torch.cat(guesses), torch.cat(truths))


def security_table(aggregation: EvalStats, attackers: Dict[str, EvalStats]) -> pd.DataFrame:
    """
    Average / maximum difference table with one column for the aggregation and one per
    attacker variant. Attacker statistics of several clients are averaged per variant.

    Parameters
    ----------
    aggregation : EvalStats
        Aggregation fidelity.
    attackers : dict of str -> EvalStats
        Keyed by attacker slot name, e.g. ``attacker_0_pk_standard``.
    """
    columns = {"HANs": [aggregation.mean_l1, aggregation.max_l1]}
    for (kind, depth), label in TABLE_COLUMNS.items():
        picked = [s for name, s in attackers.items() if name.endswith(f"_{kind}_{depth}")]
        if picked:
            columns[label] = [
                sum(s.mean_l1 for s in picked) / len(picked),
                max(s.max_l1 for s in picked),
            ]
    return pd.DataFrame(columns, index=["Average", "Maximum differences"])
