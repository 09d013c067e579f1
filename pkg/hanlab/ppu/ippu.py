# HANLAB
# ***
# Independent privacy-preserving update

from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

from hanlab.ahe.bundle import ModelBundle
from hanlab.ahe.networks import weight_digest
from hanlab.ahe.ops import keygen
from hanlab.errors import FrozenWeightError, InvalidArgumentError
from hanlab.ppu.config import PpuConfig
from hanlab.ppu.datasets import PublicDataset
from hanlab.ppu.optimize import PpuReport, check_fidelity, optimize_models
from hanlab.ppu.sampling import sample_with_replacement, training_set_loss
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator
from hanlab.training.data import uniform_plaintexts
from hanlab.training.evaluation import evaluate_aggregation
from hanlab.training.stages import frozen

IPPU_SALT = 0x1F


def _update_client(bundle: ModelBundle, client: int, others: Sequence[PublicDataset], cfg: PpuConfig) -> List[float]:
    ahe = bundle.cfg
    enc = bundle.encryptor(client)
    losses = []
    for r in range(cfg.rounds_per_client):
        generator = make_generator(cfg.seed, IPPU_SALT, client, r)
        m = uniform_plaintexts(cfg.private_size, ahe, generator)
        keys, _ = keygen(cfg.private_size, ahe, generator)
        ts = sample_with_replacement(others, m.m, keys.sk_a, keys.sk_b, generator, client_id=client)
        losses.extend(
            optimize_models([enc], lambda: training_set_loss(enc, bundle.aggregator, ts, ahe), cfg, "ippu")
        )
    return losses


def ippu(bundle: ModelBundle, public_datasets: Sequence[PublicDataset], cfg: PpuConfig) -> Tuple[ModelBundle, PpuReport]:
    """
    Independent update: each client refines only its own encryptor against the frozen
    aggregator, using its private data and the other clients' final public datasets.
    Nothing new is published.

    Clients are independent and run on ``cfg.workers`` threads; each draws from its
    own random stream, so the result does not depend on the worker count.

    Parameters
    ----------
    bundle : ModelBundle
        A bundle after :func:`cppu`.
    public_datasets : sequence of PublicDataset
        The final public datasets of the collaborative update, one per client.
    cfg : PpuConfig
        Rounds and optimiser settings.

    Returns
    -------
    tuple of (ModelBundle, PpuReport)

    Raises
    ------
    FrozenWeightError
        If the aggregator changed.
    GateFailureError
        If the aggregation mean L1 exceeds ``cfg.max_agg_l1``.
    """
    print(format_stage_name("ippu"))
    if bundle.shared:
        raise InvalidArgumentError("ippu needs personalized encryptors; run cppu first")
    n = bundle.num_clients
    by_client = {ds.client_id: ds for ds in public_datasets}
    if sorted(by_client) != list(range(n)):
        raise InvalidArgumentError(f"expected one public dataset per client 0..{n - 1}, got {sorted(by_client)}")

    aggregator_digest = weight_digest(bundle.aggregator)
    others = {i: [by_client[j] for j in range(n) if j != i] for i in range(n)}

    print(f"    * UPDATE {n} ENCRYPTORS ({cfg.workers} WORKERS)")
    with frozen(bundle.aggregator):
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(_update_client, bundle, i, others[i], cfg) for i in range(n)]
                curves = [f.result() for f in futures]
        else:
            curves = [_update_client(bundle, i, others[i], cfg) for i in range(n)]

    if weight_digest(bundle.aggregator) != aggregator_digest:
        raise FrozenWeightError("ippu modified the aggregator")

    report = PpuReport(
        "ippu",
        public_datasets=list(public_datasets),
        curves={f"client_{i}": c for i, c in enumerate(curves)},
        encryptor_digests={i: weight_digest(bundle.encryptor(i)) for i in range(n)},
        aggregator_digest=aggregator_digest,
    )
    report.aggregation = evaluate_aggregation(bundle, cfg.eval_size, make_generator(cfg.seed, IPPU_SALT, 0xE7A1))
    print(f"      aggregation mean L1: {report.aggregation.mean_l1:.6f}")
    check_fidelity("ippu", report.aggregation, cfg)
    return bundle, report
