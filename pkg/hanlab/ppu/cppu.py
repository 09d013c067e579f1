# HANLAB
# ***
# Collaborative privacy-preserving update

import logging
from typing import Dict, Tuple

from hanlab.ahe.bundle import ModelBundle
from hanlab.ahe.networks import weight_digest
from hanlab.ahe.ops import keygen
from hanlab.ppu.config import PpuConfig
from hanlab.ppu.datasets import Publication, publish
from hanlab.ppu.optimize import PpuReport, check_fidelity, optimize_models
from hanlab.ppu.sampling import sample_with_replacement, training_set_loss
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator
from hanlab.training.data import uniform_plaintexts
from hanlab.training.evaluation import evaluate_aggregation

logger = logging.getLogger(__name__)

CPPU_SALT = 0xC0


def cppu(bundle: ModelBundle, cfg: PpuConfig) -> Tuple[ModelBundle, PpuReport]:
    """
    Collaborative update: turn the public original encryptor into diverged private
    per-client encryptors while keeping the shared aggregator accurate.

    Every client publishes an initial noisy dataset. Then, for ``max_iterations``
    rounds, each client in turn samples a training set from the other clients' latest
    public datasets, optimises its encryptor together with the aggregator on the
    aggregation loss, and republishes a fresh noisy dataset encrypted with its updated
    encryptor. The aggregator is one module, so every update is immediately visible to
    all clients.

    Parameters
    ----------
    bundle : ModelBundle
        A trained bundle. A shared encryptor is personalized first.
    cfg : PpuConfig
        Noise, sizes, rounds and optimiser settings.

    Returns
    -------
    tuple of (ModelBundle, PpuReport)
        The updated bundle and the final public datasets.

    Raises
    ------
    GateFailureError
        If the post-update aggregation mean L1 exceeds ``cfg.max_agg_l1``.
    """
    print(format_stage_name("cppu"))
    if bundle.shared:
        bundle.personalize()
    ahe = bundle.cfg
    n = bundle.num_clients
    report = PpuReport("cppu", curves={f"client_{i}": [] for i in range(n)})

    print("    * PUBLISH INITIAL NOISY DATASETS")
    publications: Dict[int, Publication] = {}
    for i in range(n):
        generator = make_generator(cfg.seed, CPPU_SALT, i, 0)
        publications[i] = publish(bundle.encryptor(i), cfg.public_size, ahe, cfg.sigma, i, 0, generator)

    for t in range(1, cfg.max_iterations + 1):
        print(f"    * ROUND {t} OF {cfg.max_iterations}")
        for i in range(n):
            generator = make_generator(cfg.seed, CPPU_SALT, i, t)
            enc = bundle.encryptor(i)
            others = [publications[j].dataset for j in range(n) if j != i]
            m = uniform_plaintexts(cfg.private_size, ahe, generator)
            keys, _ = keygen(cfg.private_size, ahe, generator)
            ts = sample_with_replacement(others, m.m, keys.sk_a, keys.sk_b, generator, client_id=i)
            losses = optimize_models(
                [enc, bundle.aggregator],
                lambda: training_set_loss(enc, bundle.aggregator, ts, ahe),
                cfg,
                "cppu",
            )
            report.curves[f"client_{i}"].extend(losses)
            publications[i] = publish(enc, cfg.public_size, ahe, cfg.sigma, i, t, generator)
        logger.debug("cppu round %d done", t)

    report.public_datasets = [publications[i].dataset for i in range(n)]
    report.truths = {i: publications[i].x_true for i in range(n)}
    report.encryptor_digests = {i: weight_digest(bundle.encryptor(i)) for i in range(n)}
    report.aggregator_digest = weight_digest(bundle.aggregator)
    report.aggregation = evaluate_aggregation(bundle, cfg.eval_size, make_generator(cfg.seed, CPPU_SALT, 0xE7A1))
    print(f"      aggregation mean L1: {report.aggregation.mean_l1:.6f}")
    check_fidelity("cppu", report.aggregation, cfg)
    return bundle, report
