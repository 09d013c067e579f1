# HANLAB
# ***
# Training stages: pre-training, security enhancement, assessment, balance, alignment

import math
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import torch

from hanlab.ahe.networks import residual_block_parameter_count, set_trainable, weight_digest
from hanlab.ahe.ops import encrypt, keygen
from hanlab.errors import FrozenWeightError, GateFailureError, NonFiniteError, StageFailureError
from hanlab.losses import (
    EvalStats,
    ObjectiveTerms,
    aggregation_loss,
    attacker_loss,
    attacker_loss_pk,
    compose_final,
    compose_pretrain,
    guess_loss,
    hinge,
    objective_terms,
)
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator
from hanlab.training.config import SecurityGate, TrainConfig
from hanlab.training.convergence import PlateauDetector
from hanlab.training.data import gen_batch, uniform_plaintexts
from hanlab.training.evaluation import evaluate_aggregation, evaluate_attacker

logger = logging.getLogger(__name__)

STAGE_NAMES = {
    1: "computational_pretrain",
    2: "security_enhancement",
    3: "security_assessment",
    4: "balance_adjustment",
    5: "aggregation_alignment",
}


@dataclass
class GateVerdict:
    passed: bool
    attempts: int
    gate: SecurityGate
    min_attacker_l1: float
    agg_mean_l1: float
    failures: List[str] = field(default_factory=list)


@dataclass
class StageReport:
    """
    Outcome of one training stage.

    ``curves`` holds one loss curve per trained model; ``hinges`` the per-client hinge
    terms of the security-enhancement stage; ``gate`` is only set by the balance stage.
    """

    stage: int
    name: str
    curves: Dict[str, List[float]] = field(default_factory=dict)
    hinges: Dict[str, List[float]] = field(default_factory=dict)
    initial_stats: Dict[str, EvalStats] = field(default_factory=dict)
    final_stats: Dict[str, EvalStats] = field(default_factory=dict)
    gate: Optional[GateVerdict] = None
    plateau_steps: Dict[str, Optional[int]] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_records(self) -> List[dict]:
        """Flatten curves into ``{stage, step, loss_name, value}`` records."""
        records = []
        for source in (self.curves, self.hinges):
            for loss_name, values in source.items():
                for step, value in enumerate(values):
                    records.append({"stage": self.stage, "step": step, "loss_name": loss_name, "value": value})
        return records


# * HELPERS

def make_optimizer(module, lr: float, cfg: TrainConfig, steps: int):
    """A private AdamW optimizer and its scheduler for one model."""
    optimizer = torch.optim.AdamW(module.parameters(), lr=lr, weight_decay=cfg.weight_decay)
    if cfg.scheduler == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(steps, 1))
    else:
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda _: 1.0)
    return optimizer, scheduler


@contextmanager
def frozen(*modules):
    """Temporarily stop gradients into ``modules``, restoring each parameter's flag afterwards."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for m in modules:
        set_trainable(m, False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def digests(named_modules: Mapping[str, torch.nn.Module]) -> Dict[str, str]:
    return {name: weight_digest(m) for name, m in named_modules.items()}


def verify_frozen(before: Dict[str, str], named_modules: Mapping[str, torch.nn.Module], stage) -> None:
    after = digests(named_modules)
    changed = [name for name in before if before[name] != after[name]]
    if changed:
        raise FrozenWeightError(f"stage {stage} modified frozen models: {changed}")


def check_finite(stage: int, step: int, values: Mapping[str, float]) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise StageFailureError(
            f"stage {stage} diverged at step {step}: {sorted(bad)}",
            stage=stage,
            diagnostics={"step": step, "values": dict(values)},
        )


@contextmanager
def guard_divergence(stage: int):
    """Re-raise non-finite tensors met while training ``stage`` as a stage failure."""
    try:
        yield
    except NonFiniteError as exc:
        raise StageFailureError(f"stage {stage} diverged: {exc}", stage=stage, diagnostics={"error": str(exc)}) from exc


def _encryptor_names(bundle) -> Dict[str, torch.nn.Module]:
    if bundle.shared:
        return {"encryptor": bundle.encryptor(0)}
    return {f"encryptor_{i}": enc for i, enc in enumerate(bundle.encryptors)}


def _standard_attackers(bundle):
    return [(slot, net) for slot, net in bundle.iter_attackers() if slot.depth == "standard"]


def _attacker_update(bundle, optimizers, batch_size, generator) -> Dict[str, float]:
    """One step for every standard attacker against its client's current encryptor."""
    cfg = bundle.cfg
    losses = {}
    traffic = {}
    with torch.no_grad():
        for client in range(bundle.num_clients):
            m = uniform_plaintexts(batch_size, cfg, generator)
            keys, pk = keygen(batch_size, cfg, generator)
            traffic[client] = (m, keys, encrypt(bundle.encryptor(client), m, keys, cfg))
    for slot, atk in _standard_attackers(bundle):
        m, keys, c = traffic[slot.client]
        optimizer, scheduler = optimizers[slot.name]
        optimizer.zero_grad(set_to_none=True)
        loss_fn = attacker_loss_pk if slot.with_pk else attacker_loss
        loss = loss_fn(bundle.encryptor(slot.client), atk, m, keys, cfg, ciphertexts=c)
        loss.backward()
        optimizer.step()
        losses[slot.name] = float(loss.detach())
    return losses


def _step_schedulers(optimizers, names) -> None:
    for name in names:
        optimizers[name][1].step()


def _adversarial_stage(
    bundle,
    cfg: TrainConfig,
    stage: int,
    steps: int,
    objective: Callable[[ObjectiveTerms], torch.Tensor],
    record_hinges: bool,
) -> StageReport:
    generator = make_generator(cfg.seed, stage)
    eval_generator = make_generator(cfg.seed, stage, 0xE7A1)
    report = StageReport(stage, STAGE_NAMES[stage])
    report.initial_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)

    encryptors = _encryptor_names(bundle)
    attackers = _standard_attackers(bundle)
    optimizers = {name: make_optimizer(m, cfg.lr, cfg, steps) for name, m in encryptors.items()}
    optimizers["aggregator"] = make_optimizer(bundle.aggregator, cfg.lr, cfg, steps)
    attacker_steps = steps * cfg.attacker_steps_per_enc_step
    for slot, atk in attackers:
        optimizers[slot.name] = make_optimizer(atk, cfg.effective_attacker_lr, cfg, attacker_steps)

    model_names = list(encryptors) + ["aggregator"]
    report.curves = {name: [] for name in model_names + [slot.name for slot, _ in attackers]}

    with guard_divergence(stage):
        for step in range(steps):
            for _ in range(cfg.attacker_steps_per_enc_step):
                attacker_losses = _attacker_update(bundle, optimizers, cfg.batch_size, generator)
                _step_schedulers(optimizers, attacker_losses)

            batch = gen_batch(cfg.batch_size, bundle.cfg, generator)
            with frozen(*[atk for _, atk in attackers]):
                terms = objective_terms(bundle, batch.plaintexts, batch.keys)
                value = objective(terms)
                for name in model_names:
                    optimizers[name][0].zero_grad(set_to_none=True)
                value.backward()
                for name in model_names:
                    optimizers[name][0].step()
            _step_schedulers(optimizers, model_names)

            agg_value = float(terms.aggregation.detach())
            obj_value = float(value.detach())
            check_finite(stage, step, {"objective": obj_value, "aggregation": agg_value, **attacker_losses})
            for name in encryptors:
                report.curves[name].append(obj_value)
            report.curves["aggregator"].append(agg_value)
            for name, v in attacker_losses.items():
                report.curves[name].append(v)
            if record_hinges:
                gamma = cfg.losses.gamma
                for client, (nopk, pk) in terms.attackers.items():
                    report.hinges.setdefault(f"hinge_{client}_nopk", []).append(float(hinge(nopk.detach(), gamma)))
                    report.hinges.setdefault(f"hinge_{client}_pk", []).append(float(hinge(pk.detach(), gamma)))

    report.final_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)
    for slot, atk in attackers:
        report.final_stats[slot.name] = evaluate_attacker(
            bundle.encryptor(slot.client), atk, bundle.cfg, cfg.eval_size, eval_generator
        )
    print(f"      aggregation mean L1: {report.final_stats['aggregation'].mean_l1:.6f}")
    return report


def encryptor_traffic(enc, ahe_cfg):
    """Traffic sampler: fresh plaintexts and keys encrypted under ``enc``."""

    @torch.no_grad()
    def sample(batch_size: int, generator: torch.Generator):
        m = uniform_plaintexts(batch_size, ahe_cfg, generator)
        keys, pk = keygen(batch_size, ahe_cfg, generator)
        return m.m, pk, encrypt(enc, m, keys, ahe_cfg)

    return sample


def fit_attackers(
    attackers: Mapping[str, torch.nn.Module],
    traffic: Callable,
    cfg: TrainConfig,
    max_steps: int,
    generator: torch.Generator,
    stage: int = 3,
):
    """
    Train each attacker on sampled traffic until its loss plateaus or ``max_steps``
    is reached.

    Parameters
    ----------
    attackers : dict of str -> HanNetwork
        Attackers to train, keyed by name.
    traffic : callable
        ``traffic(batch_size, generator) -> (m, pk, c)`` with plaintext tensor ``m``,
        a PublicKeyBatch and a CiphertextBatch.
    cfg : TrainConfig
        Learning rate, batch size and plateau settings.

    Returns
    -------
    tuple of (dict of curves, dict of plateau steps)
    """
    curves, plateau_steps = {}, {}
    for name, atk in attackers.items():
        optimizer, scheduler = make_optimizer(atk, cfg.effective_attacker_lr, cfg, max_steps)
        detector = PlateauDetector(cfg.plateau_window, cfg.plateau_tol)
        curve = []
        with guard_divergence(stage):
            for step in range(max_steps):
                m, pk, c = traffic(cfg.batch_size, generator)
                optimizer.zero_grad(set_to_none=True)
                loss = guess_loss(atk, c, m, pk if atk.role == "attacker_pk" else None)
                loss.backward()
                optimizer.step()
                scheduler.step()
                value = float(loss.detach())
                check_finite(stage, step, {name: value})
                curve.append(value)
                if detector.update(value):
                    logger.info("%s plateaued at step %d", name, step)
                    break
        curves[name] = curve
        plateau_steps[name] = detector.fired_at
    return curves, plateau_steps


# * STAGES

def pretrain_cap(ahe_cfg, cfg: TrainConfig) -> float:
    """Clamp of each attacker term in stage 1; an attacker guessing zero scores ``psi**2 / 3``."""
    if cfg.pretrain_attacker_cap is not None:
        return cfg.pretrain_attacker_cap
    return ahe_cfg.psi ** 2 / 3


def stage1_pretrain(bundle, cfg: TrainConfig) -> StageReport:
    """
    Computational pre-training: attackers minimise their losses while encryptor and
    aggregator minimise ``aggregation - w * mean(min(attacker loss, cap))``.

    The attacker terms are averaged over the slots and clamped at ``pretrain_cap`` so
    the objective is bounded below.
    """
    print(format_stage_name("stage 1 " + STAGE_NAMES[1]))
    print("    * ALTERNATE ATTACKER / ENCRYPTOR STEPS")
    cap = pretrain_cap(bundle.cfg, cfg)

    def objective(terms: ObjectiveTerms) -> torch.Tensor:
        values = terms.attacker_values()
        return compose_pretrain(terms.aggregation, values, cfg.pretrain_attacker_weight / len(values), cap)

    return _adversarial_stage(bundle, cfg, 1, cfg.stage1_steps, objective, record_hinges=False)


def stage2_security(bundle, cfg: TrainConfig) -> StageReport:
    """
    Security enhancement: the encryptor objective becomes
    ``lambda * aggregation + sum(max(0, gamma - attacker loss))``.
    """
    print(format_stage_name("stage 2 " + STAGE_NAMES[2]))
    print("    * ADVERSARIAL TRAINING WITH HINGE TERMS")
    gamma, lambda_ = cfg.losses.gamma, cfg.losses.lambda_
    return _adversarial_stage(
        bundle, cfg, 2, cfg.stage2_steps,
        lambda terms: compose_final(terms.aggregation, terms.attacker_values(), gamma, lambda_),
        record_hinges=True,
    )


def stage3_assess(bundle, cfg: TrainConfig, salt: int = 0) -> StageReport:
    """
    Security assessment: encryptors and aggregator are frozen and all four attacker
    variants of every client are trained to convergence. Attackers are warm-started
    from their current weights.
    """
    print(format_stage_name("stage 3 " + STAGE_NAMES[3]))
    frozen_models = dict(_encryptor_names(bundle), aggregator=bundle.aggregator)
    before = digests(frozen_models)
    extra = bundle.cfg.num_res_blocks * residual_block_parameter_count(bundle.cfg.conv_channels)
    report = StageReport(3, STAGE_NAMES[3], notes=[
        "attackers warm-started from their previous weights",
        f"double-depth attackers carry {extra} extra parameters",
    ])
    eval_generator = make_generator(cfg.seed, 3, salt, 0xE7A1)

    with frozen(*frozen_models.values()):
        for client in range(bundle.num_clients):
            print(f"    * TRAIN ATTACKERS OF CLIENT {client}")
            enc = bundle.encryptor(client)
            attackers = {slot.name: net for slot, net in bundle.client_attackers(client).items()}
            generator = make_generator(cfg.seed, 3, salt, client)
            curves, plateau_steps = fit_attackers(
                attackers, encryptor_traffic(enc, bundle.cfg), cfg, cfg.stage3_max_steps, generator
            )
            report.curves.update(curves)
            report.plateau_steps.update(plateau_steps)
            for name, atk in attackers.items():
                report.final_stats[name] = evaluate_attacker(enc, atk, bundle.cfg, cfg.eval_size, eval_generator)
        report.final_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)

    verify_frozen(before, frozen_models, 3)
    return report


def judge_gate(gate: SecurityGate, stats: Mapping[str, EvalStats], attempts: int) -> GateVerdict:
    """Pass iff every attacker reaches ``min_attacker_l1`` and the aggregation stays within ``max_agg_l1``."""
    attacker_stats = {k: v for k, v in stats.items() if k.startswith("attacker_")}
    failures = [
        f"{name} mean L1 {s.mean_l1:.6f} < {gate.min_attacker_l1}"
        for name, s in attacker_stats.items()
        if s.mean_l1 < gate.min_attacker_l1
    ]
    agg = stats["aggregation"].mean_l1
    if agg > gate.max_agg_l1:
        failures.append(f"aggregation mean L1 {agg:.6f} > {gate.max_agg_l1}")
    min_attacker = min((s.mean_l1 for s in attacker_stats.values()), default=float("inf"))
    return GateVerdict(not failures, attempts, gate, min_attacker, agg, failures)


def balance_finetune(bundle, cfg: TrainConfig, lambda_: float, attempt: int) -> Dict[str, List[float]]:
    """
    Small-scale accuracy fine-tune of encryptors and aggregator against frozen attackers.

    The objective is ``lambda_ * aggregation + sum(max(0, gamma - attacker loss))``, so a
    larger ``lambda_`` trades attacker resistance for aggregation accuracy.
    """
    generator = make_generator(cfg.seed, 4, attempt)
    encryptors = _encryptor_names(bundle)
    trained = dict(encryptors, aggregator=bundle.aggregator)
    optimizers = {name: make_optimizer(m, cfg.lr, cfg, cfg.stage4_steps) for name, m in trained.items()}
    curves = {name: [] for name in trained}
    attackers = [net for _, net in bundle.iter_attackers()]
    gamma = cfg.losses.gamma
    with guard_divergence(4):
        for step in range(cfg.stage4_steps):
            batch = gen_batch(cfg.batch_size, bundle.cfg, generator)
            with frozen(*attackers):
                terms = objective_terms(bundle, batch.plaintexts, batch.keys)
                value = compose_final(terms.aggregation, terms.attacker_values(), gamma, lambda_)
                for opt, _ in optimizers.values():
                    opt.zero_grad(set_to_none=True)
                value.backward()
                for opt, sched in optimizers.values():
                    opt.step()
                    sched.step()
            v = float(terms.aggregation.detach())
            check_finite(4, step, {"aggregation": v, "objective": float(value.detach())})
            for name in trained:
                curves[name].append(v)
    return curves


def balance_attempt(bundle, cfg: TrainConfig, report: StageReport, lambda_: float, attempt: int) -> StageReport:
    """
    One balance-adjustment attempt: accuracy fine-tune followed by a fresh security
    assessment. Curves are appended to ``report`` and its final statistics replaced.
    """
    print(format_stage_name("stage 4 " + STAGE_NAMES[4]))
    print(f"    * FINE-TUNE (attempt {attempt + 1}, lambda {lambda_:g})")
    curves = balance_finetune(bundle, cfg, lambda_, attempt)
    for name, values in curves.items():
        report.curves.setdefault(name, []).extend(values)
    assessment = stage3_assess(bundle, cfg, salt=100 + attempt)
    report.final_stats = assessment.final_stats
    report.plateau_steps.update(assessment.plateau_steps)
    return report


def security_gate(report: StageReport, gate: SecurityGate, attempts: int) -> GateVerdict:
    """Judge the latest attempt of ``report`` and record the verdict on it."""
    verdict = judge_gate(gate, report.final_stats, attempts)
    report.gate = verdict
    print(f"    * SECURITY GATE: {'PASS' if verdict.passed else 'FAIL'}")
    if not verdict.passed:
        logger.warning("security gate failed (attempt %d): %s", attempts, "; ".join(verdict.failures))
    return verdict


def next_lambda(verdict: GateVerdict, lambda_: float, cfg: TrainConfig) -> float:
    """Grow the aggregation weight when the gate failed on aggregation accuracy."""
    if verdict.agg_mean_l1 > verdict.gate.max_agg_l1:
        return lambda_ * cfg.lambda_growth
    return lambda_


def new_balance_report(bundle, cfg: TrainConfig) -> StageReport:
    report = StageReport(4, STAGE_NAMES[4])
    eval_generator = make_generator(cfg.seed, 4, 0xE7A1)
    report.initial_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)
    return report


def stage4_balance(bundle, cfg: TrainConfig, gates: Optional[Sequence[SecurityGate]] = None) -> StageReport:
    """
    Performance/security balance: fine-tune for accuracy, then re-run the assessment
    as a gate. A failed gate repeats the adjustment until ``max_gate_retries`` is spent.

    Parameters
    ----------
    gates : sequence of SecurityGate, optional
        Gate used on each attempt (the last one repeats). Defaults to ``cfg.security_gate``.

    Raises
    ------
    GateFailureError
        If no attempt passes.
    """
    gates = list(gates) if gates else [cfg.security_gate]
    report = new_balance_report(bundle, cfg)
    lambda_ = cfg.losses.lambda_

    for attempt in range(cfg.max_gate_retries + 1):
        balance_attempt(bundle, cfg, report, lambda_, attempt)
        verdict = security_gate(report, gates[min(attempt, len(gates) - 1)], attempt + 1)
        if verdict.passed:
            return report
        lambda_ = next_lambda(verdict, lambda_, cfg)

    raise GateFailureError(
        f"security gate failed after {cfg.max_gate_retries + 1} attempts",
        stage=4,
        diagnostics={"failures": report.gate.failures},
    )


def stage5_align(bundle, cfg: TrainConfig) -> StageReport:
    """
    Aggregation alignment: encryptors are frozen and only the aggregator is trained on
    the aggregation loss until it plateaus.
    """
    print(format_stage_name("stage 5 " + STAGE_NAMES[5]))
    print("    * TRAIN AGGREGATOR")
    generator = make_generator(cfg.seed, 5)
    eval_generator = make_generator(cfg.seed, 5, 0xE7A1)
    encryptors = _encryptor_names(bundle)
    before = digests(encryptors)
    report = StageReport(5, STAGE_NAMES[5])
    report.initial_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)

    optimizer, scheduler = make_optimizer(bundle.aggregator, cfg.lr, cfg, cfg.stage5_max_steps)
    detector = PlateauDetector(cfg.plateau_window, cfg.plateau_tol)
    curve = []
    attackers = [net for _, net in bundle.iter_attackers()]
    with frozen(*encryptors.values(), *attackers):
        with guard_divergence(5):
            for step in range(cfg.stage5_max_steps):
                batch = gen_batch(cfg.batch_size, bundle.cfg, generator)
                optimizer.zero_grad(set_to_none=True)
                loss = aggregation_loss(bundle, batch.plaintexts, batch.keys)
                loss.backward()
                optimizer.step()
                scheduler.step()
                value = float(loss.detach())
                check_finite(5, step, {"aggregation": value})
                curve.append(value)
                if detector.update(value):
                    break

    verify_frozen(before, encryptors, 5)
    report.curves["aggregator"] = curve
    report.plateau_steps["aggregator"] = detector.fired_at
    report.final_stats["aggregation"] = evaluate_aggregation(bundle, cfg.eval_size, eval_generator)
    print(f"      aggregation mean L1: {report.final_stats['aggregation'].mean_l1:.6f}")
    return report
