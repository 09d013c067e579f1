from dataclasses import dataclass, field
from typing import Optional

from hanlab.errors import InvalidArgumentError
from hanlab.losses import LossConfig


@dataclass
class SecurityGate:
    """
    Stage-4 acceptance rule: every attacker's mean L1 must reach ``min_attacker_l1``
    and the aggregation mean L1 must stay within ``max_agg_l1``.
    """

    min_attacker_l1: float = 0.05
    max_agg_l1: float = 0.01

    def __post_init__(self):
        if self.min_attacker_l1 < 0 or self.max_agg_l1 < 0:
            raise InvalidArgumentError("security gate thresholds must be nonnegative")


@dataclass
class TrainConfig:
    """
    Configuration of the five-stage training process.

    Parameters
    ----------
    lr : float
        AdamW learning rate.
    weight_decay : float
        AdamW weight decay.
    scheduler : str
        ``cosine`` (cosine annealing over the stage's step budget) or ``constant``.
    stage1_steps, stage2_steps, stage4_steps : int
        Encryptor steps of the pre-training, security-enhancement and balance stages.
    stage3_max_steps, stage5_max_steps : int
        Upper bounds of the assessment and alignment stages, which otherwise stop at a plateau.
    batch_size : int
        Plaintext scalars per client per step.
    eval_size : int
        Held-out scalars used for every stage's final statistics.
    attacker_steps_per_enc_step : int
        Attacker updates between two encryptor/aggregator updates.
    attacker_lr : float, optional
        Learning rate of attacker optimizers. Defaults to ``lr``.
    plateau_window : int
        Window of the plateau detector.
    plateau_tol : float
        Relative improvement below which a loss is considered converged.
    pretrain_attacker_weight : float
        Total weight of the attacker terms in the pre-training objective, shared evenly
        between the attacker slots.
    pretrain_attacker_cap : float, optional
        Upper clamp of each attacker term in the pre-training objective. Defaults to
        ``psi**2 / 3``, the loss of an attacker that always guesses zero.
    security_gate : SecurityGate
        Stage-4 gate.
    max_gate_retries : int
        Extra balance-adjustment rounds allowed after a failed gate.
    lambda_growth : float
        Factor applied to ``losses.lambda_`` when a gate fails on aggregation accuracy.
    losses : LossConfig
        ``gamma`` and ``lambda_``.
    seed : int
        Seed of every per-stage random stream.
    """

    lr: float = 1e-5
    weight_decay: float = 1e-6
    scheduler: str = "cosine"
    stage1_steps: int = 20000
    stage2_steps: int = 20000
    stage3_max_steps: int = 20000
    stage4_steps: int = 2000
    stage5_max_steps: int = 20000
    batch_size: int = 4096
    eval_size: int = 100000
    attacker_steps_per_enc_step: int = 2
    attacker_lr: Optional[float] = None
    plateau_window: int = 200
    plateau_tol: float = 1e-3
    pretrain_attacker_weight: float = 1.0
    pretrain_attacker_cap: Optional[float] = None
    security_gate: SecurityGate = field(default_factory=SecurityGate)
    max_gate_retries: int = 3
    lambda_growth: float = 2.0
    losses: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.security_gate, dict):
            self.security_gate = SecurityGate(**self.security_gate)
        if isinstance(self.losses, dict):
            self.losses = LossConfig(**self.losses)
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if self.attacker_lr is not None and not self.attacker_lr > 0:
            raise InvalidArgumentError(f"attacker_lr must be > 0, got {self.attacker_lr}")
        if self.scheduler not in ("cosine", "constant"):
            raise InvalidArgumentError(f"unknown scheduler {self.scheduler!r}")
        for name in (
            "stage1_steps", "stage2_steps", "stage3_max_steps", "stage4_steps", "stage5_max_steps",
            "batch_size", "eval_size", "attacker_steps_per_enc_step", "plateau_window",
        ):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_gate_retries < 0:
            raise InvalidArgumentError("max_gate_retries must be >= 0")
        if self.lambda_growth < 1:
            raise InvalidArgumentError("lambda_growth must be >= 1")
        if self.pretrain_attacker_weight < 0:
            raise InvalidArgumentError("pretrain_attacker_weight must be >= 0")
        if self.pretrain_attacker_cap is not None and not self.pretrain_attacker_cap > 0:
            raise InvalidArgumentError("pretrain_attacker_cap must be > 0")

    @property
    def effective_attacker_lr(self) -> float:
        return self.attacker_lr if self.attacker_lr is not None else self.lr

    @classmethod
    def micro(cls, **overrides) -> "TrainConfig":
        """Desk-scale budget: minutes on a CPU."""
        params = dict(
            lr=1e-3,
            stage1_steps=2000,
            stage2_steps=1000,
            stage3_max_steps=1000,
            stage4_steps=300,
            stage5_max_steps=4000,
            batch_size=256,
            eval_size=4096,
            attacker_steps_per_enc_step=2,
            plateau_window=200,
            security_gate=SecurityGate(min_attacker_l1=0.0, max_agg_l1=float("inf")),
            max_gate_retries=1,
        )
        params.update(overrides)
        return cls(**params)
