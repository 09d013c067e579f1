import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import torch

from hanlab.errors import GateFailureError, StageFailureError
from hanlab.losses import EvalStats
from hanlab.ppu.config import PpuConfig
from hanlab.ppu.datasets import PublicDataset


@dataclass
class PpuReport:
    """
    Outcome of a privacy-preserving update phase.

    ``truths`` maps each client to the true plaintexts behind its latest publication.
    They never leave the client and are kept for noise calibration checks only.
    """

    phase: str
    public_datasets: List[PublicDataset] = field(default_factory=list)
    truths: Dict[int, torch.Tensor] = field(default_factory=dict)
    curves: Dict[str, List[float]] = field(default_factory=dict)
    aggregation: EvalStats = field(default_factory=EvalStats.zeros)
    encryptor_digests: Dict[int, str] = field(default_factory=dict)
    aggregator_digest: str = ""

    def to_records(self) -> List[dict]:
        return [
            {"stage": self.phase, "step": step, "loss_name": name, "value": value}
            for name, values in self.curves.items()
            for step, value in enumerate(values)
        ]


def optimize_models(
    modules: Sequence[torch.nn.Module],
    loss_fn: Callable[[], torch.Tensor],
    cfg: PpuConfig,
    phase: str,
) -> List[float]:
    """``cfg.optimize_steps`` AdamW steps on ``loss_fn`` over the trainable parameters of ``modules``."""
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = []
    for step in range(cfg.optimize_steps):
        optimizer.zero_grad(set_to_none=True)
        loss = loss_fn()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise StageFailureError(f"{phase} diverged at step {step}", stage=phase, diagnostics={"step": step, "loss": value})
        loss.backward()
        optimizer.step()
        losses.append(value)
    return losses


def check_fidelity(phase: str, stats: EvalStats, cfg: PpuConfig) -> None:
    if stats.mean_l1 > cfg.max_agg_l1:
        raise GateFailureError(
            f"{phase} aggregation mean L1 {stats.mean_l1:.6f} exceeds {cfg.max_agg_l1}",
            stage=phase,
            diagnostics={"mean_l1": stats.mean_l1, "max_l1": stats.max_l1},
        )
