import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import torch

from hanlab.errors import InvalidArgumentError
from hanlab.losses import l1_stats
from hanlab.tools.logging import log_records

EXAMPLE_MAGNITUDES = (0.3, 0.05, 0.01, 0.001, 0.0001)
SUCCESS_MAD = 0.01


@dataclass
class AttackExample:
    orig: float
    estimate: float
    diff: float


@dataclass
class AttackReport:
    """
    Guessing-difference report of one attack.

    ``mad`` is the mean of ``|estimate - orig|`` over all samples and ``var`` the
    variance of the signed differences ``estimate - orig``, as in :func:`hanlab.losses.l1_stats`.
    ``success`` is set when ``mad`` falls below 0.01.
    """

    attack: str
    mad: float
    var: float
    n_samples: int
    success: bool
    examples: List[AttackExample] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_guesses(cls, attack: str, guesses, truths, config: Optional[Dict[str, Any]] = None) -> "AttackReport":
        guesses = torch.as_tensor(guesses, dtype=torch.float64).detach().cpu().reshape(-1)
        truths = torch.as_tensor(truths, dtype=torch.float64).detach().cpu().reshape(-1)
        if guesses.shape != truths.shape or guesses.numel() == 0:
            raise InvalidArgumentError("guesses and truths must be non-empty and of equal length")
        stats = l1_stats(guesses, truths)
        return cls(
            attack=attack,
            mad=stats.mad,
            var=stats.var,
            n_samples=int(guesses.numel()),
            success=stats.mad < SUCCESS_MAD,
            examples=pick_examples(truths, guesses),
            config=dict(config or {}),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[e.orig, e.estimate, e.diff] for e in self.examples],
            columns=["Orig. Val.", f"{self.attack} Est.", f"{self.attack} Diff."],
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "attack": self.attack,
            "mad": self.mad,
            "var": self.var,
            "n_samples": self.n_samples,
            "success": self.success,
            "examples": [vars(e) for e in self.examples],
            **self.config,
        }


def pick_examples(truths: torch.Tensor, guesses: torch.Tensor, magnitudes: Sequence[float] = EXAMPLE_MAGNITUDES) -> List[AttackExample]:
    """One row per magnitude: the unused sample whose ``|orig|`` is closest to it."""
    used = set()
    rows = []
    scale = truths.abs()
    for magnitude in magnitudes:
        order = torch.argsort((scale - magnitude).abs())
        for k in order.tolist():
            if k not in used:
                used.add(k)
                orig, estimate = float(truths[k]), float(guesses[k])
                rows.append(AttackExample(orig, estimate, abs(estimate - orig)))
                break
    return rows


def write_attack_reports(reports: Sequence[AttackReport], path: str, extra: Optional[Dict[str, Any]] = None) -> str:
    log_path, file_name = os.path.split(os.path.abspath(path))
    records = [{**r.to_record(), **(extra or {})} for r in reports]
    log_records(records, file_name, log_path=log_path, overwrite=False)
    return path
