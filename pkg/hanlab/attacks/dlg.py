# HANLAB
# ***
# Deep leakage from gradients, on plain and on HANs-encrypted gradients

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from hanlab.ahe.ops import attack_forward
from hanlab.attacks.kma import ClientTrafficSource, InterceptedTraffic, require_public
from hanlab.errors import InvalidArgumentError
from hanlab.losses import EvalStats, l1_stats
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator
from hanlab.utils.plotly import image_grid_figure, save_figure

OPTIMIZERS = ("gd", "lbfgs")
INITS = ("uniform", "normal")


@dataclass
class DlgConfig:
    """
    Parameters
    ----------
    iterations : int
        Optimiser iterations.
    lr : float
        Step size. ``gd`` applies ``x <- x - lr * grad``; ``lbfgs`` uses it as its line-search scale.
    optimizer : str
        ``gd`` (plain gradient descent) or ``lbfgs``.
    init : str
        Dummy input distribution: ``uniform`` on ``[0, 1)`` or standard ``normal``.
    success_mse : float
        A reconstruction with per-pixel MSE at or below this, and the right label, succeeds.
    seed : int
        Seed of the dummy initialisation.
    """

    iterations: int = 300
    lr: float = 0.1
    optimizer: str = "gd"
    init: str = "uniform"
    success_mse: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgumentError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.init not in INITS:
            raise InvalidArgumentError(f"init must be one of {INITS}, got {self.init!r}")

    @classmethod
    def micro(cls, **overrides) -> "DlgConfig":
        params = dict(iterations=60, lr=1.0, optimizer="lbfgs")
        params.update(overrides)
        return cls(**params)


@dataclass
class DlgResult:
    x: torch.Tensor
    y: torch.Tensor
    curve: List[float]
    mse: Optional[float] = None
    label_match: Optional[bool] = None
    success: Optional[bool] = None

    @property
    def label(self) -> int:
        return int(self.y.argmax(dim=-1)[0])

    def score(self, x_true: torch.Tensor, label: int, success_mse: float) -> "DlgResult":
        self.mse = float(F.mse_loss(self.x.detach().cpu(), x_true.detach().cpu()))
        self.label_match = self.label == int(label)
        self.success = self.mse <= success_mse and self.label_match
        return self


@dataclass
class HansDlgResult:
    """Outcome of attacking HANs-encrypted gradients with both cracks."""

    success: bool
    reconstructions: Dict[str, DlgResult] = field(default_factory=dict)
    gradient_stats: Dict[str, EvalStats] = field(default_factory=dict)
    clip_count: int = 0


def soft_cross_entropy(logits: torch.Tensor, target_probs: torch.Tensor) -> torch.Tensor:
    return torch.mean(torch.sum(-target_probs * F.log_softmax(logits, dim=-1), dim=-1))


def one_hot(label: int, num_classes: int) -> torch.Tensor:
    return F.one_hot(torch.tensor([int(label)]), num_classes).float()


def victim_gradients(model: nn.Module, x: torch.Tensor, label: int, num_classes: int, lr: Optional[float] = None) -> List[torch.Tensor]:
    """
    The gradient a victim shares for one sample.

    With ``lr`` set, the gradient is recovered from one local SGD step as
    ``(w_before - w_after) / lr``, the way a federated update exposes it.
    """
    target = one_hot(label, num_classes).to(x.device)
    if lr is None:
        loss = soft_cross_entropy(model(x), target)
        return [g.detach() for g in torch.autograd.grad(loss, list(model.parameters()))]
    local = copy.deepcopy(model)
    before = [p.detach().clone() for p in local.parameters()]
    optimizer = torch.optim.SGD(local.parameters(), lr=lr)
    optimizer.zero_grad()
    soft_cross_entropy(local(x), target).backward()
    optimizer.step()
    return [(b - a.detach()) / lr for b, a in zip(before, local.parameters())]


def gradient_distance(dummy_grads: Sequence[torch.Tensor], target_grads: Sequence[torch.Tensor]) -> torch.Tensor:
    return sum(((g - t) ** 2).sum() for g, t in zip(dummy_grads, target_grads))


def _check_shapes(params: Sequence[torch.Tensor], target_grads: Sequence[torch.Tensor]) -> None:
    if len(params) != len(target_grads):
        raise InvalidArgumentError(f"expected {len(params)} gradient tensors, got {len(target_grads)}")
    for i, (p, g) in enumerate(zip(params, target_grads)):
        if tuple(p.shape) != tuple(g.shape):
            raise InvalidArgumentError(f"gradient {i} has shape {tuple(g.shape)}, parameter has {tuple(p.shape)}")


def dlg(
    model: nn.Module,
    target_grads: Sequence[torch.Tensor],
    input_shape: Tuple[int, ...],
    num_classes: int,
    cfg: DlgConfig,
) -> DlgResult:
    """
    Reconstruct a training sample from its gradient by matching dummy gradients.

    Dummy inputs and soft labels are optimised to minimise
    ``sum ||grad(loss(F(x'), y'), W) - target_grads||^2``.

    Parameters
    ----------
    model : nn.Module
        The differentiable model ``F`` holding the weights ``W``.
    target_grads : sequence of torch.Tensor
        One gradient per parameter of ``model``, in ``model.parameters()`` order.
    input_shape : tuple of int
        Shape of one input sample, e.g. ``(1, 28, 28)``.
    num_classes : int
        Width of the label vector.
    cfg : DlgConfig
        Optimiser settings.

    Returns
    -------
    DlgResult
        The dummies with the lowest gradient distance reached, and the distance curve.

    Raises
    ------
    InvalidArgumentError
        If gradient shapes do not match the model's parameters.
    """
    params = list(model.parameters())
    _check_shapes(params, target_grads)
    device = params[0].device
    target_grads = [g.detach().to(device) for g in target_grads]
    generator = make_generator(cfg.seed, 0xD1)

    if cfg.init == "uniform":
        x = torch.rand((1,) + tuple(input_shape), generator=generator)
    else:
        x = torch.randn((1,) + tuple(input_shape), generator=generator)
    y = torch.randn((1, num_classes), generator=generator)
    x = x.to(device).requires_grad_(True)
    y = y.to(device).requires_grad_(True)

    def objective() -> torch.Tensor:
        loss = soft_cross_entropy(model(x), F.softmax(y, dim=-1))
        dummy_grads = torch.autograd.grad(loss, params, create_graph=True)
        return gradient_distance(dummy_grads, target_grads)

    if cfg.optimizer == "lbfgs":
        optimizer = torch.optim.LBFGS([x, y], lr=cfg.lr)
    else:
        optimizer = torch.optim.SGD([x, y], lr=cfg.lr)

    def closure():
        optimizer.zero_grad()
        distance = objective()
        distance.backward()
        return distance

    curve = []
    best = (float("inf"), x.detach().clone(), y.detach().clone())
    for _ in range(cfg.iterations):
        # step() returns the distance at the dummies held before the update
        x_before, y_before = x.detach().clone(), y.detach().clone()
        value = float(optimizer.step(closure))
        if not math.isfinite(value):
            break
        curve.append(value)
        if value < best[0]:
            best = (value, x_before, y_before)

    return DlgResult(best[1].cpu(), F.softmax(best[2], dim=-1).cpu(), curve)


def flatten_gradients(grads: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.cat([g.detach().reshape(-1).cpu() for g in grads])


def unflatten_gradients(flat: torch.Tensor, like: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    out, offset = [], 0
    for g in like:
        out.append(flat[offset: offset + g.numel()].reshape(g.shape))
        offset += g.numel()
    return out


Crack = Union[nn.Module, Callable[[InterceptedTraffic], torch.Tensor]]


@torch.no_grad()
def decode_with(crack: Crack, traffic: InterceptedTraffic) -> torch.Tensor:
    """Plaintext guesses of a crack network, or of any callable taking intercepted traffic."""
    if isinstance(crack, nn.Module):
        require_public(crack, "a crack network")
        pk = traffic.pk if crack.role == "attacker_pk" else None
        return attack_forward(crack, traffic.c, pk).cpu()
    return torch.as_tensor(crack(traffic)).cpu()


def dlg_hans(
    model: nn.Module,
    victim_grads: Sequence[torch.Tensor],
    victim: ClientTrafficSource,
    crack1: Crack,
    crack2: Crack,
    x_true: torch.Tensor,
    label: int,
    num_classes: int,
    cfg: DlgConfig,
    include_plain: bool = True,
) -> HansDlgResult:
    """
    DLG against HANs-encrypted gradients.

    The victim uploads its flattened gradient through HANs. Each crack decrypts the
    intercepted traffic into a gradient guess, and DLG runs on each guess. Both paths
    always run. The attack succeeds if either reconstruction matches ``(x_true, label)``.
    With ``include_plain`` a control run on the unencrypted gradient is added; all runs
    share one dummy initialisation.

    Returns
    -------
    HansDlgResult
    """
    print(format_stage_name("dlg over hans"))
    input_shape = tuple(x_true.shape[1:])
    flat = flatten_gradients(victim_grads)
    traffic = victim.upload(flat, make_generator(cfg.seed, 0xD2))
    clip_count = int((flat.abs() > victim.cfg.psi).sum())

    result = HansDlgResult(success=False, clip_count=clip_count)
    if include_plain:
        print("    * PLAIN GRADIENT")
        result.reconstructions["plain"] = dlg(model, victim_grads, input_shape, num_classes, cfg).score(
            x_true, label, cfg.success_mse
        )

    for name, crack in (("crack1", crack1), ("crack2", crack2)):
        print(f"    * {name.upper()} GRADIENT")
        guess = decode_with(crack, traffic)
        result.gradient_stats[name] = l1_stats(guess, flat)
        grads = unflatten_gradients(guess.to(flat.dtype), victim_grads)
        result.reconstructions[name] = dlg(model, grads, input_shape, num_classes, cfg).score(
            x_true, label, cfg.success_mse
        )

    result.success = any(result.reconstructions[name].success for name in ("crack1", "crack2"))
    return result


def _as_image(x: torch.Tensor) -> np.ndarray:
    image = x.detach().cpu().float().numpy()[0]
    if image.shape[0] == 1:
        return image[0]
    return np.transpose(image, (1, 2, 0))


def save_reconstruction_grid(path: str, x_true: torch.Tensor, reconstructions: Dict[str, DlgResult]) -> str:
    """PNG (or HTML) grid: the original followed by every reconstruction."""
    names = ["original"] + list(reconstructions)
    images = [_as_image(x_true)] + [_as_image(r.x) for r in reconstructions.values()]
    return save_figure(image_grid_figure([images], column_titles=names), path)
