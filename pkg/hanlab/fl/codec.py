# HANLAB
# ***
# Task-model parameters <-> AHE plaintext scalars

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple, Union

import torch
import torch.nn as nn

from hanlab.ahe.types import DTYPE, PlaintextBatch
from hanlab.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

CLIP_WARN_RATE = 0.01


@dataclass(frozen=True)
class CodecMeta:
    """Layout of an encoded parameter vector, plus the clip count of one encoding."""

    names: Tuple[str, ...]
    shapes: Tuple[Tuple[int, ...], ...]
    psi: float
    clip_count: int = 0

    @property
    def size(self) -> int:
        return sum(math.prod(shape) for shape in self.shapes)

    @property
    def digest(self) -> str:
        layout = ";".join(f"{n}:{'x'.join(map(str, s))}" for n, s in zip(self.names, self.shapes))
        return hashlib.sha256(layout.encode()).hexdigest()


class ParamCodec:
    """
    Flattens a task model's parameters into plaintext scalars and back.

    The canonical order is ``model.named_parameters()`` order, which is the
    registration order of the modules; buffers are not encoded.

    Parameters
    ----------
    model : nn.Module
        Any instance of the task architecture; only its layout is kept.
    psi : float
        Plaintext bound. Parameters outside ``[-psi, psi]`` are clipped.
    """

    def __init__(self, model: nn.Module, psi: float):
        named = list(model.named_parameters())
        self.meta = CodecMeta(tuple(n for n, _ in named), tuple(tuple(p.shape) for _, p in named), float(psi))

    @property
    def size(self) -> int:
        return self.meta.size

    def flatten(self, weights: Union[nn.Module, Mapping[str, torch.Tensor]]) -> torch.Tensor:
        state = dict(weights.named_parameters()) if isinstance(weights, nn.Module) else dict(weights)
        missing = [n for n in self.meta.names if n not in state]
        if missing:
            raise InvalidArgumentError(f"weights lack parameters {missing[:3]}")
        parts = []
        for name, shape in zip(self.meta.names, self.meta.shapes):
            tensor = state[name].detach()
            if tuple(tensor.shape) != shape:
                raise InvalidArgumentError(f"{name} has shape {tuple(tensor.shape)}, expected {shape}")
            parts.append(tensor.reshape(-1).to("cpu", DTYPE))
        return torch.cat(parts)

    def encode(self, weights: Union[nn.Module, Mapping[str, torch.Tensor]]) -> Tuple[PlaintextBatch, CodecMeta]:
        flat = self.flatten(weights)
        if not torch.isfinite(flat).all():
            raise InvalidArgumentError("task model weights must be finite")
        batch = PlaintextBatch.from_values(flat, self.meta.psi)
        rate = batch.clip_count / max(len(batch), 1)
        if rate > CLIP_WARN_RATE:
            logger.warning(
                "%.2f%% of parameters clipped to [-%g, %g]; psi is likely too small", 100 * rate, self.meta.psi, self.meta.psi
            )
        return batch, CodecMeta(self.meta.names, self.meta.shapes, self.meta.psi, batch.clip_count)

    def decode(self, flat: torch.Tensor) -> Dict[str, torch.Tensor]:
        flat = torch.as_tensor(flat).reshape(-1)
        if flat.numel() != self.size:
            raise InvalidArgumentError(f"expected {self.size} values, got {flat.numel()}")
        out, offset = {}, 0
        for name, shape in zip(self.meta.names, self.meta.shapes):
            n = math.prod(shape)
            out[name] = flat[offset:offset + n].reshape(shape).clone()
            offset += n
        return out

    @torch.no_grad()
    def load_into(self, model: nn.Module, flat: torch.Tensor) -> nn.Module:
        params = dict(model.named_parameters())
        for name, value in self.decode(flat).items():
            params[name].copy_(value.to(params[name].device, params[name].dtype))
        return model


def param_codec_encode(weights: nn.Module, psi: float) -> Tuple[PlaintextBatch, CodecMeta]:
    """
    Encode a task model's parameters as plaintext scalars.

    Returns
    -------
    tuple of (PlaintextBatch, CodecMeta)
        The clipped plaintexts and the layout with the clip count.

    Raises
    ------
    InvalidArgumentError
        If any weight is not finite.
    """
    return ParamCodec(weights, psi).encode(weights)

