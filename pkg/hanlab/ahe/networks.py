import hashlib
import math
from typing import Any, Dict

import numpy as np
import torch
import torch.nn as nn

from hanlab.errors import InvalidArgumentError

ROLES = ("encryptor", "aggregator", "attacker_pk", "attacker_nopk")
DEPTHS = ("standard", "double")


class ResidualBlock1d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)
        self.relu = nn.ReLU()

    def forward(self, x):
        identity = x
        x = self.relu(self.conv1(x))
        x = self.conv2(x)
        return self.relu(x + identity)


class HanNetwork(nn.Module):
    """
    The per-scalar network shared by encryptors, the aggregator and attackers.

    A linear layer expands each input row to ``hidden_dim`` features, 1-D convolutions
    and residual blocks mix that expanded representation, and an output layer compresses
    it to ``out_width``. There is no normalisation layer, so output row ``i`` depends on
    input row ``i`` only.

    Parameters
    ----------
    in_width : int
        Reals per input row (3 for an encryptor: ``m, sk_a, sk_b``).
    out_width : int
        Reals per output row (``L`` for an encryptor, 1 otherwise).
    hidden_dim : int
        Width of the expanded representation.
    conv_channels : int
        Channels of the convolutional trunk.
    num_res_blocks : int
        Residual blocks in the trunk.
    role : str
        One of ``encryptor``, ``aggregator``, ``attacker_pk``, ``attacker_nopk``.
    depth : str
        ``standard`` or ``double``.
    """

    def __init__(
        self,
        in_width: int,
        out_width: int,
        hidden_dim: int,
        conv_channels: int,
        num_res_blocks: int,
        role: str,
        depth: str = "standard",
    ):
        super().__init__()
        if role not in ROLES:
            raise InvalidArgumentError(f"unknown role {role!r}")
        if depth not in DEPTHS:
            raise InvalidArgumentError(f"unknown depth {depth!r}")
        self.in_width = in_width
        self.out_width = out_width
        self.hidden_dim = hidden_dim
        self.conv_channels = conv_channels
        self.num_res_blocks = num_res_blocks
        self.role = role
        self.depth = depth
        self.visibility = "public"

        self.expand = nn.Linear(in_width, hidden_dim)
        self.stem = nn.Conv1d(1, conv_channels, 3, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock1d(conv_channels) for _ in range(num_res_blocks)])
        self.squeeze = nn.Conv1d(conv_channels, 1, 1)
        self.head = nn.Linear(hidden_dim, out_width)
        self.relu = nn.ReLU()

    def forward(self, x):
        x = self.relu(self.expand(x))
        x = self.relu(self.stem(x.unsqueeze(1)))
        x = self.blocks(x)
        x = self.squeeze(x).squeeze(1)
        return self.head(x)

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator) -> None:
        """Fan-in scaled uniform initialisation drawn from ``generator``."""
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv1d)):
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                for param in (module.weight, module.bias):
                    values = torch.rand(param.shape, generator=generator, dtype=param.dtype)
                    param.copy_((values * 2 - 1) * bound)

    def descriptor(self) -> Dict[str, Any]:
        return {
            "role": self.role,
            "depth": self.depth,
            "in_width": self.in_width,
            "out_width": self.out_width,
            "hidden_dim": self.hidden_dim,
            "conv_channels": self.conv_channels,
            "num_res_blocks": self.num_res_blocks,
            "visibility": self.visibility,
        }

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> "HanNetwork":
        net = cls(
            in_width=descriptor["in_width"],
            out_width=descriptor["out_width"],
            hidden_dim=descriptor["hidden_dim"],
            conv_channels=descriptor["conv_channels"],
            num_res_blocks=descriptor["num_res_blocks"],
            role=descriptor["role"],
            depth=descriptor.get("depth", "standard"),
        )
        net.visibility = descriptor.get("visibility", "public")
        return net

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def residual_block_parameter_count(conv_channels: int) -> int:
    """Parameters of one :class:`ResidualBlock1d`: two 3-tap convolutions with bias."""
    return 2 * (conv_channels * conv_channels * 3 + conv_channels)


def weight_digest(module: nn.Module) -> str:
    """SHA-256 over the module's float32 little-endian state, in state-dict order."""
    sha = hashlib.sha256()
    for name, array in state_to_numpy(module).items():
        sha.update(name.encode())
        sha.update(array.tobytes())
    return sha.hexdigest()


def set_trainable(module: nn.Module, trainable: bool) -> None:
    for param in module.parameters():
        param.requires_grad_(trainable)


def state_to_numpy(module: nn.Module) -> Dict[str, np.ndarray]:
    """The state dict as float32 little-endian arrays, the on-disk and digest layout."""
    return {name: t.detach().cpu().numpy().astype("<f4") for name, t in module.state_dict().items()}
