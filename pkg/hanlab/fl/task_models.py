# HANLAB
# ***
# Task models trained by the federated clients, and the DLG victim model

from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from hanlab.errors import InvalidArgumentError


class SmallCnn(nn.Module):
    """Two 5x5 convolutions with max pooling, then two dense layers."""

    def __init__(self, input_shape: Tuple[int, int, int] = (1, 28, 28), num_classes: int = 10):
        super().__init__()
        channels, height, width = input_shape
        self.conv1 = nn.Conv2d(channels, 16, 5, padding=2)
        self.conv2 = nn.Conv2d(16, 32, 5, padding=2)
        self.fc1 = nn.Linear(32 * (height // 4) * (width // 4), 64)
        self.fc2 = nn.Linear(64, num_classes)

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        return self.fc2(F.relu(self.fc1(torch.flatten(x, 1))))


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, groups: int = 4):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.GroupNorm(groups, out_channels),
            )

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet8(nn.Module):
    """
    A small ResNet: a stem convolution and three basic blocks of 16, 32 and 64 channels.

    GroupNorm replaces BatchNorm so every weight is a plain parameter that clients
    can upload; there are no running statistics to aggregate.
    """

    def __init__(self, input_shape: Tuple[int, int, int] = (3, 32, 32), num_classes: int = 10):
        super().__init__()
        channels = input_shape[0]
        self.stem = nn.Conv2d(channels, 16, 3, padding=1, bias=False)
        self.norm = nn.GroupNorm(4, 16)
        self.layers = nn.Sequential(BasicBlock(16, 16), BasicBlock(16, 32, 2), BasicBlock(32, 64, 2))
        self.fc = nn.Linear(64, num_classes)

    def forward(self, x):
        x = F.relu(self.norm(self.stem(x)))
        x = self.layers(x)
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))


class SigmoidMlp(nn.Module):
    """
    The DLG victim model: a twice-differentiable network with sigmoid activations, small
    enough for gradient matching to converge within a few hundred iterations.
    """

    def __init__(self, input_shape: Sequence[int] = (1, 28, 28), num_classes: int = 10, hidden: int = 64):
        super().__init__()
        size = 1
        for d in input_shape:
            size *= int(d)
        self.body = nn.Sequential(
            nn.Flatten(),
            nn.Linear(size, hidden),
            nn.Sigmoid(),
            nn.Linear(hidden, num_classes),
        )

    def forward(self, x):
        return self.body(x)


ARCHITECTURES = {"cnn": SmallCnn, "resnet8": ResNet8, "sigmoid_mlp": SigmoidMlp}


def build_task_model(architecture: str, input_shape: Tuple[int, ...], num_classes: int, seed: int) -> nn.Module:
    """
    Instantiate a task model with weights drawn from ``seed``.

    The global RNG is forked so the caller's random state is left untouched.
    """
    if architecture not in ARCHITECTURES:
        raise InvalidArgumentError(f"unknown architecture {architecture!r}; expected one of {sorted(ARCHITECTURES)}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ARCHITECTURES[architecture](tuple(input_shape), num_classes)
