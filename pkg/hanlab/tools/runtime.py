import os
import hashlib
import secrets
from typing import Optional

import torch

DEVICE_ENV = "HANLAB_DEVICE"
DATA_DIR_ENV = "HANLAB_DATA_DIR"


def resolve_device(device: Optional[str] = None) -> torch.device:
    """
    Resolve the torch device from an explicit value or ``HANLAB_DEVICE``.

    Falls back to CPU when CUDA is requested but unavailable.
    """
    name = device or os.environ.get(DEVICE_ENV, "cpu")
    if name.startswith("cuda") and not torch.cuda.is_available():
        return torch.device("cpu")
    return torch.device(name)


def resolve_data_dir(data_dir: Optional[str] = None) -> str:
    if data_dir:
        return os.path.expanduser(data_dir)
    return os.path.expanduser(os.environ.get(DATA_DIR_ENV, os.path.join("~", ".cache", "hanlab")))


def make_generator(seed: int, *salt: int) -> torch.Generator:
    """
    A CPU generator derived from ``seed`` and an optional salt, e.g. ``(stage,)`` or
    ``(client_id, round)``. Distinct salts give independent, reproducible streams.
    """
    material = ":".join(str(int(v)) for v in (seed,) + salt).encode()
    derived = int.from_bytes(hashlib.sha256(material).digest()[:8], "little") & ((1 << 63) - 1)
    return torch.Generator().manual_seed(derived)


def fresh_generator() -> torch.Generator:
    """A CPU generator seeded from the operating system's entropy pool."""
    return torch.Generator().manual_seed(secrets.randbits(63))


def synchronize(device: torch.device) -> None:
    if device.type == "cuda":
        torch.cuda.synchronize(device)
