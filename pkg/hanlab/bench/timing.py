# HANLAB
# ***
# Wall-clock benchmarks of key generation, encryption and aggregation

import platform
import statistics
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import torch

from hanlab.ahe.bundle import ModelBundle
from hanlab.ahe.ops import aggregate, encrypt, keygen
from hanlab.errors import InvalidArgumentError
from hanlab.tools.runtime import make_generator, synchronize
from hanlab.training.data import uniform_plaintexts

OPS = ("keygen", "encrypt", "aggregate")
MIN_TRIALS = 5
BENCH_SALT = 0xBE


@dataclass
class BenchResult:
    op: str
    batch_size: int
    wall_seconds: float
    trials: int
    device: str
    all_seconds: Optional[List[float]] = None

    def __post_init__(self):
        if self.trials < MIN_TRIALS:
            raise InvalidArgumentError(f"a benchmark needs at least {MIN_TRIALS} trials, got {self.trials}")
        if not self.wall_seconds > 0:
            raise InvalidArgumentError("wall_seconds must be positive")

    def to_record(self) -> Dict[str, Any]:
        return {
            "op": self.op,
            "batch_size": self.batch_size,
            "wall_seconds": self.wall_seconds,
            "trials": self.trials,
            "device": self.device,
        }


def device_descriptor(device: torch.device) -> str:
    if device.type == "cuda":
        return f"{device}:{torch.cuda.get_device_name(device)}"
    return f"cpu:{platform.processor() or platform.machine()}"


def _prepare(op: str, batch_size: int, bundle: ModelBundle) -> Callable[[], Any]:
    cfg = bundle.cfg
    generator = make_generator(cfg.seed, BENCH_SALT, batch_size)
    if op == "keygen":
        return lambda: keygen(batch_size, cfg, generator)

    device = next(bundle.aggregator.parameters()).device
    m = uniform_plaintexts(batch_size, cfg, generator)
    keys, pk = keygen(batch_size, cfg, generator)
    keys_on_device = type(keys)(keys.sk_a.to(device), keys.sk_b.to(device))
    m_on_device = type(m)(m.m.to(device), m.psi)
    if op == "encrypt":
        return lambda: encrypt(bundle.encryptor(0), m_on_device, keys_on_device, cfg)

    with torch.no_grad():
        c = encrypt(bundle.encryptor(0), m_on_device, keys_on_device, cfg)
    pk_on_device = type(pk)(pk.pk.to(device))
    ciphertexts = [c] * cfg.num_clients
    pks = [pk_on_device] * cfg.num_clients
    return lambda: aggregate(bundle.aggregator, ciphertexts, pks)


def bench(
    op: str,
    batch_sizes: Sequence[int],
    bundle: ModelBundle,
    trials: int = MIN_TRIALS,
    warmup: int = 3,
) -> List[BenchResult]:
    """
    Time one operation per batch size: ``warmup`` untimed calls, then the median of
    ``trials`` timed calls. Timing does not depend on the trained weights.

    Parameters
    ----------
    op : str
        ``keygen``, ``encrypt`` or ``aggregate``.
    batch_sizes : sequence of int
        Plaintext scalars per call.
    bundle : ModelBundle
        Supplies the networks and the scheme parameters.
    trials : int, optional
        Timed calls per batch size, at least 5.
    warmup : int, optional
        Untimed calls before measuring. Defaults to 3.

    Returns
    -------
    list of BenchResult
        One per batch size, in the given order.

    Raises
    ------
    InvalidArgumentError
        For an unknown op, fewer than 5 trials or a non-positive batch size.
    """
    if op not in OPS:
        raise InvalidArgumentError(f"unknown op {op!r}; expected one of {OPS}")
    if trials < MIN_TRIALS:
        raise InvalidArgumentError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    if not batch_sizes or min(batch_sizes) < 1:
        raise InvalidArgumentError("batch sizes must be positive")

    device = next(bundle.aggregator.parameters()).device
    results = []
    for batch_size in batch_sizes:
        call = _prepare(op, int(batch_size), bundle)
        seconds = []
        with torch.no_grad():
            for _ in range(warmup):
                call()
            synchronize(device)
            for _ in range(trials):
                start = time.perf_counter()
                call()
                synchronize(device)
                seconds.append(time.perf_counter() - start)
        # perf_counter can report 0 for very fast ops on coarse clocks
        median = max(statistics.median(seconds), 1e-9)
        results.append(BenchResult(op, int(batch_size), median, trials, device_descriptor(device), seconds))
        print(f"      {op} batch {batch_size}: {median:.6f}s (median of {trials})")
    return results
