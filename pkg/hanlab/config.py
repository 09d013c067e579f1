# HANLAB
# ***
# Run configuration: one TOML document mirroring every *Config type

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hanlab.ahe.config import AheConfig
from hanlab.attacks.dlg import DlgConfig
from hanlab.attacks.kma import KmaConfig
from hanlab.errors import InvalidArgumentError
from hanlab.fl.config import FlConfig
from hanlab.losses import LossConfig
from hanlab.ppu.config import PpuConfig
from hanlab.training.config import SecurityGate, TrainConfig


@dataclass
class BenchConfig:
    op: str = "encrypt"
    batch_sizes: List[int] = field(default_factory=lambda: [100000, 200000, 300000])
    trials: int = 5
    warmup: int = 3
    model_size: int = 7027860


SECTIONS = {
    "ahe": AheConfig,
    "train": TrainConfig,
    "ppu": PpuConfig,
    "kma": KmaConfig,
    "dlg": DlgConfig,
    "fl": FlConfig,
    "bench": BenchConfig,
}

NESTED = {("train", "losses"): LossConfig, ("train", "security_gate"): SecurityGate}


@dataclass
class HanlabConfig:
    """
    Every section of a run. ``losses`` is an alias of ``train.losses``.

    Examples
    --------
    ``` python
    cfg = load_config("run.toml", seed=7)
    cfg.train.losses.gamma
    config_hash(cfg)
    ```
    """

    ahe: AheConfig = field(default_factory=AheConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ppu: PpuConfig = field(default_factory=PpuConfig)
    kma: KmaConfig = field(default_factory=KmaConfig)
    dlg: DlgConfig = field(default_factory=DlgConfig)
    fl: FlConfig = field(default_factory=FlConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def losses(self) -> LossConfig:
        return self.train.losses

    @classmethod
    def micro(cls) -> "HanlabConfig":
        return cls(
            train=TrainConfig.micro(),
            ppu=PpuConfig.micro(),
            kma=KmaConfig.micro(),
            dlg=DlgConfig.micro(),
            fl=FlConfig.micro(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _check_keys(section: str, cls, values: Dict[str, Any]) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown keys in [{section}]: {', '.join(unknown)}")


def _merge(section: str, current, values: Dict[str, Any]):
    _check_keys(section, type(current), values)
    params = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
    for key, value in values.items():
        nested = NESTED.get((section, key))
        if nested is not None:
            if not isinstance(value, dict):
                raise InvalidArgumentError(f"[{section}.{key}] must be a table")
            value = _merge(f"{section}.{key}", params[key], value)
        params[key] = value
    if section == "fl" and "dataset" in values and "architecture" not in values:
        params["architecture"] = None
    try:
        return type(current)(**params)
    except TypeError as e:
        raise InvalidArgumentError(f"[{section}]: {e}") from e


def apply_overrides(cfg: HanlabConfig, data: Dict[str, Any]) -> HanlabConfig:
    """
    Merge a nested mapping of section tables into ``cfg``. A top-level ``losses``
    table is merged into ``train.losses``.
    """
    data = dict(data)
    if "losses" in data:
        train = dict(data.get("train", {}))
        train["losses"] = {**train.get("losses", {}), **data.pop("losses")}
        data["train"] = train
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise InvalidArgumentError(f"unknown config sections: {', '.join(unknown)}")
    merged = {name: getattr(cfg, name) for name in SECTIONS}
    for name, values in data.items():
        if not isinstance(values, dict):
            raise InvalidArgumentError(f"[{name}] must be a table")
        merged[name] = _merge(name, merged[name], values)
    return HanlabConfig(**merged)


def with_seed(cfg: HanlabConfig, seed: int) -> HanlabConfig:
    """Set ``seed`` in every section that has one."""
    if not 0 <= seed < 2 ** 64:
        raise InvalidArgumentError(f"seed must fit in 64 bits, got {seed}")
    return apply_overrides(cfg, {name: {"seed": seed} for name, cls in SECTIONS.items()
                                 if "seed" in {f.name for f in dataclasses.fields(cls)}})


def load_config(path: Optional[str] = None, micro: bool = False, seed: Optional[int] = None) -> HanlabConfig:
    """
    Build a run configuration: defaults (or the micro presets), then the TOML file,
    then ``seed``.

    Parameters
    ----------
    path : str, optional
        A TOML document with ``[ahe]``, ``[losses]``, ``[train]``, ``[ppu]``,
        ``[kma]``, ``[dlg]``, ``[fl]`` and ``[bench]`` tables.
    micro : bool, optional
        Start from the desk-scale presets.
    seed : int, optional
        Overrides every section's seed.

    Raises
    ------
    InvalidArgumentError
        On unknown sections or keys, invalid values, or TOML syntax errors.
    """
    cfg = HanlabConfig.micro() if micro else HanlabConfig()
    if path:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise InvalidArgumentError(f"{path} is not valid TOML: {e}") from e
        except OSError as e:
            raise InvalidArgumentError(f"cannot read config {path}: {e}") from e
        cfg = apply_overrides(cfg, data)
    if seed is not None:
        cfg = with_seed(cfg, seed)
    return cfg


def _canonical(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def config_hash(cfg: HanlabConfig) -> str:
    """SHA-256 of the canonical JSON of the whole configuration."""
    text = json.dumps(_canonical(cfg.to_dict()), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
