# HANLAB
# ***
# Known-model attack: attackers trained on the public original encryptor

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch

from hanlab.ahe.bundle import make_attacker
from hanlab.ahe.config import AheConfig
from hanlab.ahe.ops import attack_forward, encrypt, keygen
from hanlab.ahe.types import CiphertextBatch, PlaintextBatch, PublicKeyBatch
from hanlab.errors import ContractViolationError, InvalidArgumentError
from hanlab.losses import EvalStats, l1_stats
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator
from hanlab.training.config import TrainConfig
from hanlab.training.data import uniform_plaintexts
from hanlab.training.evaluation import evaluate_attacker
from hanlab.training.stages import encryptor_traffic, fit_attackers, frozen


def require_public(net, what: str) -> None:
    """Reject networks tagged private: attackers never hold a victim's private weights."""
    if getattr(net, "visibility", "public") == "private":
        raise ContractViolationError(f"{what} is a private model; attacks may only use public models")


@dataclass(frozen=True)
class InterceptedTraffic:
    """
    What an eavesdropper sees: ciphertexts and public keys. ``m_true`` is held by the
    evaluation harness for scoring and is never handed to attack code.
    """

    c: CiphertextBatch
    pk: PublicKeyBatch
    m_true: torch.Tensor

    def __len__(self) -> int:
        return len(self.c)


class ClientTrafficSource:
    """
    A victim client. It encrypts with its own encryptor under fresh keys and exposes
    only the resulting traffic; the encryptor and private keys stay inside.

    Parameters
    ----------
    encryptor : HanNetwork
        The victim's encryptor, private or original.
    cfg : AheConfig
        Scheme parameters.
    client : int
        The victim's aggregator slot.
    """

    def __init__(self, encryptor, cfg: AheConfig, client: int = 0):
        self._encryptor = encryptor
        self.cfg = cfg
        self.client = client

    @torch.no_grad()
    def intercept(self, n: int, generator: Optional[torch.Generator] = None) -> InterceptedTraffic:
        """Traffic of ``n`` uniformly drawn plaintexts."""
        return self.upload(uniform_plaintexts(n, self.cfg, generator).m, generator)

    @torch.no_grad()
    def upload(self, values, generator: Optional[torch.Generator] = None) -> InterceptedTraffic:
        """Traffic of the victim encrypting ``values``, clipped to ``[-psi, psi]``."""
        m = PlaintextBatch.from_values(values, self.cfg.psi)
        keys, pk = keygen(len(m), self.cfg, generator)
        c = encrypt(self._encryptor, m, keys, self.cfg)
        return InterceptedTraffic(CiphertextBatch(c.c.detach().cpu()), pk, m.m)


@dataclass
class KmaConfig:
    """
    Parameters
    ----------
    steps : int
        Maximum training steps per attacker.
    batch_size : int
        Samples per step.
    lr : float
        AdamW learning rate.
    eval_size : int
        Samples used for evaluation.
    depth : str
        ``standard`` or ``double`` attacker networks.
    plateau_window, plateau_tol
        Early-stop settings.
    seed : int
        Seed of every random stream.
    """

    steps: int = 20000
    batch_size: int = 4096
    lr: float = 1e-4
    eval_size: int = 100000
    depth: str = "standard"
    plateau_window: int = 200
    plateau_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_size < 1:
            raise InvalidArgumentError("steps, batch_size and eval_size must be >= 1")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if self.depth not in ("standard", "double"):
            raise InvalidArgumentError(f"unknown depth {self.depth!r}")

    @classmethod
    def micro(cls, **overrides) -> "KmaConfig":
        params = dict(steps=300, batch_size=256, lr=1e-3, eval_size=4096, plateau_window=50)
        params.update(overrides)
        return cls(**params)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, eval_size=self.eval_size,
            plateau_window=self.plateau_window, plateau_tol=self.plateau_tol, seed=self.seed,
        )


@dataclass
class KmaResult:
    """crack_1 sees ``(c, pk)``, crack_2 sees ``c`` only."""

    crack1: torch.nn.Module
    crack2: torch.nn.Module
    stats_original: Dict[str, EvalStats] = field(default_factory=dict)
    stats_target: Dict[str, EvalStats] = field(default_factory=dict)
    curves: Dict[str, List[float]] = field(default_factory=dict)


@torch.no_grad()
def evaluate_on_traffic(atk, traffic: InterceptedTraffic) -> EvalStats:
    guess = attack_forward(atk, traffic.c, traffic.pk if atk.role == "attacker_pk" else None)
    return l1_stats(guess.cpu(), traffic.m_true)


def train_kma_attackers(original_encryptor, target: ClientTrafficSource, cfg: AheConfig, kma_cfg: KmaConfig) -> KmaResult:
    """
    Train crack_1 and crack_2 on traffic of the public original encryptor, then score
    them on the target client's intercepted traffic.

    Parameters
    ----------
    original_encryptor : HanNetwork
        The public original model, e.g. ``bundle.original_encryptor()``.
    target : ClientTrafficSource
        The victim under attack. Only its traffic is used.
    cfg : AheConfig
        Scheme parameters.
    kma_cfg : KmaConfig
        Attacker training settings.

    Returns
    -------
    KmaResult

    Raises
    ------
    ContractViolationError
        If ``original_encryptor`` is a private model.
    """
    print(format_stage_name("known model attack"))
    require_public(original_encryptor, "the encryptor given to train_kma_attackers")
    if not isinstance(target, ClientTrafficSource):
        raise ContractViolationError("the target must be a traffic source, not a model")

    generator = make_generator(kma_cfg.seed, 0x4B, 0)
    cracks = {
        "crack1": make_attacker(cfg, True, kma_cfg.depth),
        "crack2": make_attacker(cfg, False, kma_cfg.depth),
    }
    for net in cracks.values():
        net.reset_parameters(generator)
        net.to(next(original_encryptor.parameters()).device)

    print("    * TRAIN CRACKS ON THE ORIGINAL MODEL")
    with frozen(original_encryptor):
        curves, _ = fit_attackers(
            cracks, encryptor_traffic(original_encryptor, cfg), kma_cfg.train_config(), kma_cfg.steps, generator
        )

    print("    * EVALUATE AGAINST THE TARGET'S TRAFFIC")
    eval_generator = make_generator(kma_cfg.seed, 0x4B, 1)
    traffic = target.intercept(kma_cfg.eval_size, make_generator(kma_cfg.seed, 0x4B, 2))
    result = KmaResult(cracks["crack1"], cracks["crack2"], curves=curves)
    for name, net in cracks.items():
        result.stats_original[name] = evaluate_attacker(original_encryptor, net, cfg, kma_cfg.eval_size, eval_generator)
        result.stats_target[name] = evaluate_on_traffic(net, traffic)
        print(f"      {name}: mean L1 {result.stats_target[name].mean_l1:.6f} against the target")
    return result
