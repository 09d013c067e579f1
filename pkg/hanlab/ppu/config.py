from dataclasses import dataclass

from hanlab.errors import InvalidArgumentError, NoiseFloorError

NOISE_FLOOR = 0.01


@dataclass
class PpuConfig:
    """
    Configuration of the privacy-preserving update.

    Parameters
    ----------
    sigma : float
        Std of the Gaussian noise added to every published plaintext. Must exceed 0.01.
    public_size : int
        Entries per client public dataset.
    private_size : int
        Private plaintext scalars drawn per optimisation round.
    max_iterations : int
        Collaborative rounds; every client updates once per round.
    rounds_per_client : int
        Independent rounds of each client.
    lr : float
        AdamW learning rate of every optimisation round.
    weight_decay : float
        AdamW weight decay.
    optimize_steps : int
        Gradient steps taken on each sampled training set.
    workers : int
        Threads used to run independent client updates. 1 runs them sequentially.
    max_agg_l1 : float
        Fidelity gate: aggregation mean L1 after each phase must stay within it.
    eval_size : int
        Held-out scalars used for the fidelity check.
    seed : int
        Seed of every per-client random stream.
    """

    sigma: float = 0.05
    public_size: int = 1000
    private_size: int = 4096
    max_iterations: int = 5
    rounds_per_client: int = 10
    lr: float = 1e-5
    weight_decay: float = 1e-6
    optimize_steps: int = 20
    workers: int = 1
    max_agg_l1: float = 0.05
    eval_size: int = 100000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > NOISE_FLOOR:
            raise NoiseFloorError(
                f"sigma must exceed {NOISE_FLOOR}, got {self.sigma}",
                stage="ppu",
                diagnostics={"sigma": self.sigma, "noise_floor": NOISE_FLOOR},
            )
        for name in ("public_size", "private_size", "max_iterations", "rounds_per_client",
                     "optimize_steps", "workers", "eval_size"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if self.max_agg_l1 < 0:
            raise InvalidArgumentError("max_agg_l1 must be nonnegative")

    @classmethod
    def micro(cls, **overrides) -> "PpuConfig":
        params = dict(
            public_size=256,
            private_size=256,
            max_iterations=2,
            rounds_per_client=3,
            lr=1e-4,
            optimize_steps=5,
            eval_size=4096,
            max_agg_l1=float("inf"),
        )
        params.update(overrides)
        return cls(**params)
