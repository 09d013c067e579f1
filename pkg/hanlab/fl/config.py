from dataclasses import dataclass, field
from typing import Dict, Optional

from hanlab.errors import InvalidArgumentError

DATASET_IDS = ("mnist", "fashion_mnist", "cifar10")
ARCHITECTURES = ("cnn", "resnet8")
DEFAULT_ARCHITECTURE = {"mnist": "cnn", "fashion_mnist": "cnn", "cifar10": "resnet8"}


@dataclass
class FlConfig:
    """
    Configuration of a federated averaging run.

    Parameters
    ----------
    dataset : str
        ``mnist``, ``fashion_mnist`` or ``cifar10``.
    train_size, test_size : int
        Stratified subset sizes drawn from the training and test splits.
    rounds : int
        Federated rounds ``T``.
    local_epochs : int
        Local epochs per round.
    num_clients : int
        Clients ``N``; must match the aggregator arity in HANs runs.
    architecture : str, optional
        ``cnn`` or ``resnet8``. Defaults to ``cnn`` for the IDX datasets and ``resnet8`` for CIFAR-10.
    batch_size : int
        Local mini-batch size.
    lr : float
        Local SGD learning rate.
    delta_budget : float
        Accepted accuracy loss ``plain - hans``.
    workers : int
        Threads used for local training. 1 trains clients sequentially.
    data_dir : str, optional
        Dataset cache. Defaults to ``HANLAB_DATA_DIR`` or ``~/.cache/hanlab``.
    download : bool
        Whether missing archives may be fetched.
    checksums : dict of str -> str
        Pinned SHA-256 digests per archive file name.
    seed : int
        Seed of model initialisation, subsetting, sharding and data order.
    """

    dataset: str = "mnist"
    train_size: int = 5000
    test_size: int = 1000
    rounds: int = 10
    local_epochs: int = 1
    num_clients: int = 3
    architecture: Optional[str] = None
    batch_size: int = 32
    lr: float = 0.05
    delta_budget: float = 0.02
    workers: int = 1
    data_dir: Optional[str] = None
    download: bool = True
    checksums: Dict[str, str] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.dataset not in DATASET_IDS:
            raise InvalidArgumentError(f"dataset must be one of {DATASET_IDS}, got {self.dataset!r}")
        if self.architecture is None:
            self.architecture = DEFAULT_ARCHITECTURE[self.dataset]
        if self.architecture not in ARCHITECTURES:
            raise InvalidArgumentError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        for name in ("train_size", "test_size", "rounds", "local_epochs", "num_clients", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.train_size < self.num_clients:
            raise InvalidArgumentError("train_size must give every client at least one sample")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")

    @classmethod
    def micro(cls, **overrides) -> "FlConfig":
        params = dict(train_size=2000, test_size=500, rounds=5)
        params.update(overrides)
        return cls(**params)

    def comparable(self) -> dict:
        """Fields that must agree between a plain and a HANs run."""
        keep = ("dataset", "train_size", "test_size", "rounds", "local_epochs", "num_clients",
                "architecture", "batch_size", "lr", "seed")
        return {k: getattr(self, k) for k in keep}
