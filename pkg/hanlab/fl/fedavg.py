# HANLAB
# ***
# Federated averaging with and without HANs-encrypted uploads

import copy
import hashlib
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.metrics import accuracy_score

from hanlab.ahe.bundle import ModelBundle
from hanlab.ahe.config import AheConfig
from hanlab.ahe.networks import weight_digest
from hanlab.ahe.ops import aggregate, encrypt, keygen
from hanlab.ahe.types import CiphertextBatch, PlaintextBatch, PublicKeyBatch
from hanlab.errors import ContractViolationError, InvalidArgumentError
from hanlab.fl.codec import ParamCodec
from hanlab.fl.config import FlConfig
from hanlab.fl.datasets import ImageDataset, load_dataset, partition, subset_dataset
from hanlab.fl.task_models import build_task_model
from hanlab.losses import EvalStats, l1_stats
from hanlab.tools.logging import format_stage_name
from hanlab.tools.runtime import make_generator, resolve_device

LOCAL_SALT = 0xF1
KEY_SALT = 0xF2
CHUNK = 65536


@dataclass
class RoundTrace:
    """
    One federated round.

    ``aggregation`` compares the HANs average with the plain average of the very
    same clipped client vectors; it is None in plain runs.
    """

    round: int
    client_digests: Dict[int, str]
    accuracy: float
    wall_seconds: float
    aggregation: Optional[EvalStats] = None
    clip_count: int = 0

    def to_record(self) -> Dict[str, Any]:
        record = {
            "round": self.round,
            "client_digests": {str(k): v for k, v in self.client_digests.items()},
            "accuracy": self.accuracy,
            "wall_seconds": self.wall_seconds,
            "clip_count": self.clip_count,
        }
        if self.aggregation is not None:
            record["mean_diff"] = self.aggregation.mean_l1
            record["max_diff"] = self.aggregation.max_l1
        return record


@dataclass
class FlRunResult:
    mode: str
    model: nn.Module
    accuracy: float
    traces: List[RoundTrace]
    cfg: FlConfig

    def summary(self) -> Dict[str, Any]:
        """Mean and spread across rounds of the per-round average and maximum aggregation differences."""
        out: Dict[str, Any] = {"mode": self.mode, "dataset": self.cfg.dataset, "accuracy": self.accuracy}
        stats = [t.aggregation for t in self.traces if t.aggregation is not None]
        if stats:
            means = [s.mean_l1 for s in stats]
            maxes = [s.max_l1 for s in stats]
            out.update(
                mean_avg_diff=statistics.fmean(means),
                std_avg_diff=statistics.pstdev(means),
                mean_max_diff=statistics.fmean(maxes),
                std_max_diff=statistics.pstdev(maxes),
            )
        return out

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"mode": self.mode, "dataset": self.cfg.dataset, **t.to_record()} for t in self.traces]


@dataclass
class DeltaReport:
    """``delta = plain - hans``; ``change = hans - plain`` is the signed accuracy change HANs causes."""

    dataset: str
    plain_accuracy: float
    hans_accuracy: float
    delta: float
    change: float
    delta_budget: float
    within_budget: bool

    def to_record(self) -> Dict[str, Any]:
        return dict(vars(self))


@dataclass(frozen=True)
class Upload:
    """What a client sends in a HANs round. There is no plaintext in it."""

    client: int
    c: CiphertextBatch
    pk: PublicKeyBatch


class FlClient:
    """
    A client holding one data shard. Local training always consumes the stream
    ``(seed, client, round)`` so plain and HANs runs see identical data order.
    """

    def __init__(self, client_id: int, x: np.ndarray, y: np.ndarray, cfg: FlConfig, device: torch.device):
        self.client_id = client_id
        self.x = torch.from_numpy(np.ascontiguousarray(x))
        self.y = torch.from_numpy(np.ascontiguousarray(y))
        self.cfg = cfg
        self.device = device

    def local_train(self, model: nn.Module, round: int) -> nn.Module:
        generator = make_generator(self.cfg.seed, LOCAL_SALT, self.client_id, round)
        optimizer = torch.optim.SGD(model.parameters(), lr=self.cfg.lr)
        model.train()
        for _ in range(self.cfg.local_epochs):
            order = torch.randperm(len(self.y), generator=generator)
            for start in range(0, len(order), self.cfg.batch_size):
                index = order[start:start + self.cfg.batch_size]
                optimizer.zero_grad()
                logits = model(self.x[index].to(self.device))
                F.cross_entropy(logits, self.y[index].to(self.device)).backward()
                optimizer.step()
        return model


class HansClient(FlClient):
    """A client that uploads its parameters encrypted with its own encryptor under fresh keys."""

    def __init__(self, client_id, x, y, cfg: FlConfig, device, encryptor, ahe: AheConfig):
        super().__init__(client_id, x, y, cfg, device)
        self._encryptor = encryptor
        self.ahe = ahe

    @torch.no_grad()
    def upload(self, m: PlaintextBatch, round: int) -> Upload:
        generator = make_generator(self.cfg.seed, KEY_SALT, self.client_id, round)
        keys, pk = keygen(len(m), self.ahe, generator)
        parts = []
        for start in range(0, len(m), CHUNK):
            chunk = slice(start, start + CHUNK)
            c = encrypt(self._encryptor, PlaintextBatch(m.m[chunk], m.psi), keys.select(chunk), self.ahe)
            parts.append(c.c.cpu())
        return Upload(self.client_id, CiphertextBatch(torch.cat(parts)), pk)


class HansServer:
    """
    The aggregation server. It only ever receives :class:`Upload` objects, sums them
    with the aggregator network and divides by ``N``. Public keys are remembered so
    a key vector seen twice is rejected.
    """

    def __init__(self, aggregator, ahe: AheConfig):
        self.aggregator = aggregator
        self.ahe = ahe
        self.seen_keys: Set[str] = set()

    def _check_keys(self, uploads: Sequence[Upload]) -> None:
        for upload in uploads:
            digest = hashlib.sha256(upload.pk.pk.detach().cpu().numpy().tobytes()).hexdigest()
            if digest in self.seen_keys:
                raise ContractViolationError(f"client {upload.client} reused a key vector; keys are one-time pads")
            self.seen_keys.add(digest)

    @torch.no_grad()
    def aggregate(self, uploads: Sequence[Upload]) -> torch.Tensor:
        if sorted(u.client for u in uploads) != list(range(self.ahe.num_clients)):
            raise InvalidArgumentError(f"expected one upload per slot 0..{self.ahe.num_clients - 1}")
        if len({len(u.c) for u in uploads}) != 1:
            raise InvalidArgumentError("uploads differ in length")
        self._check_keys(uploads)
        ordered = sorted(uploads, key=lambda u: u.client)
        total = len(ordered[0].c)
        parts = []
        for start in range(0, total, CHUNK):
            chunk = slice(start, start + CHUNK)
            parts.append(
                aggregate(
                    self.aggregator,
                    [CiphertextBatch(u.c.c[chunk]) for u in ordered],
                    [PublicKeyBatch(u.pk.pk[chunk]) for u in ordered],
                ).cpu()
            )
        return torch.cat(parts) / len(ordered)


@torch.no_grad()
def evaluate_accuracy(model: nn.Module, x: np.ndarray, y: np.ndarray, device: torch.device, batch_size: int = 1024) -> float:
    model.eval()
    predictions = []
    for start in range(0, len(y), batch_size):
        batch = torch.from_numpy(np.ascontiguousarray(x[start:start + batch_size])).to(device)
        predictions.append(model(batch).argmax(dim=-1).cpu().numpy())
    return float(accuracy_score(y, np.concatenate(predictions)))


def prepare_data(cfg: FlConfig, dataset: Optional[ImageDataset] = None) -> ImageDataset:
    """Load the configured dataset (unless given) and draw the stratified subsets."""
    if dataset is None:
        dataset = load_dataset(cfg.dataset, cfg.data_dir, cfg.download, cfg.checksums)
    return subset_dataset(dataset, cfg.train_size, cfg.test_size, cfg.seed)


def _train_clients(clients: Sequence[FlClient], global_model: nn.Module, round: int, workers: int) -> List[nn.Module]:
    def work(client):
        return client.local_train(copy.deepcopy(global_model), round)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, clients))
    return [work(client) for client in clients]


# (averaged flat parameters, aggregation stats or None, clip count)
Combine = Callable[[List[nn.Module], int], Tuple[torch.Tensor, Optional[EvalStats], int]]


def _federate(cfg: FlConfig, mode: str, clients: Sequence[FlClient], data: ImageDataset, combine: Combine, model: nn.Module) -> FlRunResult:
    device = clients[0].device
    codec = ParamCodec(model, float("inf"))
    traces = []
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        print(f"    * ROUND {t}/{cfg.rounds}")
        local_models = _train_clients(clients, model, t, cfg.workers)
        digests = {c.client_id: weight_digest(m) for c, m in zip(clients, local_models)}
        averaged, stats, clip_count = combine(local_models, t)
        codec.load_into(model, averaged)
        accuracy = evaluate_accuracy(model, data.test_x, data.test_y, device)
        traces.append(RoundTrace(t, digests, accuracy, time.perf_counter() - start, stats, clip_count))
        suffix = f", mean diff {stats.mean_l1:.6f}, max diff {stats.max_l1:.6f}" if stats is not None else ""
        print(f"      accuracy {accuracy:.4f}{suffix}")
    return FlRunResult(mode, model, traces[-1].accuracy, traces, cfg)


def _setup(cfg: FlConfig, dataset: Optional[ImageDataset], device: Optional[str]):
    data = prepare_data(cfg, dataset)
    shards = partition(data.train_x, data.train_y, cfg.num_clients, cfg.seed)
    device = resolve_device(device)
    model = build_task_model(cfg.architecture, data.input_shape, data.num_classes, cfg.seed).to(device)
    return data, shards, device, model


def fedavg_plain(cfg: FlConfig, dataset: Optional[ImageDataset] = None, device: Optional[str] = None) -> FlRunResult:
    """
    Plain federated averaging: broadcast, local training, parameter averaging.

    Parameters
    ----------
    cfg : FlConfig
        Run settings. With ``num_clients=1`` this is centralized training on one shard.
    dataset : ImageDataset, optional
        Preloaded data; otherwise ``cfg.dataset`` is loaded from the cache.
    device : str, optional
        Torch device; defaults to ``HANLAB_DEVICE``.

    Returns
    -------
    FlRunResult
        The final global model, its test accuracy and one trace per round.

    Raises
    ------
    DatasetMissingError
        If the dataset is not cached and cannot be fetched.
    """
    print(format_stage_name(f"fedavg plain {cfg.dataset}"))
    data, shards, device, model = _setup(cfg, dataset, device)
    clients = [FlClient(i, x, y, cfg, device) for i, (x, y) in enumerate(shards)]
    codec = ParamCodec(model, float("inf"))

    def combine(local_models, t):
        flats = torch.stack([codec.flatten(m) for m in local_models])
        return flats.mean(dim=0), None, 0

    return _federate(cfg, "plain", clients, data, combine, model)


def fedavg_hans(
    cfg: FlConfig, bundle: ModelBundle, dataset: Optional[ImageDataset] = None, device: Optional[str] = None
) -> FlRunResult:
    """
    Federated averaging over HANs.

    Every round each client encodes its parameters (canonical layer order, clipped
    to ``[-psi, psi]``), encrypts them scalar by scalar under fresh keys and uploads
    ``(c, pk)``. The server aggregates the uploads with the aggregator network,
    divides by ``N`` and broadcasts the decoded result. The plain average of the
    same clipped vectors is computed beside it for the round trace.

    Parameters
    ----------
    cfg : FlConfig
        Run settings; ``cfg.num_clients`` must equal the bundle's client count.
    bundle : ModelBundle
        Trained (normally post-PPU) models. Client ``i`` encrypts with ``bundle.encryptor(i)``.
    dataset : ImageDataset, optional
        Preloaded data.
    device : str, optional
        Torch device for the task models.

    Returns
    -------
    FlRunResult

    Raises
    ------
    InvalidArgumentError
        If the client count does not match the bundle.
    ContractViolationError
        If a key vector is ever uploaded twice.
    """
    if cfg.num_clients != bundle.num_clients:
        raise InvalidArgumentError(f"fl runs {cfg.num_clients} clients but the bundle encrypts for {bundle.num_clients}")
    print(format_stage_name(f"fedavg hans {cfg.dataset}"))
    ahe = bundle.cfg
    data, shards, device, model = _setup(cfg, dataset, device)
    clients = [
        HansClient(i, x, y, cfg, device, bundle.encryptor(i), ahe) for i, (x, y) in enumerate(shards)
    ]
    server = HansServer(bundle.aggregator, ahe)
    codec = ParamCodec(model, ahe.psi)

    def combine(local_models, t):
        encoded = [codec.encode(m)[0] for m in local_models]
        uploads = [client.upload(m, t) for client, m in zip(clients, encoded)]
        hans_mean = server.aggregate(uploads)
        plain_mean = torch.stack([m.m for m in encoded]).mean(dim=0)
        return hans_mean, l1_stats(hans_mean, plain_mean), sum(m.clip_count for m in encoded)

    return _federate(cfg, "hans", clients, data, combine, model)


def accuracy_delta(plain: FlRunResult, hans: FlRunResult, delta_budget: Optional[float] = None) -> DeltaReport:
    """
    The accuracy lost to encryption, ``plain - hans``, judged against a budget.

    Raises
    ------
    InvalidArgumentError
        If the two runs do not share their configuration and seed.
    """
    if plain.cfg.comparable() != hans.cfg.comparable():
        diff = {k for k, v in plain.cfg.comparable().items() if hans.cfg.comparable()[k] != v}
        raise InvalidArgumentError(f"runs differ in {sorted(diff)}")
    budget = plain.cfg.delta_budget if delta_budget is None else delta_budget
    delta = plain.accuracy - hans.accuracy
    return DeltaReport(plain.cfg.dataset, plain.accuracy, hans.accuracy, delta, -delta, budget, delta < budget)
