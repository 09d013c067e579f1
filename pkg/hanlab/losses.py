# HANLAB
# ***
# Losses: training objectives (MSE scale) and L1 evaluation statistics

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from hanlab.ahe.ops import aggregate, attack_forward, encrypt
from hanlab.ahe.types import CiphertextBatch, KeyBatch, PlaintextBatch, PublicKeyBatch
from hanlab.errors import InvalidArgumentError

Number = Union[float, torch.Tensor]


@dataclass
class LossConfig:
    """
    Parameters
    ----------
    gamma : float
        Security coefficient on the MSE scale. Attacker losses above ``gamma`` stop
        contributing to the encryptor objective.
    lambda_ : float
        Weight of the aggregation loss in the final objective.
    """

    gamma: float = 0.015
    lambda_: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgumentError(f"gamma must be >= 0, got {self.gamma}")
        if not self.lambda_ > 0:
            raise InvalidArgumentError(f"lambda_ must be > 0, got {self.lambda_}")


@dataclass
class EvalStats:
    """
    L1 evaluation statistics of ``a`` against ``b``.

    ``std_mean`` and ``std_max`` are the spread of the chunk-wise mean and maximum
    absolute differences; ``mad`` is the mean absolute difference and ``var`` the
    variance of the signed difference.
    """

    mean_l1: float
    max_l1: float
    std_mean: float
    std_max: float
    mad: float
    var: float

    @classmethod
    def zeros(cls) -> "EvalStats":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _check_lengths(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(a, b) -> torch.Tensor:
    """Mean of squared differences."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b, dtype=a.dtype, device=a.device)
    _check_lengths(a, b)
    return F.mse_loss(a, b)


def l1_stats(a, b, n_chunks: int = 10) -> EvalStats:
    """
    Manhattan-distance statistics used for every evaluation.

    Parameters
    ----------
    a, b : array-like
        Equal-length vectors.
    n_chunks : int, optional
        Number of contiguous chunks over which ``std_mean`` / ``std_max`` are measured.

    Returns
    -------
    EvalStats
    """
    a = torch.as_tensor(a, dtype=torch.float64).detach().cpu().reshape(-1)
    b = torch.as_tensor(b, dtype=torch.float64).detach().cpu().reshape(-1)
    _check_lengths(a, b)
    if a.numel() == 0:
        raise InvalidArgumentError("l1_stats needs at least one element")

    signed = a - b
    diff = signed.abs()
    chunks = torch.chunk(diff, min(n_chunks, diff.numel()))
    chunk_means = torch.stack([c.mean() for c in chunks])
    chunk_maxes = torch.stack([c.max() for c in chunks])
    return EvalStats(
        mean_l1=float(diff.mean()),
        max_l1=float(diff.max()),
        std_mean=float(chunk_means.std(unbiased=False)),
        std_max=float(chunk_maxes.std(unbiased=False)),
        mad=float(diff.mean()),
        var=float(signed.var(unbiased=False)),
    )


def guess_loss(atk, c: CiphertextBatch, m: torch.Tensor, pk: Optional[PublicKeyBatch] = None) -> torch.Tensor:
    """MSE between plaintexts ``m`` and the attacker's guesses from ``c`` (and ``pk``)."""
    guess = attack_forward(atk, c, pk)
    return mse(guess, m.to(guess.device))


def attacker_loss(
    enc, atk_nopk, batch: PlaintextBatch, keys: KeyBatch, cfg, ciphertexts: Optional[CiphertextBatch] = None
) -> torch.Tensor:
    """
    MSE between the true plaintexts and a ciphertext-only attacker's guesses.

    Pass ``ciphertexts`` to reuse an encryption of ``batch`` under ``keys`` already made by ``enc``.
    """
    if getattr(atk_nopk, "role", None) != "attacker_nopk":
        raise InvalidArgumentError("attacker_loss needs an attacker_nopk network")
    c = ciphertexts if ciphertexts is not None else encrypt(enc, batch, keys, cfg)
    return guess_loss(atk_nopk, c, batch.m)


def attacker_loss_pk(
    enc, atk_pk, batch: PlaintextBatch, keys: KeyBatch, cfg, ciphertexts: Optional[CiphertextBatch] = None
) -> torch.Tensor:
    """MSE between the true plaintexts and the guesses of an attacker that also sees ``pk``."""
    if getattr(atk_pk, "role", None) != "attacker_pk":
        raise InvalidArgumentError("attacker_loss_pk needs an attacker_pk network")
    c = ciphertexts if ciphertexts is not None else encrypt(enc, batch, keys, cfg)
    return guess_loss(atk_pk, c, batch.m, keys.public())


def _check_clients(bundle, batches: Sequence[PlaintextBatch], keys: Sequence[KeyBatch]) -> None:
    if len(batches) != bundle.num_clients or len(keys) != bundle.num_clients:
        raise InvalidArgumentError(
            f"expected {bundle.num_clients} client batches, got {len(batches)} plaintext / {len(keys)} key batches"
        )
    lengths = {len(b) for b in batches} | {len(k) for k in keys}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"client batches differ in length: {sorted(lengths)}")


def _encrypt_all(bundle, batches, keys) -> List[CiphertextBatch]:
    return [encrypt(bundle.encryptor(i), b, k, bundle.cfg) for i, (b, k) in enumerate(zip(batches, keys))]


def _aggregation_mse(bundle, batches, keys, ciphertexts) -> torch.Tensor:
    pks = [k.public() for k in keys]
    m_agg = aggregate(bundle.aggregator, ciphertexts, pks)
    target = torch.stack([b.m for b in batches]).sum(dim=0).to(m_agg.device)
    return mse(m_agg, target)


def aggregation_loss(bundle, batches: Sequence[PlaintextBatch], keys: Sequence[KeyBatch]) -> torch.Tensor:
    """MSE between the element-wise plaintext sum and the aggregator output."""
    _check_clients(bundle, batches, keys)
    return _aggregation_mse(bundle, batches, keys, _encrypt_all(bundle, batches, keys))


@dataclass
class ObjectiveTerms:
    """Aggregation loss plus each client's ``(no-pk, pk)`` attacker losses."""

    aggregation: torch.Tensor
    attackers: Dict[int, Tuple[torch.Tensor, torch.Tensor]]

    def attacker_values(self) -> List[torch.Tensor]:
        return [v for pair in self.attackers.values() for v in pair]


def objective_terms(bundle, batches: Sequence[PlaintextBatch], keys: Sequence[KeyBatch]) -> ObjectiveTerms:
    """
    Encrypt every client batch once and evaluate the aggregation loss and the standard
    attackers of each client on the same ciphertexts.
    """
    _check_clients(bundle, batches, keys)
    ciphertexts = _encrypt_all(bundle, batches, keys)
    agg = _aggregation_mse(bundle, batches, keys, ciphertexts)
    attackers = {}
    for i, (b, k, c) in enumerate(zip(batches, keys, ciphertexts)):
        enc = bundle.encryptor(i)
        nopk = attacker_loss(enc, bundle.attacker(i, False), b, k, bundle.cfg, ciphertexts=c)
        pk = attacker_loss_pk(enc, bundle.attacker(i, True), b, k, bundle.cfg, ciphertexts=c)
        attackers[i] = (nopk, pk)
    return ObjectiveTerms(agg, attackers)


def hinge(value: Number, gamma: float) -> Number:
    """``max(0, gamma - value)``; lies in ``[0, gamma]`` for nonnegative losses."""
    if isinstance(value, torch.Tensor):
        return torch.clamp(gamma - value, min=0.0)
    return max(0.0, gamma - value)


def capped(value: Number, cap: Optional[float]) -> Number:
    """``min(value, cap)``; ``cap=None`` leaves ``value`` untouched."""
    if cap is None:
        return value
    if isinstance(value, torch.Tensor):
        return torch.clamp(value, max=cap)
    return min(value, cap)


def compose_pretrain(
    aggregation: Number, attacker_terms: Sequence[Number], attacker_weight: float = 1.0, cap: Optional[float] = None
) -> Number:
    """
    ``aggregation - attacker_weight * sum(min(attacker, cap))``.

    Without a cap the attacker terms are unbounded and the objective can be driven to
    minus infinity by inflating the encryptor output.
    """
    return aggregation - attacker_weight * sum(capped(v, cap) for v in attacker_terms)


def compose_final(aggregation: Number, attacker_terms: Sequence[Number], gamma: float, lambda_: float) -> Number:
    return lambda_ * aggregation + sum(hinge(v, gamma) for v in attacker_terms)


def pretrain_objective(bundle, batches, keys, attacker_weight: float = 1.0, cap: Optional[float] = None) -> torch.Tensor:
    """
    Aggregation loss minus every attacker loss, the computational pre-training objective.

    With ``attacker_weight=0`` it reduces to the plain aggregation loss.
    """
    terms = objective_terms(bundle, batches, keys)
    return compose_pretrain(terms.aggregation, terms.attacker_values(), attacker_weight, cap)


def final_objective(bundle, batches, keys, cfg: LossConfig) -> torch.Tensor:
    """
    ``lambda * aggregation + sum(max(0, gamma - attacker loss))`` over all attacker slots.
    """
    terms = objective_terms(bundle, batches, keys)
    return compose_final(terms.aggregation, terms.attacker_values(), cfg.gamma, cfg.lambda_)
