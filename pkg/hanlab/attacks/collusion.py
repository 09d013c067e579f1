# HANLAB
# ***
# Pseudo N-1 collusion attacks: based on the original model, and on a public dataset

from typing import List, Optional, Tuple

import torch

from hanlab.ahe.config import AheConfig
from hanlab.ahe.ops import aggregate, encrypt, keygen
from hanlab.ahe.types import CiphertextBatch, PublicKeyBatch
from hanlab.attacks.kma import ClientTrafficSource, require_public
from hanlab.attacks.reports import AttackReport
from hanlab.errors import InvalidArgumentError
from hanlab.ppu.datasets import PublicDataset
from hanlab.tools.runtime import make_generator
from hanlab.training.data import uniform_plaintexts

PARTICIPANTS = 3


def guess_message(m_agg, m_known, m_att):
    """``m_agg - m_known - m_att``: the collusion estimate of the victim's plaintext."""
    return m_agg - m_known - m_att


def _attacker_slot(aggregator, cfg: AheConfig, alice: int, bob: int) -> int:
    arity = aggregator.in_width // cfg.upload_width
    if arity != PARTICIPANTS:
        raise InvalidArgumentError(f"pseudo collusion needs a {PARTICIPANTS}-client aggregator, got {arity} clients")
    if alice == bob or not (0 <= alice < arity and 0 <= bob < arity):
        raise InvalidArgumentError(f"alice ({alice}) and bob ({bob}) must be distinct slots of the aggregator")
    return ({0, 1, 2} - {alice, bob}).pop()


@torch.no_grad()
def _own_upload(attacker_encryptor, cfg: AheConfig, n: int, generator) -> Tuple[torch.Tensor, CiphertextBatch, PublicKeyBatch]:
    m = uniform_plaintexts(n, cfg, generator)
    keys, pk = keygen(n, cfg, generator)
    return m.m, encrypt(attacker_encryptor, m, keys, cfg), pk


@torch.no_grad()
def _collude(aggregator, cfg, slots, ciphertexts, pks) -> torch.Tensor:
    ordered_c: List[Optional[CiphertextBatch]] = [None] * PARTICIPANTS
    ordered_pk: List[Optional[PublicKeyBatch]] = [None] * PARTICIPANTS
    for slot, c, pk in zip(slots, ciphertexts, pks):
        ordered_c[slot] = CiphertextBatch(c.c.to(next(aggregator.parameters()).device))
        ordered_pk[slot] = pk
    return aggregate(aggregator, ordered_c, ordered_pk).cpu()


def pcaom(
    alice: ClientTrafficSource,
    bob_original,
    attacker_encryptor,
    aggregator,
    cfg: AheConfig,
    n_samples: int = 2000,
    bob: int = 1,
    seed: int = 0,
) -> AttackReport:
    """
    Pseudo collusion on the original model: the attacker encrypts a message of its
    own, plays Bob with the public original encryptor, aggregates with Alice's
    intercepted upload and subtracts the two known plaintexts.

    Parameters
    ----------
    alice : ClientTrafficSource
        The victim; only its ``(c, pk)`` traffic is used.
    bob_original : HanNetwork
        The public original encryptor standing in for Bob's private one.
    attacker_encryptor : HanNetwork
        The colluding attacker's own encryptor.
    aggregator : HanNetwork
        The latest aggregator, with three client slots.
    cfg : AheConfig
        Scheme parameters.
    n_samples : int, optional
        Samples attacked. Defaults to 2000.
    bob : int, optional
        Bob's aggregator slot. Alice's is ``alice.client``; the attacker takes the third.
    seed : int, optional
        Seed of the attacker's and Alice's random streams.

    Returns
    -------
    AttackReport

    Raises
    ------
    ContractViolationError
        If ``bob_original`` is a private model.
    InvalidArgumentError
        If the aggregator does not take exactly three clients.
    """
    require_public(bob_original, "the encryptor used for Bob")
    attacker = _attacker_slot(aggregator, cfg, alice.client, bob)
    generator = make_generator(seed, 0xCA, 0)

    traffic = alice.intercept(n_samples, make_generator(seed, 0xCA, 1))
    m_b, c_b, pk_b = _own_upload(bob_original, cfg, n_samples, generator)
    m_att, c_att, pk_att = _own_upload(attacker_encryptor, cfg, n_samples, generator)

    m_agg = _collude(aggregator, cfg, (alice.client, bob, attacker), (traffic.c, c_b, c_att), (traffic.pk, pk_b, pk_att))
    guesses = guess_message(m_agg, m_b, m_att)
    return AttackReport.from_guesses("PCAOM", guesses, traffic.m_true, {"n_samples": n_samples, "seed": seed})


def pcapd(
    alice: ClientTrafficSource,
    bob_public: PublicDataset,
    attacker_encryptor,
    aggregator,
    cfg: AheConfig,
    n_samples: int = 2000,
    seed: int = 0,
) -> AttackReport:
    """
    Pseudo collusion on a public dataset: Bob's slot is filled with ``(pk, c)`` pairs
    from his last published dataset and his plaintext is taken to be the published
    noisy value.

    Parameters
    ----------
    alice : ClientTrafficSource
        The victim; only its ``(c, pk)`` traffic is used.
    bob_public : PublicDataset
        Bob's final public dataset; its ``client_id`` is Bob's slot.
    attacker_encryptor : HanNetwork
        The colluding attacker's own encryptor.
    aggregator : HanNetwork
        The latest aggregator, with three client slots.

    Returns
    -------
    AttackReport

    Raises
    ------
    InvalidArgumentError
        If the public dataset is empty or the aggregator does not take three clients.
    """
    if len(bob_public) == 0:
        raise InvalidArgumentError("bob's public dataset is empty")
    bob = bob_public.client_id
    attacker = _attacker_slot(aggregator, cfg, alice.client, bob)
    generator = make_generator(seed, 0xCB, 0)

    traffic = alice.intercept(n_samples, make_generator(seed, 0xCB, 1))
    index = torch.randint(len(bob_public), (n_samples,), generator=generator)
    c_b, pk_b = bob_public.ciphertexts(index)
    m_b_pub = bob_public.x_noisy[index]
    m_att, c_att, pk_att = _own_upload(attacker_encryptor, cfg, n_samples, generator)

    m_agg = _collude(aggregator, cfg, (alice.client, bob, attacker), (traffic.c, c_b, c_att), (traffic.pk, pk_b, pk_att))
    guesses = guess_message(m_agg, m_b_pub, m_att)
    return AttackReport.from_guesses("PCAPD", guesses, traffic.m_true, {"n_samples": n_samples, "seed": seed})
