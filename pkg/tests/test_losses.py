import pytest
import torch
import torch.nn as nn

from hanlab.ahe import AheConfig, KeyBatch, PlaintextBatch, build_models, keygen
from hanlab.errors import InvalidArgumentError
from hanlab.losses import (
    LossConfig,
    aggregation_loss,
    attacker_loss,
    attacker_loss_pk,
    compose_final,
    compose_pretrain,
    final_objective,
    hinge,
    l1_stats,
    mse,
    objective_terms,
    pretrain_objective,
)
from hanlab.tools.runtime import make_generator
from hanlab.training import gen_batch


def test_hinge_is_clamped_to_zero():
    assert hinge(0.02, 0.015) == 0.0
    assert hinge(0.005, 0.015) == pytest.approx(0.01)
    assert hinge(torch.tensor(0.0), 0.015).item() == pytest.approx(0.015)


def test_compose_values():
    assert compose_pretrain(0.5, [0.1, 0.2]) == pytest.approx(0.2)
    assert compose_pretrain(0.5, [0.1, 0.2], attacker_weight=0.0) == pytest.approx(0.5)
    assert compose_final(0.5, [0.1, 0.005], gamma=0.015, lambda_=2.0) == pytest.approx(1.01)


def test_compose_final_gradient_matches_finite_differences():
    agg = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
    atk = torch.tensor(0.004, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: compose_final(a, [b], 0.015, 1.5), (agg, atk))


def test_hinge_has_no_gradient_above_gamma():
    value = torch.tensor(0.5, requires_grad=True)
    hinge(value, 0.015).backward()
    assert value.grad.item() == 0.0


def test_mse_rejects_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        mse(torch.zeros(3), torch.zeros(4))


def test_l1_stats_values():
    stats = l1_stats(torch.tensor([1.0, 2.0, 3.0, 4.0]), torch.tensor([1.0, 1.0, 1.0, 1.0]), n_chunks=2)
    assert stats.mean_l1 == pytest.approx(1.5)
    assert stats.max_l1 == pytest.approx(3.0)
    assert stats.mad == pytest.approx(stats.mean_l1)
    # chunk means 0.5 and 2.5, chunk maxes 1 and 3
    assert stats.std_mean == pytest.approx(1.0)
    assert stats.std_max == pytest.approx(1.0)
    # signed differences 0, 1, 2, 3
    assert stats.var == pytest.approx(1.25)


def test_l1_stats_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        l1_stats(torch.zeros(0), torch.zeros(0))


def test_loss_config_validation():
    with pytest.raises(InvalidArgumentError):
        LossConfig(gamma=-0.1)
    with pytest.raises(InvalidArgumentError):
        LossConfig(lambda_=0.0)


def test_objectives_are_consistent(bundle):
    batch = gen_batch(64, bundle.cfg, make_generator(0, 9))
    terms = objective_terms(bundle, batch.plaintexts, batch.keys)
    assert len(terms.attacker_values()) == 2 * bundle.num_clients

    agg = aggregation_loss(bundle, batch.plaintexts, batch.keys)
    assert agg.item() == pytest.approx(terms.aggregation.item(), rel=1e-5)
    assert pretrain_objective(bundle, batch.plaintexts, batch.keys, attacker_weight=0.0).item() == pytest.approx(
        agg.item(), rel=1e-5
    )

    cfg = LossConfig(gamma=0.015, lambda_=2.0)
    expected = compose_final(terms.aggregation, terms.attacker_values(), cfg.gamma, cfg.lambda_)
    assert final_objective(bundle, batch.plaintexts, batch.keys, cfg).item() == pytest.approx(expected.item(), rel=1e-5)


def test_objective_rejects_wrong_client_count(bundle):
    batch = gen_batch(8, bundle.cfg)
    with pytest.raises(InvalidArgumentError):
        aggregation_loss(bundle, batch.plaintexts[:2], batch.keys[:2])


def test_compose_pretrain_caps_attacker_terms():
    assert compose_pretrain(0.5, [10.0, 0.1], cap=0.3) == pytest.approx(0.1)
    assert compose_pretrain(0.5, [10.0, 0.1], attacker_weight=0.5, cap=0.3) == pytest.approx(0.3)

    runaway = torch.tensor(50.0, requires_grad=True)
    value = compose_pretrain(torch.tensor(0.2), [runaway], cap=1.0 / 3)
    value.backward()
    assert value.item() == pytest.approx(0.2 - 1.0 / 3)
    assert runaway.grad.item() == 0.0


class _Stub(nn.Module):
    """A parameter-free network with a fixed role and forward function."""

    def __init__(self, role, fn, in_width=None):
        super().__init__()
        self.role = role
        self.fn = fn
        self.in_width = in_width

    def forward(self, x):
        return self.fn(x)


class _StubBundle:
    def __init__(self, cfg, encryptor, aggregator, attackers):
        self.cfg = cfg
        self.num_clients = cfg.num_clients
        self.aggregator = aggregator
        self._encryptor = encryptor
        self._attackers = attackers

    def encryptor(self, client):
        return self._encryptor

    def attacker(self, client, with_pk, depth="standard"):
        return self._attackers[with_pk]


def _read_m(x):
    return x[:, :1]


def _repeat_encryptor(cfg):
    return _Stub("encryptor", lambda x: x[:, :1].repeat(1, cfg.ciphertext_len))


def _zeros(role, in_width=None):
    return _Stub(role, lambda x: torch.zeros(x.shape[0], 1, dtype=x.dtype), in_width)


def _uniform_batch(cfg, n, seed):
    generator = make_generator(seed, 1)
    m = PlaintextBatch((torch.rand(n, generator=generator) * 2 - 1) * cfg.psi, cfg.psi)
    keys, _ = keygen(n, cfg, generator)
    return m, keys


def test_attacker_loss_of_perfect_and_blind_attackers():
    cfg = AheConfig()
    enc = _repeat_encryptor(cfg)
    m, keys = _uniform_batch(cfg, 20000, seed=3)
    assert attacker_loss(enc, _Stub("attacker_nopk", _read_m), m, keys, cfg).item() == 0.0
    assert attacker_loss_pk(enc, _Stub("attacker_pk", _read_m), m, keys, cfg).item() == 0.0
    # a zero guess scores E[m^2] = psi^2 / 3
    assert attacker_loss(enc, _zeros("attacker_nopk"), m, keys, cfg).item() == pytest.approx(1.0 / 3, abs=0.02)
    assert attacker_loss_pk(enc, _zeros("attacker_pk"), m, keys, cfg).item() == pytest.approx(1.0 / 3, abs=0.02)
    with pytest.raises(InvalidArgumentError):
        attacker_loss(enc, _zeros("attacker_pk"), m, keys, cfg)


def test_aggregator_guessing_zero_scores_the_sum_variance():
    cfg = AheConfig()
    aggregator = _zeros("aggregator", in_width=cfg.num_clients * cfg.upload_width)
    stub = _StubBundle(cfg, _repeat_encryptor(cfg), aggregator, {})
    batch = gen_batch(20000, cfg, make_generator(0, 4))
    # sum of three U(-1, 1) draws has variance 1
    assert aggregation_loss(stub, batch.plaintexts, batch.keys).item() == pytest.approx(1.0, abs=0.05)


def test_objective_terms_use_the_attacker_losses():
    cfg = AheConfig()
    attackers = {False: _Stub("attacker_nopk", _read_m), True: _zeros("attacker_pk")}
    aggregator = _zeros("aggregator", in_width=cfg.num_clients * cfg.upload_width)
    stub = _StubBundle(cfg, _repeat_encryptor(cfg), aggregator, attackers)
    batch = gen_batch(4096, cfg, make_generator(0, 5))
    terms = objective_terms(stub, batch.plaintexts, batch.keys)
    for client, (nopk, pk) in terms.attackers.items():
        m, keys = batch.plaintexts[client], batch.keys[client]
        assert nopk.item() == 0.0
        assert pk.item() == pytest.approx(attacker_loss_pk(stub.encryptor(client), attackers[True], m, keys, cfg).item())


def _central_difference(loss_fn, param, index, h=1e-6):
    flat = param.data.view(-1)
    saved = flat[index].item()
    flat[index] = saved + h
    plus = loss_fn().item()
    flat[index] = saved - h
    minus = loss_fn().item()
    flat[index] = saved
    return (plus - minus) / (2 * h)


@pytest.mark.parametrize("with_pk", [False, True])
def test_attacker_loss_gradients_match_finite_differences(ahe_cfg, with_pk):
    bundle = build_models(ahe_cfg)
    enc = bundle.encryptor(0).double()
    atk = bundle.attacker(0, with_pk).double()
    generator = make_generator(0, 6)
    m = PlaintextBatch((torch.rand(32, generator=generator, dtype=torch.float64) * 2 - 1) * ahe_cfg.psi, ahe_cfg.psi)
    span = ahe_cfg.key_high - ahe_cfg.key_low
    keys = KeyBatch(
        torch.rand(32, generator=generator, dtype=torch.float64) * span + ahe_cfg.key_low,
        torch.rand(32, generator=generator, dtype=torch.float64) * span + ahe_cfg.key_low,
    )
    loss_fn = attacker_loss_pk if with_pk else attacker_loss

    def compute():
        return loss_fn(enc, atk, m, keys, ahe_cfg)

    compute().backward()
    for net in (enc, atk):
        for param in (net.expand.weight, net.head.weight):
            for index in (0, param.numel() // 2):
                analytic = param.grad.view(-1)[index].item()
                with torch.no_grad():
                    numeric = _central_difference(compute, param, index)
                assert numeric == pytest.approx(analytic, rel=1e-2, abs=1e-7)
