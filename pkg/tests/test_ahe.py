import pytest
import torch

from hanlab.ahe import (
    AheConfig,
    CiphertextBatch,
    PlaintextBatch,
    PublicKeyBatch,
    aggregate,
    attack_forward,
    build_models,
    encrypt,
    keygen,
    residual_block_parameter_count,
    weight_digest,
)
from hanlab.errors import InvalidArgumentError, NonFiniteError
from hanlab.tools.runtime import make_generator


def test_public_key_is_sum_of_private_keys(ahe_cfg):
    keys, pk = keygen(1000, ahe_cfg, make_generator(0, 1))
    assert torch.equal(pk.pk, keys.sk_a + keys.sk_b)
    assert keys.sk_a.min() >= ahe_cfg.key_low and keys.sk_a.max() <= ahe_cfg.key_high


def test_keygen_is_reproducible(ahe_cfg):
    a, _ = keygen(64, ahe_cfg, make_generator(7, 2))
    b, _ = keygen(64, ahe_cfg, make_generator(7, 2))
    c, _ = keygen(64, ahe_cfg, make_generator(7, 3))
    assert torch.equal(a.sk_a, b.sk_a) and torch.equal(a.sk_b, b.sk_b)
    assert not torch.equal(a.sk_a, c.sk_a)


def test_keygen_rejects_empty_batch(ahe_cfg):
    with pytest.raises(InvalidArgumentError):
        keygen(0, ahe_cfg)


@pytest.mark.parametrize("kwargs", [
    {"num_clients": 1},
    {"psi": 0.0},
    {"ciphertext_len": 1},
    {"key_low": 1.0, "key_high": -1.0},
    {"seed": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        AheConfig(**kwargs)


def test_plaintext_clipping_is_counted():
    m = PlaintextBatch.from_values([1.7, -0.2, -3.0, 0.5], psi=1.0)
    assert m.clip_count == 2
    assert m.m.tolist() == pytest.approx([1.0, -0.2, -1.0, 0.5])


def test_plaintext_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        PlaintextBatch.from_values([0.1, float("nan")], psi=1.0)


def test_bundle_layout(bundle, ahe_cfg):
    assert bundle.shared
    assert len(list(bundle.iter_attackers())) == 4 * ahe_cfg.num_clients
    assert bundle.aggregator.in_width == ahe_cfg.num_clients * ahe_cfg.upload_width
    assert bundle.attacker(0, True).role == "attacker_pk"
    assert bundle.attacker(2, False, "double").depth == "double"


def test_build_models_is_deterministic(ahe_cfg):
    a, b = build_models(ahe_cfg), build_models(ahe_cfg)
    assert weight_digest(a.encryptor(0)) == weight_digest(b.encryptor(0))
    assert weight_digest(a.aggregator) == weight_digest(b.aggregator)


def test_encrypt_shapes_and_row_independence(bundle, ahe_cfg):
    generator = make_generator(0, 5)
    m = PlaintextBatch.from_values(torch.rand(16, generator=generator) * 2 - 1, ahe_cfg.psi)
    keys, _ = keygen(16, ahe_cfg, generator)
    with torch.no_grad():
        full = encrypt(bundle.encryptor(0), m, keys, ahe_cfg)
        head = encrypt(bundle.encryptor(0), PlaintextBatch(m.m[:4], m.psi), keys.select(slice(0, 4)), ahe_cfg)
    assert full.c.shape == (16, ahe_cfg.ciphertext_len)
    assert torch.allclose(full.c[:4], head.c, atol=1e-6)


def test_direct_plaintext_construction_clips(bundle, ahe_cfg):
    m = PlaintextBatch(torch.tensor([0.5, 2.0, -1.5]), 1.0)
    assert m.clip_count == 2
    assert m.m.tolist() == pytest.approx([0.5, 1.0, -1.0])
    keys, _ = keygen(3, ahe_cfg)
    with torch.no_grad():
        assert encrypt(bundle.encryptor(0), m, keys, ahe_cfg).c.shape == (3, ahe_cfg.ciphertext_len)
    with pytest.raises(NonFiniteError):
        PlaintextBatch(torch.tensor([0.1, float("inf")]), 1.0)


def test_encrypt_rejects_plaintext_of_a_wider_bound(bundle, ahe_cfg):
    keys, _ = keygen(2, ahe_cfg)
    with pytest.raises(InvalidArgumentError):
        encrypt(bundle.encryptor(0), PlaintextBatch(torch.tensor([0.5, 2.0]), 2.0), keys, ahe_cfg)


def test_ciphertexts_must_be_finite():
    assert len(CiphertextBatch(torch.zeros(2, 8))) == 2
    with pytest.raises(NonFiniteError):
        CiphertextBatch(torch.tensor([[0.0, float("nan")]]))
    with pytest.raises(InvalidArgumentError):
        CiphertextBatch(torch.zeros(8))


def test_keygen_calls_without_a_generator_differ(ahe_cfg):
    a, _ = keygen(256, ahe_cfg)
    b, _ = keygen(256, ahe_cfg)
    assert not torch.equal(a.sk_a, b.sk_a)
    assert not torch.equal(a.sk_b, b.sk_b)


def test_double_depth_adds_residual_blocks():
    cfg = AheConfig(ciphertext_len=8, hidden_dim=16, conv_channels=3, num_res_blocks=2)
    bundle = build_models(cfg)
    for with_pk in (True, False):
        standard = bundle.attacker(0, with_pk, "standard").parameter_count()
        double = bundle.attacker(0, with_pk, "double").parameter_count()
        assert double - standard == cfg.num_res_blocks * residual_block_parameter_count(cfg.conv_channels)
    # two 3-tap convolutions of 3 channels with bias
    assert residual_block_parameter_count(3) == 2 * (3 * 3 * 3 + 3)


def test_roles_are_enforced(bundle, ahe_cfg):
    keys, pk = keygen(4, ahe_cfg)
    m = PlaintextBatch.from_values([0.1, 0.2, 0.3, 0.4], ahe_cfg.psi)
    with pytest.raises(InvalidArgumentError):
        encrypt(bundle.aggregator, m, keys, ahe_cfg)
    with torch.no_grad():
        c = encrypt(bundle.encryptor(0), m, keys, ahe_cfg)
    with pytest.raises(InvalidArgumentError):
        attack_forward(bundle.attacker(0, True), c)
    with pytest.raises(InvalidArgumentError):
        attack_forward(bundle.attacker(0, False), c, pk)
    with pytest.raises(InvalidArgumentError):
        aggregate(bundle.encryptor(0), [c] * 3, [pk] * 3)


def test_aggregate_checks_arity_and_lengths(bundle, ahe_cfg):
    keys, pk = keygen(4, ahe_cfg)
    m = PlaintextBatch.from_values([0.1, 0.2, 0.3, 0.4], ahe_cfg.psi)
    with torch.no_grad():
        c = encrypt(bundle.encryptor(0), m, keys, ahe_cfg)
        assert aggregate(bundle.aggregator, [c] * 3, [pk] * 3).shape == (4,)
    with pytest.raises(InvalidArgumentError):
        aggregate(bundle.aggregator, [c] * 2, [pk] * 2)
    short = CiphertextBatch(c.c[:2])
    with pytest.raises(InvalidArgumentError):
        aggregate(bundle.aggregator, [c, c, short], [pk, pk, PublicKeyBatch(pk.pk[:2])])


def test_personalize_gives_private_copies(bundle):
    before = weight_digest(bundle.encryptor(0))
    bundle.personalize()
    assert not bundle.shared
    assert all(enc.visibility == "private" for enc in bundle.encryptors)
    assert bundle.encryptor(0) is not bundle.encryptor(1)
    original = bundle.original_encryptor()
    assert original.visibility == "public"
    assert weight_digest(original) == before
    with pytest.raises(InvalidArgumentError):
        bundle.personalize()
