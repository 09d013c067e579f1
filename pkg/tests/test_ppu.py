import copy

import pytest
import torch

from hanlab.ahe import weight_digest
from hanlab.attacks import ClientTrafficSource, KmaConfig, train_kma_attackers
from hanlab.errors import GateFailureError, InvalidArgumentError
from hanlab.ppu import (
    PpuConfig,
    cppu,
    ippu,
    publish,
    read_public_datasets,
    sample_with_replacement,
    write_public_datasets,
)
from hanlab.tools.runtime import make_generator
from hanlab.training import TrainConfig, stage3_assess


@pytest.fixture
def ppu_cfg():
    return PpuConfig.micro(public_size=64, private_size=64, max_iterations=1, rounds_per_client=2,
                           optimize_steps=2, eval_size=256)


@pytest.mark.parametrize("sigma", [0.0, 0.01, 0.005])
def test_noise_floor_is_enforced(sigma, bundle):
    with pytest.raises(InvalidArgumentError) as info:
        PpuConfig(sigma=sigma)
    assert isinstance(info.value, GateFailureError)
    assert info.value.stage == "ppu"
    with pytest.raises(InvalidArgumentError):
        publish(bundle.encryptor(0), 8, bundle.cfg, sigma, 0, 0)


def test_publish_adds_noise(bundle):
    publication = publish(bundle.encryptor(0), 2000, bundle.cfg, 0.05, 0, 0, make_generator(0, 1))
    noise = publication.dataset.x_noisy - publication.x_true
    assert len(publication.dataset) == 2000
    assert publication.dataset.c.shape == (2000, bundle.cfg.ciphertext_len)
    assert 0.04 < float(noise.std()) < 0.06


def test_sampling_targets_and_shapes(bundle):
    others = [
        publish(bundle.encryptor(0), 10, bundle.cfg, 0.05, j, 0, make_generator(0, j)).dataset for j in (1, 2)
    ]
    x_own = torch.tensor([0.1, -0.2, 0.3])
    ts = sample_with_replacement(others, x_own, torch.zeros(3), torch.zeros(3), make_generator(0, 3), client_id=0)
    assert len(ts) == 3
    assert ts.other_ids == [1, 2]
    assert ts.others_c.shape == (3, 2, bundle.cfg.ciphertext_len)
    # every target is the own plaintext plus one noisy public plaintext per other client
    for k in range(3):
        rest = ts.y[k] - x_own[k]
        candidates = [float(a + b) for a in others[0].x_noisy for b in others[1].x_noisy]
        assert min(abs(float(rest) - c) for c in candidates) < 1e-5


def test_sampling_rejects_bad_inputs(bundle):
    with pytest.raises(InvalidArgumentError):
        sample_with_replacement([], torch.zeros(2), torch.zeros(2), torch.zeros(2))
    other = publish(bundle.encryptor(0), 4, bundle.cfg, 0.05, 1, 0).dataset
    with pytest.raises(InvalidArgumentError):
        sample_with_replacement([other], torch.zeros(3), torch.zeros(2), torch.zeros(2))


def test_public_datasets_round_trip(bundle, tmp_path):
    datasets = [publish(bundle.encryptor(0), 5, bundle.cfg, 0.05, j, 2, make_generator(0, j)).dataset for j in range(3)]
    path = write_public_datasets(datasets, str(tmp_path / "public.jsonl"))
    restored = read_public_datasets(path, 0.05)
    assert [d.client_id for d in restored] == [0, 1, 2]
    assert torch.allclose(restored[1].c, datasets[1].c)
    assert torch.allclose(restored[2].x_noisy, datasets[2].x_noisy)


def test_cppu_personalizes_and_diverges(bundle, ppu_cfg):
    original = weight_digest(bundle.encryptor(0))
    bundle, report = cppu(bundle, ppu_cfg)
    assert not bundle.shared
    assert len(report.public_datasets) == bundle.num_clients
    assert len(set(report.encryptor_digests.values())) == bundle.num_clients
    assert original not in report.encryptor_digests.values()
    assert weight_digest(bundle.original_encryptor()) == original


def test_cppu_fidelity_gate(bundle, ppu_cfg):
    with pytest.raises(GateFailureError):
        cppu(bundle, PpuConfig.micro(**{**vars(ppu_cfg), "max_agg_l1": 0.0}))


def test_ippu_needs_cppu(bundle, ppu_cfg):
    with pytest.raises(InvalidArgumentError):
        ippu(bundle, [], ppu_cfg)


def test_ippu_is_independent_of_worker_count(bundle, ppu_cfg):
    bundle, collaborative = cppu(bundle, ppu_cfg)
    aggregator = weight_digest(bundle.aggregator)

    sequential, _ = ippu(copy.deepcopy(bundle), collaborative.public_datasets, ppu_cfg)
    threaded, report = ippu(copy.deepcopy(bundle), collaborative.public_datasets,
                            PpuConfig.micro(**{**vars(ppu_cfg), "workers": 2}))

    assert report.aggregator_digest == aggregator
    assert weight_digest(threaded.aggregator) == aggregator
    for i in range(bundle.num_clients):
        for p, q in zip(sequential.encryptor(i).parameters(), threaded.encryptor(i).parameters()):
            assert torch.allclose(p, q, atol=1e-6)


def test_ippu_needs_one_dataset_per_client(bundle, ppu_cfg):
    bundle, collaborative = cppu(bundle, ppu_cfg)
    with pytest.raises(InvalidArgumentError):
        ippu(bundle, collaborative.public_datasets[:2], ppu_cfg)


@pytest.mark.slow
def test_updates_keep_aggregation_accurate(updated_micro):
    _, cppu_report, ippu_report = updated_micro
    assert cppu_report.aggregation.mean_l1 <= 0.05
    assert ippu_report.aggregation.mean_l1 <= 0.01


def _assessed_attackers(bundle):
    report = stage3_assess(copy.deepcopy(bundle), TrainConfig.micro(), salt=7)
    return {k: v.mean_l1 for k, v in report.final_stats.items() if k.startswith("attacker_")}


@pytest.mark.slow
def test_updated_encryptors_resist_fresh_attackers(trained_micro, updated_micro):
    after = _assessed_attackers(updated_micro[0])
    assert after
    assert all(value >= 0.05 for value in after.values())
    before = _assessed_attackers(trained_micro[0])
    assert sum(after.values()) / len(after) > sum(before.values()) / len(before)


def _kma_crack2_error(bundle):
    victim = ClientTrafficSource(bundle.encryptor(0), bundle.cfg)
    result = train_kma_attackers(bundle.original_encryptor(), victim, bundle.cfg, KmaConfig.micro())
    return result.stats_target["crack2"].mean_l1


@pytest.mark.slow
def test_updates_raise_known_model_attack_error(trained_micro, updated_micro):
    before = _kma_crack2_error(copy.deepcopy(trained_micro[0]))
    after = _kma_crack2_error(updated_micro[0])
    assert after >= 2 * before
