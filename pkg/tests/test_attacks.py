import pytest
import torch

from hanlab.ahe import AheConfig, build_models
from hanlab.attacks import (
    AttackReport,
    ClientTrafficSource,
    DlgConfig,
    KmaConfig,
    dlg,
    dlg_hans,
    guess_message,
    pcaom,
    pcapd,
    require_public,
    save_reconstruction_grid,
    train_kma_attackers,
    victim_gradients,
    write_attack_reports,
)
from hanlab.errors import ContractViolationError, InvalidArgumentError
from hanlab.fl.task_models import build_task_model
from hanlab.losses import l1_stats
from hanlab.ppu import publish
from hanlab.tools.logging import read_records
from hanlab.tools.runtime import make_generator

INPUT_SHAPE = (1, 4, 4)
NUM_CLASSES = 3


@pytest.fixture
def victim_model():
    return build_task_model("sigmoid_mlp", INPUT_SHAPE, NUM_CLASSES, seed=0)


@pytest.fixture
def sample():
    return torch.rand((1,) + INPUT_SHAPE, generator=make_generator(0, 11)), 2


def test_attack_report_numbers():
    report = AttackReport.from_guesses("PCAOM", [0.31, 0.05, -0.0101], [0.3, 0.05, -0.01])
    assert report.n_samples == 3
    assert report.mad == pytest.approx((0.01 + 0.0 + 0.0001) / 3)
    assert report.success
    assert len(report.examples) == 3
    assert report.examples[0].orig == pytest.approx(0.3)
    assert list(report.to_frame().columns) == ["Orig. Val.", "PCAOM Est.", "PCAOM Diff."]


def test_attack_report_failure_and_validation():
    report = AttackReport.from_guesses("PCAPD", [0.5, -0.5], [0.0, 0.0])
    assert report.mad == pytest.approx(0.5)
    assert report.var == pytest.approx(0.25)
    assert not report.success
    with pytest.raises(InvalidArgumentError):
        AttackReport.from_guesses("PCAPD", [0.1], [0.1, 0.2])


def test_attack_report_variance_matches_l1_stats():
    guesses = torch.tensor([0.4, -0.1, 0.25, 0.0, -0.3])
    truths = torch.tensor([0.1, 0.1, 0.2, -0.2, -0.1])
    report = AttackReport.from_guesses("PCAOM", guesses, truths)
    stats = l1_stats(guesses, truths)
    assert report.var == pytest.approx(stats.var)
    assert report.mad == pytest.approx(stats.mad)
    signed = (guesses - truths).double()
    assert report.var == pytest.approx(float(signed.var(unbiased=False)))


def test_write_attack_reports_appends(tmp_path):
    path = str(tmp_path / "attacks.jsonl")
    report = AttackReport.from_guesses("PCAOM", [0.1], [0.1])
    write_attack_reports([report], path, extra={"config_hash": "h"})
    write_attack_reports([report], path)
    records = read_records(path)
    assert len(records) == 2
    assert records[0]["config_hash"] == "h"


def test_guess_message():
    assert guess_message(torch.tensor(1.0), torch.tensor(0.25), torch.tensor(0.5)).item() == pytest.approx(0.25)


def test_private_models_are_refused(bundle):
    bundle.personalize()
    with pytest.raises(ContractViolationError):
        require_public(bundle.encryptor(0), "victim")
    require_public(bundle.original_encryptor(), "original")


def test_traffic_source_hides_plaintexts_behind_keys(bundle, ahe_cfg):
    source = ClientTrafficSource(bundle.encryptor(0), ahe_cfg)
    traffic = source.upload([0.2, 1.5, -0.4], make_generator(0, 1))
    assert len(traffic) == 3
    assert traffic.c.c.shape == (3, ahe_cfg.ciphertext_len)
    assert traffic.m_true.tolist() == pytest.approx([0.2, 1.0, -0.4])


def test_kma_trains_public_cracks(bundle, ahe_cfg):
    bundle.personalize()
    victim = ClientTrafficSource(bundle.encryptor(0), ahe_cfg)
    kma_cfg = KmaConfig.micro(steps=5, batch_size=32, eval_size=128, plateau_window=2)
    result = train_kma_attackers(bundle.original_encryptor(), victim, ahe_cfg, kma_cfg)
    assert result.crack1.role == "attacker_pk" and result.crack2.role == "attacker_nopk"
    assert set(result.stats_target) == {"crack1", "crack2"}
    assert 1 <= len(result.curves["crack1"]) <= 5
    with pytest.raises(ContractViolationError):
        train_kma_attackers(bundle.encryptor(1), victim, ahe_cfg, kma_cfg)


def test_pcaom_and_pcapd_reports(bundle, ahe_cfg):
    bundle.personalize()
    alice = ClientTrafficSource(bundle.encryptor(0), ahe_cfg, client=0)
    report = pcaom(alice, bundle.original_encryptor(), bundle.encryptor(2), bundle.aggregator, ahe_cfg, n_samples=50)
    assert report.attack == "PCAOM" and report.n_samples == 50
    assert report.mad >= 0

    bob_public = publish(bundle.encryptor(1), 20, ahe_cfg, 0.05, 1, 0, make_generator(0, 2)).dataset
    report = pcapd(alice, bob_public, bundle.encryptor(2), bundle.aggregator, ahe_cfg, n_samples=50)
    assert report.attack == "PCAPD" and report.n_samples == 50


def test_pcaom_refuses_private_bob_and_wrong_arity(bundle, ahe_cfg):
    bundle.personalize()
    alice = ClientTrafficSource(bundle.encryptor(0), ahe_cfg, client=0)
    with pytest.raises(ContractViolationError):
        pcaom(alice, bundle.encryptor(1), bundle.encryptor(2), bundle.aggregator, ahe_cfg, n_samples=10)

    two = build_models(AheConfig(num_clients=2, ciphertext_len=8, hidden_dim=16, conv_channels=2, num_res_blocks=1))
    alice2 = ClientTrafficSource(two.encryptor(0), two.cfg, client=0)
    with pytest.raises(InvalidArgumentError):
        pcaom(alice2, two.original_encryptor(), two.encryptor(1), two.aggregator, two.cfg, n_samples=10)


def test_victim_gradients_from_sgd_step(victim_model, sample):
    x, label = sample
    direct = victim_gradients(victim_model, x, label, NUM_CLASSES)
    recovered = victim_gradients(victim_model, x, label, NUM_CLASSES, lr=0.01)
    for a, b in zip(direct, recovered):
        assert torch.allclose(a, b, atol=1e-4)


def test_dlg_reduces_gradient_distance(victim_model, sample):
    x, label = sample
    grads = victim_gradients(victim_model, x, label, NUM_CLASSES)
    result = dlg(victim_model, grads, INPUT_SHAPE, NUM_CLASSES, DlgConfig.micro(iterations=10))
    assert result.x.shape == (1,) + INPUT_SHAPE
    assert result.curve and min(result.curve) <= result.curve[0]
    result.score(x, label, 0.1)
    assert result.mse is not None and result.label_match is not None


def test_dlg_rejects_mismatched_gradients(victim_model):
    with pytest.raises(InvalidArgumentError):
        dlg(victim_model, [torch.zeros(2)], INPUT_SHAPE, NUM_CLASSES, DlgConfig.micro(iterations=1))


@pytest.mark.slow
def test_dlg_recovers_plain_gradient_sample(victim_model, sample):
    x, label = sample
    grads = victim_gradients(victim_model, x, label, NUM_CLASSES)
    result = dlg(victim_model, grads, INPUT_SHAPE, NUM_CLASSES, DlgConfig(iterations=300, lr=1.0, optimizer="lbfgs"))
    assert result.score(x, label, 0.1).success


def test_dlg_hans_runs_both_cracks(bundle, ahe_cfg, victim_model, sample, tmp_path):
    x, label = sample
    grads = victim_gradients(victim_model, x, label, NUM_CLASSES)
    victim = ClientTrafficSource(bundle.encryptor(0), ahe_cfg)
    result = dlg_hans(
        victim_model, grads, victim, bundle.attacker(0, True), bundle.attacker(0, False),
        x, label, NUM_CLASSES, DlgConfig.micro(iterations=3),
    )
    assert set(result.reconstructions) == {"plain", "crack1", "crack2"}
    assert set(result.gradient_stats) == {"crack1", "crack2"}
    assert result.success == any(result.reconstructions[k].success for k in ("crack1", "crack2"))
    path = save_reconstruction_grid(str(tmp_path / "dlg.html"), x, result.reconstructions)
    assert (tmp_path / "dlg.html").exists() and path.endswith(".html")


def test_dlg_hans_refuses_private_crack(bundle, ahe_cfg, victim_model, sample):
    x, label = sample
    grads = victim_gradients(victim_model, x, label, NUM_CLASSES)
    crack = bundle.attacker(0, True)
    crack.visibility = "private"
    with pytest.raises(ContractViolationError):
        dlg_hans(victim_model, grads, ClientTrafficSource(bundle.encryptor(0), ahe_cfg), crack, bundle.attacker(0, False),
                 x, label, NUM_CLASSES, DlgConfig.micro(iterations=1), include_plain=False)


def _bob_public(cppu_report, ippu_report, bob=1):
    datasets = [d for d in (ippu_report.public_datasets or cppu_report.public_datasets) if d.client_id == bob]
    return datasets[-1]


@pytest.mark.slow
def test_collusion_fails_after_updates(updated_micro):
    bundle, cppu_report, ippu_report = updated_micro
    alice = ClientTrafficSource(bundle.encryptor(0), bundle.cfg, client=0)
    pcaom_report = pcaom(alice, bundle.original_encryptor(), bundle.encryptor(2), bundle.aggregator, bundle.cfg,
                         n_samples=2000, bob=1, seed=3)
    pcapd_report = pcapd(alice, _bob_public(cppu_report, ippu_report), bundle.encryptor(2), bundle.aggregator,
                         bundle.cfg, n_samples=2000, seed=3)
    assert pcaom_report.mad >= 0.1
    assert pcapd_report.mad >= 0.1


@pytest.mark.slow
def test_collusion_succeeds_before_updates(trained_micro):
    bundle, reports = trained_micro
    alice = ClientTrafficSource(bundle.encryptor(0), bundle.cfg, client=0)
    report = pcaom(alice, bundle.original_encryptor(), bundle.encryptor(2), bundle.aggregator, bundle.cfg,
                   n_samples=2000, bob=1, seed=3)
    agg_error = reports[max(reports)].final_stats["aggregation"].mean_l1
    assert report.mad <= 3 * agg_error


@pytest.mark.slow
def test_dlg_over_updated_hans_fails(updated_micro, victim_model, sample):
    bundle, _, _ = updated_micro
    x, label = sample
    grads = victim_gradients(victim_model, x, label, NUM_CLASSES)
    victim = ClientTrafficSource(bundle.encryptor(0), bundle.cfg)
    cracks = train_kma_attackers(bundle.original_encryptor(), victim, bundle.cfg, KmaConfig.micro())
    result = dlg_hans(victim_model, grads, victim, cracks.crack1, cracks.crack2, x, label, NUM_CLASSES,
                      DlgConfig.micro())
    assert result.reconstructions["plain"].success
    for name in ("crack1", "crack2"):
        assert not result.reconstructions[name].success
        assert result.reconstructions[name].mse >= 0.5
