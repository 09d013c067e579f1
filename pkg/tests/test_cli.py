import os

import pytest

from hanlab.cli import EXIT_OK, EXIT_STAGE, EXIT_USAGE, main
from hanlab.config import config_hash, load_config
from hanlab.tools.checkpoint import save_checkpoint
from hanlab.tools.logging import read_records

SMALL_AHE = """
[ahe]
ciphertext_len = 8
hidden_dim = 16
conv_channels = 2
num_res_blocks = 1
"""

SMALL_PPU = """
[ppu]
public_size = 32
private_size = 32
max_iterations = 1
rounds_per_client = 1
optimize_steps = 1
eval_size = 128
"""


@pytest.fixture
def run_dir(tmp_path):
    return str(tmp_path / "out")


def _config(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return str(path)


def test_version_and_unknown_command(run_dir):
    assert main(["--version"]) == EXIT_OK
    assert main(["--out", run_dir, "frobnicate"]) == EXIT_USAGE
    assert main(["--out", run_dir]) == EXIT_USAGE


def test_bench_writes_one_record_with_config_hash(run_dir):
    code = main(["--out", run_dir, "bench", "--op", "encrypt", "--batch", "1000"])
    assert code == EXIT_OK
    records = read_records(os.path.join(run_dir, "bench.jsonl"))
    assert len(records) == 1
    assert records[0]["op"] == "encrypt" and records[0]["batch_size"] == 1000
    assert records[0]["config_hash"] == config_hash(load_config())


def test_bench_rejects_too_few_trials(run_dir):
    assert main(["--out", run_dir, "bench", "--trials", "3", "--batch", "10"]) == EXIT_USAGE


def test_commands_needing_a_checkpoint(run_dir, tmp_path):
    assert main(["--out", run_dir, "ppu", "cppu"]) == EXIT_USAGE
    broken = tmp_path / "broken.hans"
    broken.write_bytes(b"not a zip")
    assert main(["--out", run_dir, "--checkpoint", str(broken), "ppu", "cppu"]) == EXIT_USAGE


def test_ppu_gate_failure_exits_two(run_dir, tmp_path):
    cfg_path = _config(tmp_path, SMALL_AHE + SMALL_PPU + "max_agg_l1 = 0.0\n")
    cfg = load_config(cfg_path, micro=True)
    from hanlab.ahe import build_models

    checkpoint = save_checkpoint(build_models(cfg.ahe), str(tmp_path / "trained.hans"), completed_stage=5)
    code = main(["--config", cfg_path, "--micro", "--out", run_dir, "--checkpoint", checkpoint, "ppu", "cppu"])
    assert code == EXIT_STAGE


def test_ppu_noise_below_floor_exits_two(run_dir, tmp_path, capsys):
    cfg_path = _config(tmp_path, SMALL_AHE + SMALL_PPU + "sigma = 0.001\n")
    from hanlab.ahe import AheConfig, build_models

    small = AheConfig(ciphertext_len=8, hidden_dim=16, conv_channels=2, num_res_blocks=1)
    checkpoint = save_checkpoint(build_models(small), str(tmp_path / "trained.hans"), completed_stage=5)
    code = main(["--config", cfg_path, "--micro", "--out", run_dir, "--checkpoint", checkpoint, "ppu", "cppu"])
    assert code == EXIT_STAGE
    assert "NoiseFloorError" in capsys.readouterr().err


def test_ppu_phases_write_reports(run_dir, tmp_path):
    cfg_path = _config(tmp_path, SMALL_AHE + SMALL_PPU)
    from hanlab.ahe import build_models

    checkpoint = save_checkpoint(build_models(load_config(cfg_path).ahe), str(tmp_path / "trained.hans"))
    base = ["--config", cfg_path, "--micro", "--out", run_dir]
    assert main(base + ["--checkpoint", checkpoint, "ppu", "cppu"]) == EXIT_OK
    assert os.path.exists(os.path.join(run_dir, "public_datasets.jsonl"))
    assert main(base + ["--checkpoint", os.path.join(run_dir, "cppu.hans"), "ppu", "ippu"]) == EXIT_OK
    phases = [r["phase"] for r in read_records(os.path.join(run_dir, "ppu_reports.jsonl"))]
    assert phases == ["cppu", "ippu"]


def test_keygen_encrypt_aggregate(run_dir, tmp_path):
    cfg_path = _config(tmp_path, SMALL_AHE)
    from hanlab.ahe import build_models

    checkpoint = save_checkpoint(build_models(load_config(cfg_path).ahe), str(tmp_path / "m.hans"))
    base = ["--config", cfg_path, "--out", run_dir, "--checkpoint", checkpoint]
    assert main(base + ["keygen", "--n", "4"]) == EXIT_OK
    keys = read_records(os.path.join(run_dir, "keys.jsonl"))
    assert all(abs(k["pk"] - (k["sk_a"] + k["sk_b"])) < 1e-6 for k in keys)

    for client in range(3):
        assert main(base + ["encrypt", "--client", str(client), "--values", "0.1", "-0.2"]) == EXIT_OK
    assert main(base + ["aggregate"]) == EXIT_OK
    assert len(read_records(os.path.join(run_dir, "aggregates.jsonl"))) == 2
    assert main(base + ["encrypt", "--client", "7", "--values", "0.1"]) == EXIT_USAGE


def test_report(run_dir, capsys):
    assert main(["--out", run_dir, "report"]) == EXIT_USAGE
    assert main(["--out", run_dir, "report", "--reference"]) == EXIT_OK
    assert "Security after trained" in capsys.readouterr().out


def test_keys_are_fresh_unless_reproducible(run_dir, tmp_path):
    cfg_path = _config(tmp_path, SMALL_AHE)
    from hanlab.ahe import build_models

    checkpoint = save_checkpoint(build_models(load_config(cfg_path).ahe), str(tmp_path / "m.hans"))
    base = ["--config", cfg_path, "--out", run_dir, "--checkpoint", checkpoint]
    keys_path = os.path.join(run_dir, "keys.jsonl")

    def keygen_pks(*extra):
        assert main(base + ["keygen", "--n", "8", *extra]) == EXIT_OK
        return [r["pk"] for r in read_records(keys_path)]

    assert keygen_pks() != keygen_pks()
    assert keygen_pks("--reproducible-keys", "--round", "3") == keygen_pks("--reproducible-keys", "--round", "3")

    for _ in range(2):
        assert main(base + ["encrypt", "--client", "0", "--values", "0.1", "-0.2"]) == EXIT_OK
    records = read_records(os.path.join(run_dir, "ciphertexts.jsonl"))
    assert len(records) == 4
    assert [r["pk"] for r in records[:2]] != [r["pk"] for r in records[2:]]
    assert [r["c"] for r in records[:2]] != [r["c"] for r in records[2:]]
