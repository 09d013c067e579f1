import json
import zipfile

import pytest
import torch

import numpy as np

from hanlab.ahe import weight_digest
from hanlab.ahe.networks import state_to_numpy
from hanlab.errors import CheckpointError
from hanlab.tools.checkpoint import FORMAT, MANIFEST, checkpoint_bytes, load_checkpoint, save_checkpoint


def _digests(bundle):
    return {name: weight_digest(net) for name, net in bundle.named_models().items()}


def test_round_trip_is_bit_identical(bundle, tmp_path):
    path = save_checkpoint(bundle, str(tmp_path / "a.hans"), completed_stage=2, extra={"note": "x"})
    checkpoint = load_checkpoint(path)
    assert checkpoint.completed_stage == 2
    assert checkpoint.manifest["format"] == FORMAT
    assert checkpoint.manifest["extra"] == {"note": "x"}
    assert checkpoint.bundle.shared
    assert _digests(checkpoint.bundle) == _digests(bundle)


def test_personalized_bundle_keeps_original(bundle, tmp_path):
    bundle.personalize()
    with torch.no_grad():
        next(bundle.encryptor(1).parameters()).add_(0.5)
    path = save_checkpoint(bundle, str(tmp_path / "p.hans"))
    restored = load_checkpoint(path).bundle
    assert not restored.shared
    assert _digests(restored) == _digests(bundle)
    assert weight_digest(restored.original_encryptor()) == weight_digest(bundle.original_encryptor())


def test_archives_are_byte_identical(bundle):
    assert checkpoint_bytes(bundle, 3) == checkpoint_bytes(bundle, 3)


def test_blobs_hold_the_float32_state(bundle, tmp_path):
    path = save_checkpoint(bundle, str(tmp_path / "a.hans"))
    state = state_to_numpy(bundle.aggregator)
    with zipfile.ZipFile(path) as archive:
        blobs = json.loads(archive.read(MANIFEST))["blobs"]
        for layer, array in state.items():
            entry = f"aggregator/{layer}.f32"
            assert blobs[entry]["shape"] == list(array.shape)
            restored = np.frombuffer(archive.read(entry), dtype="<f4").reshape(array.shape)
            np.testing.assert_array_equal(restored, array)


def test_corrupted_blob_is_rejected(bundle, tmp_path):
    source = tmp_path / "a.hans"
    save_checkpoint(bundle, str(source))
    corrupted = tmp_path / "b.hans"
    with zipfile.ZipFile(source) as src, zipfile.ZipFile(corrupted, "w") as dst:
        for info in src.infolist():
            data = src.read(info.filename)
            if info.filename.startswith("aggregator/"):
                data = bytes([data[0] ^ 0xFF]) + data[1:]
            dst.writestr(info, data)
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(str(corrupted))


def test_unknown_format_is_rejected(tmp_path):
    path = tmp_path / "bad.hans"
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr(MANIFEST, json.dumps({"format": "something-else"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_missing_file_is_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.hans"))
