import copy
import gzip
import os
import struct

import numpy as np
import pytest
import torch

from hanlab.ahe import AheConfig, build_models
from hanlab.fl.datasets import IDX_FILES, ImageDataset
from hanlab.ppu import PpuConfig, cppu, ippu
from hanlab.training import TrainConfig, train_hans


@pytest.fixture
def ahe_cfg():
    """Small networks so every test runs in seconds on a CPU."""
    return AheConfig(ciphertext_len=8, hidden_dim=16, conv_channels=2, num_res_blocks=1)


@pytest.fixture
def bundle(ahe_cfg):
    return build_models(ahe_cfg)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig.micro(
        stage1_steps=4,
        stage2_steps=4,
        stage3_max_steps=4,
        stage4_steps=3,
        stage5_max_steps=4,
        batch_size=32,
        eval_size=256,
        attacker_steps_per_enc_step=1,
        plateau_window=2,
    )


def synthetic_images(n, seed, num_classes=10, shape=(1, 28, 28)):
    """Class-separable images: each class lights up its own band of rows."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % num_classes
    rng.shuffle(y)
    x = rng.uniform(0.0, 0.2, size=(n,) + shape).astype(np.float32)
    band = shape[1] // num_classes
    for k in range(num_classes):
        x[y == k, :, k * band:(k + 1) * band, :] += 0.8
    return np.clip(x, 0.0, 1.0), y.astype(np.int64)


@pytest.fixture
def image_dataset():
    train_x, train_y = synthetic_images(300, seed=1)
    test_x, test_y = synthetic_images(100, seed=2)
    return ImageDataset("mnist", train_x, train_y, test_x, test_y, 10)


def idx_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


@pytest.fixture
def idx_cache(tmp_path):
    """A data directory holding a tiny gzipped MNIST in IDX format."""
    root = tmp_path / "data" / "mnist"
    root.mkdir(parents=True)
    train_x, train_y = synthetic_images(60, seed=3)
    test_x, test_y = synthetic_images(20, seed=4)
    arrays = {
        "train_images": (train_x[:, 0] * 255).astype(np.uint8),
        "train_labels": train_y.astype(np.uint8),
        "test_images": (test_x[:, 0] * 255).astype(np.uint8),
        "test_labels": test_y.astype(np.uint8),
    }
    for key, file_name in IDX_FILES.items():
        with gzip.open(os.path.join(root, file_name), "wb") as f:
            f.write(idx_bytes(arrays[key]))
    return str(tmp_path / "data")


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def trained_micro():
    """The default scheme trained with the desk-scale budget; reports keyed by stage."""
    torch.manual_seed(0)
    bundle, reports = train_hans(AheConfig(), TrainConfig.micro())
    return bundle, {r.stage: r for r in reports}


@pytest.fixture(scope="session")
def ppu_micro():
    return PpuConfig.micro(max_iterations=5, rounds_per_client=10, optimize_steps=20, eval_size=100000)


@pytest.fixture(scope="session")
def updated_micro(trained_micro, ppu_micro):
    """A copy of the trained bundle after the collaborative and independent updates."""
    bundle = copy.deepcopy(trained_micro[0])
    bundle, cppu_report = cppu(bundle, ppu_micro)
    bundle, ippu_report = ippu(bundle, cppu_report.public_datasets, ppu_micro)
    return bundle, cppu_report, ippu_report
