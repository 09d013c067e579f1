# HANLAB
# ***
# Image datasets: IDX / CIFAR-10 binary parsing, verified cache, subsets and shards

import gzip
import hashlib
import json
import logging
import os
import tarfile
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple
from urllib import request

import numpy as np
from sklearn.model_selection import train_test_split

from hanlab.errors import DatasetMissingError, InvalidArgumentError
from hanlab.tools.runtime import resolve_data_dir

logger = logging.getLogger(__name__)

CHECKSUM_FILE = "checksums.json"
CIFAR_ARCHIVE = "cifar-10-binary.tar.gz"
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class DatasetSource:
    base_url: str
    files: Dict[str, str]
    input_shape: Tuple[int, int, int]
    num_classes: int = 10


IDX_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}

SOURCES = {
    "mnist": DatasetSource("https://ossci-datasets.s3.amazonaws.com/mnist/", IDX_FILES, (1, 28, 28)),
    "fashion_mnist": DatasetSource(
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/", IDX_FILES, (1, 28, 28)
    ),
    "cifar10": DatasetSource("https://www.cs.toronto.edu/~kriz/", {"archive": CIFAR_ARCHIVE}, (3, 32, 32)),
}


@dataclass
class ImageDataset:
    """Images as float32 in ``[0, 1]``, shape ``n x C x H x W``; labels as int64."""

    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int = 10

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.train_x.shape[1:])


def parse_idx(raw: bytes) -> np.ndarray:
    """
    Decode an IDX file (unsigned-byte payload only).

    Parameters
    ----------
    raw : bytes
        The uncompressed file content.

    Returns
    -------
    np.ndarray
        uint8 array with the dimensions declared in the header.
    """
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise InvalidArgumentError("not an IDX file: bad magic number")
    if raw[2] != 0x08:
        raise InvalidArgumentError(f"unsupported IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    offset = 4 + 4 * ndim
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=ndim, offset=4))
    data = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    if data.size != int(np.prod(dims)):
        raise InvalidArgumentError(f"IDX payload holds {data.size} values, header declares {dims}")
    return data.reshape(dims)


def parse_cifar_batch(raw: bytes) -> Tuple[np.ndarray, np.ndarray]:
    """Decode one CIFAR-10 binary batch: records of one label byte and 3072 pixel bytes."""
    if len(raw) % CIFAR_RECORD:
        raise InvalidArgumentError("CIFAR-10 batch length is not a multiple of the record size")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return records[:, 1:].reshape(-1, 3, 32, 32), records[:, 0].astype(np.int64)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_checksums(root: str) -> Dict[str, str]:
    path = os.path.join(root, CHECKSUM_FILE)
    if not os.path.exists(path):
        return {}
    with open(path) as f:
        return json.load(f)


def _write_checksums(root: str, checksums: Dict[str, str]) -> None:
    with open(os.path.join(root, CHECKSUM_FILE), "w") as f:
        json.dump(checksums, f, indent=2, sort_keys=True)


def verify_file(root: str, file_name: str, pinned: Optional[Dict[str, str]] = None) -> str:
    """
    Check a cached archive against its SHA-256 digest.

    A digest in ``pinned`` wins; otherwise the digest recorded in the cache's
    ``checksums.json`` is used, and an archive seen for the first time has its
    digest recorded there.

    Raises
    ------
    DatasetMissingError
        If the digest does not match.
    """
    path = os.path.join(root, file_name)
    actual = sha256_file(path)
    recorded = _read_checksums(root)
    expected = (pinned or {}).get(file_name) or recorded.get(file_name)
    if expected is None:
        recorded[file_name] = actual
        _write_checksums(root, recorded)
        logger.info("recorded sha256 of %s", file_name)
    elif expected != actual:
        raise DatasetMissingError(
            f"{path} fails its sha256 check (expected {expected}, got {actual}); delete it and fetch it again"
        )
    return path


def fetch_file(source: DatasetSource, root: str, file_name: str, download: bool = True) -> str:
    """Return the cached path of an archive, downloading it when allowed."""
    path = os.path.join(root, file_name)
    if os.path.exists(path):
        return path
    hint = f"download {source.base_url}{file_name} into {root} (or set HANLAB_DATA_DIR)"
    if not download:
        raise DatasetMissingError(f"{file_name} is not cached; {hint}")
    os.makedirs(root, exist_ok=True)
    print(f"    * DOWNLOAD {file_name}")
    partial = path + ".part"
    try:
        request.urlretrieve(source.base_url + file_name, partial)
    except OSError as e:
        if os.path.exists(partial):
            os.remove(partial)
        raise DatasetMissingError(f"could not fetch {file_name} ({e}); {hint}") from e
    os.replace(partial, path)
    return path


def _read_gzip(path: str) -> bytes:
    with gzip.open(path, "rb") as f:
        return f.read()


def _load_idx(name: str, root: str, source: DatasetSource, download: bool, pinned) -> ImageDataset:
    arrays = {}
    for key, file_name in source.files.items():
        fetch_file(source, root, file_name, download)
        arrays[key] = parse_idx(_read_gzip(verify_file(root, file_name, pinned)))
    return ImageDataset(
        name,
        (arrays["train_images"][:, None].astype(np.float32) / 255.0),
        arrays["train_labels"].astype(np.int64),
        (arrays["test_images"][:, None].astype(np.float32) / 255.0),
        arrays["test_labels"].astype(np.int64),
        source.num_classes,
    )


def _load_cifar(name: str, root: str, source: DatasetSource, download: bool, pinned) -> ImageDataset:
    fetch_file(source, root, CIFAR_ARCHIVE, download)
    path = verify_file(root, CIFAR_ARCHIVE, pinned)
    train, test = [], None
    with tarfile.open(path, "r:gz") as archive:
        for member in sorted(archive.getmembers(), key=lambda m: m.name):
            base = os.path.basename(member.name)
            if not base.endswith(".bin"):
                continue
            batch = parse_cifar_batch(archive.extractfile(member).read())
            if base.startswith("data_batch"):
                train.append(batch)
            elif base == "test_batch.bin":
                test = batch
    if not train or test is None:
        raise DatasetMissingError(f"{path} does not contain the CIFAR-10 binary batches; delete it and fetch it again")
    train_x = np.concatenate([b[0] for b in train]).astype(np.float32) / 255.0
    train_y = np.concatenate([b[1] for b in train])
    return ImageDataset(name, train_x, train_y, test[0].astype(np.float32) / 255.0, test[1], source.num_classes)


def load_dataset(
    name: str,
    data_dir: Optional[str] = None,
    download: bool = True,
    checksums: Optional[Dict[str, str]] = None,
) -> ImageDataset:
    """
    Load MNIST, FashionMNIST or CIFAR-10 from the local cache.

    Parameters
    ----------
    name : str
        ``mnist``, ``fashion_mnist`` or ``cifar10``.
    data_dir : str, optional
        Cache root; each dataset lives in its own sub-directory. Defaults to
        ``HANLAB_DATA_DIR`` or ``~/.cache/hanlab``.
    download : bool, optional
        Fetch missing archives. Defaults to True.
    checksums : dict, optional
        Pinned SHA-256 digests per archive file name.

    Returns
    -------
    ImageDataset

    Raises
    ------
    DatasetMissingError
        If an archive is missing and cannot be fetched, or fails its checksum.
    """
    if name not in SOURCES:
        raise InvalidArgumentError(f"unknown dataset {name!r}; expected one of {sorted(SOURCES)}")
    source = SOURCES[name]
    root = os.path.join(resolve_data_dir(data_dir), name)
    if name == "cifar10":
        return _load_cifar(name, root, source, download, checksums)
    return _load_idx(name, root, source, download, checksums)


def stratified_subset(x: np.ndarray, y: np.ndarray, size: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """A class-balanced subset of ``size`` samples; the whole split when it is not larger."""
    if size >= len(y):
        return x, y
    index, _ = train_test_split(np.arange(len(y)), train_size=size, stratify=y, random_state=seed)
    index = np.sort(index)
    return x[index], y[index]


def subset_dataset(dataset: ImageDataset, train_size: int, test_size: int, seed: int) -> ImageDataset:
    train_x, train_y = stratified_subset(dataset.train_x, dataset.train_y, train_size, seed)
    test_x, test_y = stratified_subset(dataset.test_x, dataset.test_y, test_size, seed)
    return ImageDataset(dataset.name, train_x, train_y, test_x, test_y, dataset.num_classes)


def partition(x: np.ndarray, y: np.ndarray, num_clients: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Shuffle once and cut into ``num_clients`` IID shards of equal size.

    Leftover samples that do not fill a shard are dropped.
    """
    if num_clients < 1 or num_clients > len(y):
        raise InvalidArgumentError(f"cannot split {len(y)} samples over {num_clients} clients")
    order = np.random.default_rng(seed).permutation(len(y))
    shard = len(y) // num_clients
    return [(x[order[i * shard:(i + 1) * shard]], y[order[i * shard:(i + 1) * shard]]) for i in range(num_clients)]
