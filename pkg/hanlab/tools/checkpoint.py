# HANLAB
# ***
# Checkpoint archive: hans-ckpt/1

import io
import os
import json
import zlib
import zipfile
from dataclasses import asdict
from typing import Any, Dict, NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn

from hanlab.ahe.bundle import AttackerSlot, ModelBundle
from hanlab.ahe.config import AheConfig
from hanlab.ahe.networks import HanNetwork, state_to_numpy
from hanlab.errors import CheckpointError

FORMAT = "hans-ckpt/1"
MANIFEST = "manifest.json"
FIXED_DATE = (1980, 1, 1, 0, 0, 0)


class Checkpoint(NamedTuple):
    bundle: ModelBundle
    completed_stage: int
    manifest: Dict[str, Any]


def _checkpoint_models(bundle: ModelBundle) -> Dict[str, HanNetwork]:
    models = {}
    if bundle.shared:
        models["encryptor"] = bundle.encryptor(0)
    else:
        for i, enc in enumerate(bundle.encryptors):
            models[f"encryptor_{i}"] = enc
    models["aggregator"] = bundle.aggregator
    for slot, net in bundle.iter_attackers():
        models[slot.name] = net
    return models


def _write_entry(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def save_checkpoint(
    bundle: ModelBundle,
    path: str,
    completed_stage: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """
    Write every network of ``bundle`` to a ``hans-ckpt/1`` archive.

    Parameters
    ----------
    bundle : ModelBundle
        The models to persist. The original encryptor snapshot, if any, is stored as
        ``original_encryptor``.
    path : str or file-like
        Target file. Parent directories of a path are created.
    completed_stage : int, optional
        Number of training stages already completed. A resumed run starts after it.
    extra : dict, optional
        Additional JSON-serialisable metadata stored in the manifest.

    Returns
    -------
    str
        The path written.
    """
    models = _checkpoint_models(bundle)
    states = {name: state_to_numpy(net) for name, net in models.items()}
    descriptors = {name: net.descriptor() for name, net in models.items()}
    if bundle.original_state is not None:
        original = bundle.original_encryptor()
        states["original_encryptor"] = state_to_numpy(original)
        descriptors["original_encryptor"] = original.descriptor()

    blobs = {}
    payload = {}
    for model_name, state in states.items():
        for layer, array in state.items():
            entry = f"{model_name}/{layer}.f32"
            data = array.tobytes()
            payload[entry] = data
            blobs[entry] = {"crc32": zlib.crc32(data), "shape": list(array.shape)}

    manifest = {
        "format": FORMAT,
        "ahe": asdict(bundle.cfg),
        "completed_stage": int(completed_stage),
        "shared": bundle.shared,
        "attacker_slots": [[s.client, s.with_pk, s.depth] for s in bundle.attacker_slots],
        "models": descriptors,
        "blobs": blobs,
        "extra": extra or {},
    }

    if isinstance(path, (str, os.PathLike)):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with zipfile.ZipFile(path, "w") as archive:
        _write_entry(archive, MANIFEST, json.dumps(manifest, sort_keys=True, indent=2).encode())
        for entry in sorted(payload):
            _write_entry(archive, entry, payload[entry])
    return path


def _restore(archive: zipfile.ZipFile, manifest: Dict[str, Any], model_name: str, device) -> HanNetwork:
    net = HanNetwork.from_descriptor(manifest["models"][model_name])
    state = {}
    for layer, ref in net.state_dict().items():
        entry = f"{model_name}/{layer}.f32"
        meta = manifest["blobs"].get(entry)
        if meta is None:
            raise CheckpointError(f"missing blob {entry}")
        data = archive.read(entry)
        if zlib.crc32(data) != meta["crc32"]:
            raise CheckpointError(f"CRC mismatch in {entry}")
        array = np.frombuffer(data, dtype="<f4")
        if array.size != ref.numel() or list(ref.shape) != meta["shape"]:
            raise CheckpointError(f"shape mismatch in {entry}")
        state[layer] = torch.from_numpy(array.reshape(ref.shape).copy())
    net.load_state_dict(state)
    return net.to(device)


def load_checkpoint(path: str, device: Optional[torch.device] = None) -> Checkpoint:
    """
    Read a ``hans-ckpt/1`` archive, verifying every blob's CRC32.

    Returns
    -------
    Checkpoint
        The restored bundle (bit-identical weights), the completed stage and the manifest.

    Raises
    ------
    CheckpointError
        On a missing file, unknown format, or any integrity failure.
    """
    device = device or torch.device("cpu")
    try:
        archive = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc

    with archive:
        try:
            manifest = json.loads(archive.read(MANIFEST))
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path} has no readable manifest") from exc
        if manifest.get("format") != FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")

        cfg = AheConfig(**manifest["ahe"])
        attackers = {}
        for client, with_pk, depth in manifest["attacker_slots"]:
            slot = AttackerSlot(client, with_pk, depth)
            attackers[slot] = _restore(archive, manifest, slot.name, device)
        aggregator = _restore(archive, manifest, "aggregator", device)

        if manifest["shared"]:
            bundle = ModelBundle(cfg, _restore(archive, manifest, "encryptor", device), aggregator, attackers)
        else:
            encryptors = [_restore(archive, manifest, f"encryptor_{i}", device) for i in range(cfg.num_clients)]
            bundle = ModelBundle(cfg, encryptors[0], aggregator, attackers)
            bundle.encryptors = nn.ModuleList(encryptors)

        if "original_encryptor" in manifest["models"]:
            original = _restore(archive, manifest, "original_encryptor", torch.device("cpu"))
            bundle.original_state = {k: v.detach().clone() for k, v in original.state_dict().items()}

    return Checkpoint(bundle, manifest["completed_stage"], manifest)


def checkpoint_bytes(bundle: ModelBundle, completed_stage: int = 0) -> bytes:
    """The archive :func:`save_checkpoint` would write, as bytes."""
    buffer = io.BytesIO()
    save_checkpoint(bundle, buffer, completed_stage)
    return buffer.getvalue()
