import os
import json
import math
import logging
from dataclasses import asdict, is_dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple

logger = logging.getLogger(__name__)


def format_stage_name(stage_name: str) -> str:
    """Banner printed at the start of every pipeline node."""
    formatted_name = stage_name.strip().replace("_", " ").upper()

    return f"---{formatted_name}----"


def to_record(obj: Any) -> Any:
    """
    Convert dataclasses, tensors and numpy values into JSON-serialisable objects.

    Non-finite floats become ``None`` so that every emitted line is strict JSON.
    """
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_record(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_record(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_record(v) for v in obj]
    if hasattr(obj, "tolist"):
        return to_record(obj.tolist())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def dumps_record(record: Any) -> str:
    return json.dumps(to_record(record), sort_keys=True, separators=(",", ":"))


def log_records(
    records: Iterable[Any],
    file_name: str,
    log: bool = True,
    log_path: str = "./logs/",
    overwrite: bool = False,
) -> Tuple[Optional[str], Optional[str]]:
    """
    Appends records to a JSON-lines file.

    Parameters
    ----------
    records : iterable
        Dicts or dataclasses. Each becomes one line.
    file_name : str
        The name of the file to append to.
    log : bool, optional
        Whether to write anything at all. The default is True.
    log_path : str, optional
        The directory of the log file. The default is './logs/'.
    overwrite : bool, optional
        Whether to truncate an existing file. The default is False.
        - If False, records are appended to the existing file.
        - If True, the file is rewritten from scratch.

    Returns
    -------
    tuple
        The path and name of the log file.
    """

    if not log:
        return (None, None)

    os.makedirs(log_path, exist_ok=True)
    file_path = os.path.join(log_path, file_name)

    mode = "w" if overwrite else "a"
    n_lines = 0
    with open(file_path, mode, encoding="utf-8") as file:
        for record in records:
            file.write(dumps_record(record) + "\n")
            n_lines += 1

    logger.debug("wrote %d records to %s", n_lines, file_path)

    return (file_path, file_name)


def unique_file_name(log_path: str, file_name: str) -> str:
    """
    Returns ``file_name`` or, when it already exists in ``log_path``, the first free
    ``<base>_<i><ext>`` variant.
    """
    if not os.path.exists(os.path.join(log_path, file_name)):
        return file_name
    base_name, ext = os.path.splitext(file_name)
    i = 1
    while True:
        new_file_name = f"{base_name}_{i}{ext}"
        if not os.path.exists(os.path.join(log_path, new_file_name)):
            return new_file_name
        i += 1


def read_records(file_path: str) -> List[Dict[str, Any]]:
    """Reads a JSON-lines file written by :func:`log_records`."""
    with open(file_path, "r", encoding="utf-8") as file:
        return [json.loads(line) for line in file if line.strip()]
