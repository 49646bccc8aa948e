"""Versioned checkpoint container.

A checkpoint is a zip archive holding one ``.npy`` member per named array plus
``__meta__.json``. Member timestamps are fixed so identical contents produce
identical bytes, and the archive stays readable with ``numpy.load``.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

FORMAT_ID = "tripletdiff-checkpoint"
FORMAT_VERSION = 1
_META = "__meta__.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path: Path | str, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"format": FORMAT_ID, "version": FORMAT_VERSION, **meta}
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _member(zf, f"{name}.npy", buf.getvalue())
        _member(zf, _META, json.dumps(record, sort_keys=True, indent=1).encode())
    tmp.replace(path)
    return path


def read_meta(path: Path | str) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read(_META))
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: not a checkpoint ({e})") from None
    if meta.get("format") != FORMAT_ID:
        raise FormatError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: checkpoint format version {meta.get('version')} "
                          f"is not supported (expected {FORMAT_VERSION})")
    return meta


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    meta = read_meta(path)
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta


# --- torch state <-> named arrays ----------------------------------------

def module_arrays(state_dict: dict, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in state_dict.items()}


def module_state(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, torch.Tensor]:
    p = prefix + "/"
    return {k[len(p):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(p)}


def optimizer_arrays(optimizer: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    sd = optimizer.state_dict()
    arrays, scalars = {}, {}
    for pid, st in sd["state"].items():
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                arrays[f"optim/{pid}/{key}"] = val.detach().cpu().numpy()
            else:
                scalars[f"{pid}/{key}"] = val
    return arrays, {"param_groups": sd["param_groups"], "scalars": scalars}


def optimizer_state(arrays: dict[str, np.ndarray], meta: dict) -> dict:
    state: dict = {}
    for name, val in arrays.items():
        if name.startswith("optim/"):
            _, pid, key = name.split("/", 2)
            state.setdefault(int(pid), {})[key] = torch.from_numpy(val.copy())
    for name, val in meta.get("scalars", {}).items():
        pid, key = name.split("/", 1)
        state.setdefault(int(pid), {})[key] = val
    return {"state": state, "param_groups": meta["param_groups"]}
