"""Run directories and reproducibility manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import subprocess
from pathlib import Path

import numpy as np
import torch

from .checkpoint import FORMAT_VERSION as CHECKPOINT_VERSION
from .config import RunConfig
from .errors import ConfigError

MANIFEST_VERSION = 1
RUN_LAYOUT = ("checkpoints", "samples", "reports")


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(root: Path | str, pattern: str = "**/*") -> str:
    """Hash of relative paths and contents of every file under ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.glob(pattern) if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(file_sha256(p).encode())
    return h.hexdigest()


def prepare_run_dir(out: Path | str, force: bool = False, allow_existing: bool = False) -> Path:
    """Create the per-run layout; refuse a non-empty directory unless ``force``."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not (force or allow_existing):
        raise ConfigError(f"{out} exists and is not empty; pass --force to reuse it")
    for sub in RUN_LAYOUT:
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


def build_manifest(command: str, cfg: RunConfig, seeds: dict, **extra) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "git_describe": git_describe(),
        "format_versions": {"checkpoint": CHECKPOINT_VERSION, "manifest": MANIFEST_VERSION},
        "platform": {"python": platform.python_version(), "numpy": np.__version__,
                     "torch": torch.__version__, "machine": platform.machine()},
        **extra,
    }


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "manifest_hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def write_manifest(run_dir: Path | str, manifest: dict) -> Path:
    manifest = dict(manifest, manifest_hash=manifest_hash(manifest))
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(run_dir: Path | str) -> dict:
    path = Path(run_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: cannot read manifest ({e})") from None


def write_json(path: Path | str, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
