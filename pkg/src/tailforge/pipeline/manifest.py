"""Run manifest: one JSON line per executed command, with artifact hashes."""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path

MANIFEST_NAME = "manifest.jsonl"
LOCK_NAME = ".lock"


class LockHeldError(Exception):
    """Another command holds the output-directory lock."""


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@contextmanager
def output_lock(out_dir: str | Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / LOCK_NAME
    try:
        fd = lock_path.open("x")
    except FileExistsError:
        raise LockHeldError(
            f"lock file {lock_path} exists; another command is running in this "
            f"output directory (delete it if that command crashed)"
        ) from None
    try:
        yield
    finally:
        fd.close()
        lock_path.unlink(missing_ok=True)


def append_record(
    out_dir: str | Path,
    command: str,
    config_snapshot: dict,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    duration_s: float,
) -> dict:
    record = {
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "duration_s": round(duration_s, 3),
        "config": config_snapshot,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in sorted(inputs.items())
        },
        "outputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in sorted(outputs.items())
        },
    }
    manifest_path = Path(out_dir) / MANIFEST_NAME
    with open(manifest_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return record


def read_manifest(out_dir: str | Path) -> list[dict]:
    manifest_path = Path(out_dir) / MANIFEST_NAME
    if not manifest_path.exists():
        return []
    return [
        json.loads(line)
        for line in manifest_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def output_hashes(records: list[dict], command: str) -> dict[str, str]:
    """Hashes from the most recent manifest record of ``command``."""
    for record in reversed(records):
        if record["command"] == command:
            return {name: info["sha256"] for name, info in record["outputs"].items()}
    return {}
