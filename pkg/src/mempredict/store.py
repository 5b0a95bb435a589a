"""On-disk model store: checksummed JSON snapshots behind an atomically swapped ``current`` link."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .errors import NotFound, StoreCorrupt, VersionMismatch

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
CURRENT = "current"
SNAPSHOTS = "snapshots"


def encode_value(obj):
    """JSON-ready copy of ``obj``; ndarrays become base64 blobs with dtype and shape."""
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        if arr.dtype == np.intp:
            arr = arr.astype(np.int64)
        return {
            "__ndarray__": base64.b64encode(arr.tobytes()).decode("ascii"),
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
        }
    if isinstance(obj, dict):
        return {str(k): encode_value(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode_value(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def decode_value(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            raw = base64.b64decode(obj["__ndarray__"], validate=True)
            arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"]))
            return arr.reshape(obj["shape"]).copy()
        return {k: decode_value(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode_value(v) for v in obj]
    return obj


def dumps(obj) -> bytes:
    return (json.dumps(encode_value(obj), sort_keys=True, separators=(",", ":")) + "\n").encode()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_snapshot(store_dir, files: dict[str, object], manifest: dict) -> Path:
    """Write ``files`` plus a manifest into a new snapshot and point ``current`` at it.

    Everything lands in a temporary directory first; the directory rename and the
    link replacement are each atomic, so readers see the old or the new snapshot.
    """
    store = Path(store_dir)
    snaps = store / SNAPSHOTS
    snaps.mkdir(parents=True, exist_ok=True)
    blobs = {name: dumps(obj) for name, obj in files.items()}
    manifest = dict(manifest)
    manifest["schema_version"] = manifest.get("schema_version", SCHEMA_VERSION)
    manifest["files"] = {name: sha256(b) for name, b in sorted(blobs.items())}
    mblob = dumps(manifest)
    name = "snap-" + sha256(mblob)[:16]
    final = snaps / name
    if not final.exists():
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=snaps))
        try:
            for fname, b in blobs.items():
                (tmp / fname).write_bytes(b)
            (tmp / MANIFEST).write_bytes(mblob)
            os.rename(tmp, final)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
    link_tmp = store / f".{CURRENT}.{os.getpid()}"
    if link_tmp.is_symlink() or link_tmp.exists():
        link_tmp.unlink()
    os.symlink(os.path.join(SNAPSHOTS, name), link_tmp)
    os.replace(link_tmp, store / CURRENT)
    return final


def read_snapshot(store_dir, expected_version: int = SCHEMA_VERSION) -> tuple[dict, dict]:
    """Return ``(manifest, files)`` of the current snapshot after verifying checksums."""
    store = Path(store_dir)
    current = store / CURRENT
    if not current.exists():
        raise NotFound(f"no model snapshot under {store}")
    snap = current.resolve()
    try:
        mblob = (snap / MANIFEST).read_bytes()
    except FileNotFoundError as e:
        raise StoreCorrupt(f"missing manifest in {snap}") from e
    try:
        manifest = json.loads(mblob)
    except ValueError as e:
        raise StoreCorrupt(f"unreadable manifest: {e}") from e
    if not isinstance(manifest, dict) or "schema_version" not in manifest:
        raise StoreCorrupt("manifest lacks a schema version")
    if manifest["schema_version"] != expected_version:
        raise VersionMismatch(manifest["schema_version"], expected_version)
    files = {}
    for fname, digest in manifest.get("files", {}).items():
        path = snap / fname
        try:
            blob = path.read_bytes()
        except FileNotFoundError as e:
            raise StoreCorrupt(f"missing {fname}") from e
        if sha256(blob) != digest:
            raise StoreCorrupt(f"checksum mismatch in {fname}")
        try:
            files[fname] = decode_value(json.loads(blob))
        except ValueError as e:
            raise StoreCorrupt(f"unreadable {fname}: {e}") from e
    return manifest, files
