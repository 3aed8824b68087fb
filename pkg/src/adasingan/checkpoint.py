"""Checkpoint persistence: raw tensor archives and the run manifest.

A tensor archive is a pair of files ``<stem>.bin`` (the tensors' raw
little-endian bytes, concatenated in name order) and ``<stem>.json`` (name,
shape, dtype, byte offset per tensor plus a SHA-256 of the blob). The
format carries no timestamps, so identical tensors give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
MANIFEST = "manifest.json"

_DTYPES = {
    "float32": (torch.float32, np.float32),
    "float64": (torch.float64, np.float64),
    "int64": (torch.int64, np.int64),
}


class CheckpointError(FileNotFoundError):
    pass


def save_tensors(stem, tensors: dict[str, torch.Tensor]) -> str:
    """Write an archive and return the SHA-256 of its blob."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        dtype = str(t.dtype).replace("torch.", "")
        if dtype not in _DTYPES:
            raise TypeError(f"unsupported dtype {dtype} for tensor {name}")
        raw = t.numpy().astype(np.dtype(_DTYPES[dtype][1]).newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    digest = hashlib.sha256(blob).hexdigest()
    stem.with_suffix(".bin").write_bytes(blob)
    stem.with_suffix(".json").write_text(
        json.dumps({"format_version": FORMAT_VERSION, "sha256": digest, "tensors": entries},
                   indent=1) + "\n")
    return digest


def load_tensors(stem) -> dict[str, torch.Tensor]:
    stem = Path(stem)
    for suffix in (".json", ".bin"):
        if not stem.with_suffix(suffix).exists():
            raise CheckpointError(f"missing checkpoint file: {stem.with_suffix(suffix)}")
    meta = json.loads(stem.with_suffix(".json").read_text())
    blob = stem.with_suffix(".bin").read_bytes()
    out = {}
    for e in meta["tensors"]:
        np_dtype = np.dtype(_DTYPES[e["dtype"]][1]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=np_dtype, count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=e["offset"]).astype(_DTYPES[e["dtype"]][1])
        out[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return out


def archive_hash(stem) -> str:
    return hashlib.sha256(Path(stem).with_suffix(".bin").read_bytes()).hexdigest()


def tensor_fingerprint(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().cpu().to(torch.float32).contiguous().numpy().tobytes()).hexdigest()


def write_manifest(out_dir, manifest: dict) -> None:
    path = Path(out_dir) / MANIFEST
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    tmp.replace(path)


def read_manifest(ckpt_dir, check_files: bool = True) -> dict:
    """Load and validate a manifest; every referenced file must exist."""
    ckpt_dir = Path(ckpt_dir)
    path = ckpt_dir / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}")
    if check_files:
        for rel in manifest_files(manifest):
            if not (ckpt_dir / rel).exists():
                raise CheckpointError(f"checkpoint file missing: {ckpt_dir / rel}")
    return manifest


def manifest_files(manifest: dict) -> list[str]:
    files = [manifest["real_path"] + ".bin", manifest["real_path"] + ".json"]
    for key in ("decision_log_path", "bound_report_path"):
        if manifest.get(key):
            files.append(manifest[key])
    for entry in manifest["scales"]:
        for key in ("generator_params_path", "discriminator_params_path", "noise_map_path"):
            files += [entry[key] + ".bin", entry[key] + ".json"]
    return files
