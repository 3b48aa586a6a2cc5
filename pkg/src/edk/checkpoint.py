"""Checkpoint container: a zip of named .npy arrays plus a JSON manifest.

The manifest records each array's shape, dtype and SHA-256 so corruption is
caught at load time, and carries free-form metadata (configs, fingerprints).
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

FORMAT = "edk-ckpt/1"


def _sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = {"format": FORMAT, "meta": meta, "arrays": {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            buf = io.BytesIO()
            np.save(buf, arr, allow_pickle=False)
            zf.writestr(f"arrays/{name}.npy", buf.getvalue())
            manifest["arrays"][name] = {"shape": list(arr.shape), "dtype": str(arr.dtype), "sha256": _sha(arr)}
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise DataError(f"cannot open checkpoint {path}: {e}") from e
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")
        arrays = {}
        for name, info in manifest["arrays"].items():
            arr = np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
            if list(arr.shape) != info["shape"] or _sha(arr) != info["sha256"]:
                raise DataError(f"checksum or shape mismatch for array {name!r}")
            arrays[name] = arr
    return arrays, manifest["meta"]


def state_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def arrays_to_state(arrays: dict[str, np.ndarray], prefix: str = "") -> dict[str, torch.Tensor]:
    return {k[len(prefix) :]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix)}
