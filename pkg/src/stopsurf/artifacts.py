"""On-disk artifact formats: binary grids, CSV tables, JSON, the manifest.

Binary grid layout (all little-endian):

    bytes 0-7    magic  b"SSGR0001"
    u32          kind   (1 = value, 2 = exercise mask, 3 = gain)
    u32 x 3      nt, nx, ny
    f64 x 5      horizon, x_lo, x_hi, y_lo, y_hi
    f64 x nt*nx*ny   payload, row-major with t slowest, then x, then y

Masks are stored as 0.0/1.0 doubles so a single reader covers every grid
file.  JSON artifacts are written with sorted keys and a trailing newline
so identical runs produce byte-identical files; the manifest is the only
artifact carrying timestamps.
"""

from __future__ import annotations

import hashlib
import json
import struct
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from .model import Grid, ProblemSpec, build_grid

__all__ = [
    "ArtifactError",
    "GRID_KINDS",
    "MANIFEST_NAME",
    "load_manifest",
    "output_lock",
    "read_grid_binary",
    "record_outputs",
    "sha256_file",
    "new_manifest",
    "verify_manifest",
    "write_grid_binary",
    "write_grid_csv",
    "write_json",
]

MAGIC = b"SSGR0001"
GRID_KINDS = {"value": 1, "mask": 2, "gain": 3}
_KIND_NAMES = {v: k for k, v in GRID_KINDS.items()}
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".stopsurf.lock"


class ArtifactError(ValueError):
    pass


def output_lock(outdir: Path) -> FileLock:
    """Guards an output directory against concurrent writers."""
    outdir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(outdir / LOCK_NAME), timeout=10)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_grid_binary(path: Path, kind: str, spec: ProblemSpec, grid: Grid,
                      field: np.ndarray) -> None:
    data = np.ascontiguousarray(field, dtype="<f8")
    if data.shape != (grid.nt, grid.nx, grid.ny):
        raise ArtifactError(f"field shape {data.shape} does not match the grid")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIII", GRID_KINDS[kind], grid.nt, grid.nx, grid.ny))
        f.write(struct.pack("<ddddd", spec.horizon, spec.x_lo, spec.x_hi,
                            spec.y_lo, spec.y_hi))
        f.write(data.tobytes())


def read_grid_binary(path: Path) -> tuple[str, dict, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ArtifactError(f"{path}: not a grid file (bad magic {magic!r})")
        kind, nt, nx, ny = struct.unpack("<IIII", f.read(16))
        horizon, x_lo, x_hi, y_lo, y_hi = struct.unpack("<ddddd", f.read(40))
        payload = np.frombuffer(f.read(nt * nx * ny * 8), dtype="<f8")
    if payload.size != nt * nx * ny:
        raise ArtifactError(f"{path}: truncated payload")
    meta = {"nt": nt, "nx": nx, "ny": ny, "horizon": horizon,
            "x_lo": x_lo, "x_hi": x_hi, "y_lo": y_lo, "y_hi": y_hi}
    return _KIND_NAMES.get(kind, str(kind)), meta, payload.reshape(nt, nx, ny).copy()


def grid_from_meta(spec: ProblemSpec, meta: dict) -> Grid:
    box = (spec.x_lo, spec.x_hi, spec.y_lo, spec.y_hi, spec.horizon)
    stored = (meta["x_lo"], meta["x_hi"], meta["y_lo"], meta["y_hi"], meta["horizon"])
    if not np.allclose(box, stored, rtol=0, atol=1e-12):
        raise ArtifactError("grid file domain does not match the problem file")
    return build_grid(spec, meta["nt"], meta["nx"], meta["ny"])


def write_grid_csv(path: Path, grid: Grid, field: np.ndarray, column: str) -> None:
    with open(path, "w") as f:
        f.write(f"t,x,y,{column}\n")
        for k in range(grid.nt):
            for i in range(grid.nx):
                for j in range(grid.ny):
                    f.write(f"{grid.t[k]:.17g},{grid.x[i]:.17g},{grid.y[j]:.17g},"
                            f"{field[k, i, j]:.17g}\n")


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _jsonable(value):
    if isinstance(value, float) and not np.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return value


def sanitize(obj):
    """Replace non-finite floats with strings so JSON stays standard."""
    if isinstance(obj, dict):
        return {k: sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    return _jsonable(obj)


def new_manifest(outdir: Path, problem_path: Path, grid: Grid, solver_echo: dict,
                 flags: dict) -> dict:
    manifest = {
        "format": "stopsurf-manifest@1",
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "problem": {"path": problem_path.name, "sha256": sha256_file(problem_path)},
        "grid": {"nt": grid.nt, "nx": grid.nx, "ny": grid.ny,
                 "dt": grid.dt, "hx": grid.hx, "hy": grid.hy},
        "solver": solver_echo,
        "flags": flags,
        "versions": {"stopsurf": __version__, "numpy": np.__version__},
        "outputs": [],
    }
    write_json(outdir / MANIFEST_NAME, manifest)
    return manifest


def load_manifest(outdir: Path) -> dict:
    path = outdir / MANIFEST_NAME
    if not path.exists():
        raise ArtifactError(f"no manifest at {path}; run `solve` first")
    with open(path) as f:
        return json.load(f)


def record_outputs(outdir: Path, names_and_paths: list[tuple[str, Path]]) -> None:
    """List artifacts in the manifest with their content hashes."""
    manifest = load_manifest(outdir)
    known = {entry["name"]: entry for entry in manifest["outputs"]}
    for name, path in names_and_paths:
        rel = path.resolve().relative_to(outdir.resolve()).as_posix()
        known[name] = {"name": name, "path": rel, "sha256": sha256_file(path)}
    manifest["outputs"] = [known[k] for k in sorted(known)]
    write_json(outdir / MANIFEST_NAME, manifest)


def verify_manifest(outdir: Path, problem_path: Path | None = None) -> dict:
    """Recompute artifact hashes against the manifest; raises on mismatch."""
    manifest = load_manifest(outdir)
    if problem_path is not None:
        got = sha256_file(problem_path)
        if got != manifest["problem"]["sha256"]:
            raise ArtifactError(
                "problem file does not match the one recorded in the manifest")
    for entry in manifest["outputs"]:
        path = outdir / entry["path"]
        if not path.exists():
            raise ArtifactError(f"artifact {entry['path']} listed but missing")
        if sha256_file(path) != entry["sha256"]:
            raise ArtifactError(f"artifact {entry['path']} does not match its hash")
    return manifest
