"""Configuration files and the on-disk quantization-tree cache."""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .heston import HestonParams
from .tree import QuantTree, build_tree

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

CACHE_VERSION = 1
PARAM_KEYS = ("s0", "r", "q", "theta", "kappa", "xi", "rho", "v0")


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def load_mapping(path: str | Path) -> dict:
    """Read a TOML or JSON file into a dict (by extension; TOML otherwise)."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw)
        return tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def params_from_mapping(d: dict) -> HestonParams:
    """``HestonParams`` from a flat mapping or one with a ``params`` table."""
    if "params" in d and isinstance(d["params"], dict):
        d = d["params"]
    unknown = set(d) - set(PARAM_KEYS)
    if unknown:
        raise ConfigError(f"unknown parameter keys {sorted(unknown)}")
    missing = [k for k in PARAM_KEYS[:-1] if k not in d]
    if missing:
        raise ConfigError(f"missing parameter keys {missing}")
    try:
        return HestonParams(**{k: (None if d.get(k) is None else float(d[k]))
                               for k in PARAM_KEYS if k in d})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_params(path: str | Path) -> HestonParams:
    return params_from_mapping(load_mapping(path))


# ---------------------------------------------------------------------------
# Tree cache
# ---------------------------------------------------------------------------

def tree_key(params: HestonParams, T: float, n: int, N1, N2, solver: str = "newton",
             tol: float = 1e-10) -> str:
    blob = json.dumps({
        "version": CACHE_VERSION,
        "params": params.to_dict(),
        "T": repr(float(T)),
        "n": int(n),
        "N1": N1 if np.isscalar(N1) else list(map(int, N1)),
        "N2": N2 if np.isscalar(N2) else list(map(int, N2)),
        "solver": solver,
        "tol": repr(float(tol)),
    }, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def save_tree(tree: QuantTree, path: str | Path) -> None:
    """Write grids and weights (not the transition tensors, which are recomputable)."""
    arrays = {"times": tree.times}
    for k in range(tree.n + 1):
        arrays[f"x{k}"] = tree.asset_grids[k]
        arrays[f"y{k}"] = tree.vol_grids[k]
        arrays[f"py{k}"] = tree.vol_weights[k]
        arrays[f"p{k}"] = tree.joint_weights[k]
    for k in range(tree.n):
        arrays[f"P{k}"] = tree.vol_transitions[k]
    meta = {"version": CACHE_VERSION, "params": tree.params.to_dict(), "T": tree.T,
            "n": tree.n, "solver": tree.solver, "build_seconds": tree.build_seconds}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_tree(path: str | Path) -> QuantTree:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CACHE_VERSION:
            raise ConfigError(f"cache format {meta.get('version')} != {CACHE_VERSION}")
        n = int(meta["n"])
        tree = QuantTree(HestonParams(**meta["params"]), float(meta["T"]), n,
                         np.array(z["times"]), solver=meta["solver"],
                         build_seconds=float(meta["build_seconds"]))
        for k in range(n + 1):
            tree.asset_grids.append(np.array(z[f"x{k}"]))
            tree.vol_grids.append(np.array(z[f"y{k}"]))
            tree.vol_weights.append(np.array(z[f"py{k}"]))
            tree.joint_weights.append(np.array(z[f"p{k}"]))
        tree.vol_transitions = [np.array(z[f"P{k}"]) for k in range(n)]
    return tree


@contextlib.contextmanager
def _locked(lock_path: Path):
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def cached_tree(params: HestonParams, T: float, n: int, N1, N2, cache_dir: str | Path | None,
                solver: str = "newton", tol: float = 1e-10, **build_kwargs) -> QuantTree:
    """Load the tree from ``cache_dir`` if present, otherwise build and store it."""
    if cache_dir is None:
        return build_tree(params, T, n, N1, N2, solver=solver, tol=tol,
                          store_transitions=False, **build_kwargs)
    cache_dir = Path(cache_dir)
    key = tree_key(params, T, n, N1, N2, solver, tol)
    path = cache_dir / f"tree-{key}.npz"
    with _locked(cache_dir / ".lock"):
        if path.exists():
            return load_tree(path)
        tree = build_tree(params, T, n, N1, N2, solver=solver, tol=tol,
                          store_transitions=False, **build_kwargs)
        save_tree(tree, path)
    return tree
