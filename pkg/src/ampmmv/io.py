"""Directory serialization of instances and results.

An instance directory holds ``header.json`` plus raw little-endian float64
arrays in row-major order.  Complex arrays carry a trailing axis of length 2
(real, imaginary).  Implicit operators are densified on save.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .signal_model import GroundTruth, MmvProblem, ModelParams, as_dense

FORMAT = "ampmmv-instance"
VERSION = 1
_LE = np.dtype("<f8")


def write_array(path: Path, a: np.ndarray) -> dict:
    a = np.asarray(a)
    cplx = np.iscomplexobj(a)
    raw = np.stack([a.real, a.imag], axis=-1) if cplx else a
    np.ascontiguousarray(raw, dtype=_LE).tofile(path)
    return {"file": path.name, "shape": list(a.shape), "complex": bool(cplx)}


def read_array(root: Path, meta: dict) -> np.ndarray:
    shape = tuple(meta["shape"])
    raw = np.fromfile(root / meta["file"], dtype=_LE)
    if meta["complex"]:
        raw = raw.reshape(shape + (2,))
        return raw[..., 0] + 1j * raw[..., 1]
    return raw.reshape(shape).astype(float)


def save_instance(path, problem: MmvProblem, truth: GroundTruth | None = None,
                  params: ModelParams | None = None, seed=None, extra: dict | None = None):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    N, M, T = problem.dims
    shared = problem.shared_matrix
    mats = [problem.matrices[0]] if shared else problem.matrices
    arrays = {
        "A": write_array(root / "A.bin", np.stack([as_dense(A) for A in mats])),
        "Y": write_array(root / "Y.bin", np.stack(problem.observations)),
    }
    if truth is not None:
        arrays["support"] = write_array(root / "truth_support.bin",
                                        truth.support.astype(float))
        arrays["thetas"] = write_array(root / "truth_thetas.bin", truth.thetas)
        arrays["signals"] = write_array(root / "truth_signals.bin", truth.signals)
    header = {
        "format": FORMAT, "version": VERSION,
        "dims": {"N": N, "M": M, "T": T},
        "field": "complex" if problem.is_complex else "real",
        "shared_matrix": shared,
        "seed": seed,
        "params": None if params is None else params.to_dict(),
        "arrays": arrays,
    }
    if extra:
        header["extra"] = extra
    (root / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return root


def load_instance(path):
    """Return ``(problem, truth or None, params or None, header)``."""
    root = Path(path)
    header = json.loads((root / "header.json").read_text())
    if header.get("format") != FORMAT:
        raise ValueError(f"{root} is not an instance directory")
    arr = header["arrays"]
    A = read_array(root, arr["A"])
    Y = read_array(root, arr["Y"])
    mats = [A[0]] if header["shared_matrix"] else list(A)
    problem = MmvProblem(mats, list(Y))
    truth = None
    if "support" in arr:
        truth = GroundTruth(read_array(root, arr["support"]).astype(bool),
                            read_array(root, arr["thetas"]), read_array(root, arr["signals"]))
    params = ModelParams.from_dict(header["params"]) if header.get("params") else None
    return problem, truth, params, header


def save_arrays(path, arrays: dict, meta: dict | None = None):
    """Write named arrays plus a ``header.json`` index (used for solver outputs)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index = {name: write_array(root / f"{name}.bin", a) for name, a in arrays.items()}
    header = {"arrays": index, **(meta or {})}
    (root / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return root


def load_arrays(path) -> tuple[dict, dict]:
    root = Path(path)
    header = json.loads((root / "header.json").read_text())
    return {k: read_array(root, m) for k, m in header["arrays"].items()}, header
