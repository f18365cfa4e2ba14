"""File formats: field snapshots, trajectory/ensemble/filtering archives,
measurement sets, and cell CSVs.

Field snapshot binary layout (little endian)::

    magic  b"FLSF"   4 bytes
    N      uint32    Fourier truncation
    d      uint32    spatial dimension (2)
    comps  uint32    component count (2)
    block  complex64[comps, 2N+1, 2N+1]   row-major, k from -N to N

Cell snapshot binary: magic ``b"FLCF"``, ``uint32 n_cells``, ``float64[n_cells]``.
All JSON is written with sorted keys so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .fields import DIMENSION, N_COMPONENTS, Grid2, SpectralField, Trajectory
from .forward_claw import CellField, CellGrid
from .observe import MeasurementSet, NoiseModel
from .probability import WeightedEnsemble

FIELD_MAGIC = b"FLSF"
CELL_MAGIC = b"FLCF"


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_finite(obj), sort_keys=True, indent=2, default=_json_default,
                      allow_nan=False)
    path.write_text(text + "\n")
    return path


def _finite(o):
    """Replace non-finite floats by the strings "inf", "-inf", "nan" (strict JSON)."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return "nan" if np.isnan(o) else ("inf" if o > 0 else "-inf")
    return o


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def load_json(path):
    return json.loads(Path(path).read_text())


# -- single snapshots ---------------------------------------------------------------

def field_to_bytes(field: SpectralField) -> bytes:
    head = FIELD_MAGIC + struct.pack("<III", field.grid.n_modes, DIMENSION, N_COMPONENTS)
    return head + np.ascontiguousarray(field.coeffs, dtype="<c8").tobytes()


def field_from_bytes(data: bytes) -> SpectralField:
    if data[:4] != FIELD_MAGIC:
        raise InvalidArgument("not a field snapshot")
    n, d, comps = struct.unpack("<III", data[4:16])
    if d != DIMENSION or comps != N_COMPONENTS:
        raise InvalidArgument(f"unsupported snapshot layout d={d} components={comps}")
    w = 2 * n + 1
    block = np.frombuffer(data[16:], dtype="<c8")
    if block.size != comps * w * w:
        raise InvalidArgument("snapshot block has the wrong size")
    return SpectralField(Grid2(n), block.reshape(comps, w, w).astype(np.complex128))


def cell_to_bytes(field: CellField) -> bytes:
    return CELL_MAGIC + struct.pack("<I", field.grid.n_cells) + \
        np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def cell_from_bytes(data: bytes) -> CellField:
    if data[:4] != CELL_MAGIC:
        raise InvalidArgument("not a cell snapshot")
    (n,) = struct.unpack("<I", data[4:8])
    vals = np.frombuffer(data[8:], dtype="<f8")
    if vals.size != n:
        raise InvalidArgument("cell block has the wrong size")
    return CellField(CellGrid(n), vals.copy())


def write_snapshot(path, state) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(state, SpectralField):
        path.write_bytes(field_to_bytes(state))
    elif isinstance(state, CellField):
        path.write_bytes(cell_to_bytes(state))
    else:
        raise InvalidArgument(f"unsupported state type {type(state).__name__}")
    return path


def read_snapshot(path):
    data = Path(path).read_bytes()
    if data[:4] == FIELD_MAGIC:
        return field_from_bytes(data)
    return cell_from_bytes(data)


def field_to_json(field: SpectralField) -> dict:
    """Lossless export: one record per wavevector with full double precision."""
    n = field.grid.n_modes
    recs = []
    for i in range(2 * n + 1):
        for j in range(2 * n + 1):
            c = field.coeffs[:, i, j]
            recs.append({"k": [i - n, j - n], "re": c.real.tolist(), "im": c.imag.tolist()})
    return {"N": n, "d": DIMENSION, "components": N_COMPONENTS, "modes": recs}


def field_from_json(obj: dict) -> SpectralField:
    n = int(obj["N"])
    c = np.zeros((N_COMPONENTS, 2 * n + 1, 2 * n + 1), dtype=np.complex128)
    for rec in obj["modes"]:
        kx, ky = rec["k"]
        c[:, kx + n, ky + n] = np.array(rec["re"]) + 1j * np.array(rec["im"])
    return SpectralField(Grid2(n), c)


def write_cell_csv(path, field: CellField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "u"])
        for i, v in enumerate(field.values):
            w.writerow([i, repr(float(v))])
    return path


def read_cell_csv(path) -> CellField:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    vals = np.array([float(r["u"]) for r in rows])
    return CellField(CellGrid(len(vals)), vals)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


# -- archives ----------------------------------------------------------------------

def _ext(state) -> str:
    return "bin"


def write_trajectory(directory, traj: Trajectory, meta: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for k, s in enumerate(traj.states):
        name = f"snap_{k:05d}.{_ext(s)}"
        write_snapshot(d / name, s)
        files.append(name)
    dump_json({**meta, "snapshot_times": traj.times.tolist(), "files": files}, d / "manifest.json")
    return d


def read_trajectory(directory) -> tuple:
    d = Path(directory)
    man = load_json(d / "manifest.json")
    states = [read_snapshot(d / f) for f in man["files"]]
    return Trajectory(man["snapshot_times"], states), man


def write_ensemble(directory, ens: WeightedEnsemble, meta: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(ens.members):
        name = f"member_{i:05d}.bin"
        write_snapshot(d / name, m)
        files.append(name)
    dump_json({**meta, "n": len(ens), "log_weights": ens.log_weights.tolist(), "files": files},
              d / "manifest.json")
    return d


def read_ensemble(directory) -> tuple:
    d = Path(directory)
    man = load_json(d / "manifest.json")
    members = [read_snapshot(d / f) for f in man["files"]]
    return WeightedEnsemble(members, man["log_weights"]), man


def measurements_to_json(ms: MeasurementSet) -> dict:
    nd = ms.noise.describe()
    params = {k: v for k, v in nd.items() if k not in ("kind", "gamma")}
    return {"times": ms.times.tolist(), "y": ms.values.tolist(),
            "gamma": ms.noise.gamma.tolist(), "noise": {"kind": ms.noise.kind, **params},
            "seed": ms.seed, "truth_id": ms.truth_id}


def measurements_from_json(obj: dict) -> MeasurementSet:
    noise = NoiseModel.from_description({"gamma": obj["gamma"], **obj["noise"]})
    return MeasurementSet(obj["times"], obj["y"], noise, obj.get("seed"), obj.get("truth_id", ""))


def write_measurements(path, ms: MeasurementSet) -> Path:
    return dump_json(measurements_to_json(ms), path)


def read_measurements(path) -> MeasurementSet:
    return measurements_from_json(load_json(path))


def write_filtering(directory, fd, meta: dict | None = None) -> Path:
    """Manifest with breakpoints, stage weights and ledger, plus one ensemble
    archive per segment snapshot."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    segments = []
    if fd.states is not None:
        bps = fd.interval_breakpoints
        for j in range(max(1, len(bps) - 1)):
            seg = fd.segment(j)
            entries = []
            for k, t in enumerate(seg.times):
                sub = f"segment_{j:03d}/t_{k:04d}"
                write_ensemble(d / sub, seg.at(t), {"t": float(t), "stage": j})
                entries.append(sub)
            segments.append({"stage": j, "times": seg.times.tolist(), "snapshots": entries})
    man = {"breakpoints": fd.breakpoints.tolist(), "horizon": fd.horizon,
           "stage_log_weights": [w.tolist() for w in fd.stage_log_weights],
           "ledger": fd.ledger.as_dict() if fd.ledger is not None else None,
           "segments": segments, **(meta or {})}
    dump_json(man, d / "manifest.json")
    return d
