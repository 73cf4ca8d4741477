"""Labelled sensor-recording datasets: layout, extraction, noise, generation, storage."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import FomArrays, Mesh2D, ParamPoint
from .integrator import StateHistory
from .io import canonical_json, read_container, write_container
from .sampling import ParamSpace, sample_points

log = logging.getLogger(__name__)

QUANTITIES = ("displacement", "acceleration")
PARAM_COLUMNS = ("g", "amplitude", "frequency", "delta")


@dataclass
class SensorLayout:
    """``rows[n]`` is the constrained-system dof observed by sensor ``n``."""

    rows: np.ndarray
    quantity: str = "acceleration"
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        if self.quantity not in QUANTITIES:
            raise ValueError(f"quantity must be one of {QUANTITIES}")
        if self.rows.size == 0:
            raise ValueError("empty sensor layout")
        if np.unique(self.rows).size != self.rows.size:
            raise ValueError("sensor layout observes the same dof twice")
        if not self.names:
            self.names = [f"s{n + 1}" for n in range(self.rows.size)]

    @property
    def n_sensors(self) -> int:
        return self.rows.size

    def boolean_matrix(self, n_dofs: int) -> np.ndarray:
        if self.rows.max() >= n_dofs or self.rows.min() < 0:
            raise IndexError("sensor dof index out of range")
        T = np.zeros((self.n_sensors, n_dofs))
        T[np.arange(self.n_sensors), self.rows] = 1.0
        return T

    @classmethod
    def from_points(cls, mesh: Mesh2D, fom: FomArrays, sensors: list, quantity: str = "acceleration"):
        """Sensors given as dicts with ``x_m``, ``y_m``, ``direction`` ('x' or 'y') and optional ``name``."""
        rows, names = [], []
        for i, s in enumerate(sensors):
            d = {"x": 0, "y": 1}.get(s["direction"])
            if d is None:
                raise ValueError(f"sensor {i}: direction must be 'x' or 'y'")
            node = mesh.node_at(float(s["x_m"]), float(s["y_m"]))
            rows.append(fom.index_of(mesh.dof(node, d)))
            names.append(s.get("name", f"s{i + 1}"))
        return cls(rows=np.array(rows), quantity=quantity, names=names)


def extract_sensors(history: StateHistory, layout: SensorLayout, rows_recorded=None) -> np.ndarray:
    """Recording matrix ``U (L, N0)``: column ``n`` is sensor ``n``'s quantity over time.

    ``rows_recorded`` maps history rows to dofs when the history holds a
    subset of rows (default: rows are dofs).
    """
    data = getattr(history, layout.quantity)
    if data is None:
        raise ValueError(f"history carries no {layout.quantity}")
    if rows_recorded is None:
        idx = layout.rows
    else:
        lookup = {int(r): i for i, r in enumerate(rows_recorded)}
        try:
            idx = np.array([lookup[int(r)] for r in layout.rows])
        except KeyError as exc:
            raise IndexError(f"dof {exc} not present in the recorded history") from None
    if idx.max() >= data.shape[0] or idx.min() < 0:
        raise IndexError("sensor dof index out of range")
    return np.ascontiguousarray(data[idx].T)


def add_noise(U, snr, rng: np.random.Generator, warnings: list | None = None) -> np.ndarray:
    """Additive white Gaussian noise with per-channel variance ``mean(u^2) / snr``.

    ``snr=None`` returns a copy unchanged. All-zero channels receive no noise
    and a message is appended to ``warnings``.
    """
    U = np.array(U, dtype=np.float64, copy=True)
    if snr is None:
        return U
    if not snr > 0:
        raise ValueError("snr must be positive")
    power = np.mean(U ** 2, axis=0)
    sigma = np.sqrt(power / snr)
    noise = rng.standard_normal(U.shape)
    for n in np.flatnonzero(power == 0):
        msg = f"channel {int(n)} is identically zero; no noise added"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    return U + noise * sigma


@dataclass
class Dataset:
    U: np.ndarray  # (I, L, N0)
    labels: np.ndarray  # (I,)
    params: np.ndarray  # (I, 4): g, amplitude, frequency, delta
    fidelity: str
    snr: float | None
    n_classes: int
    splits: dict  # name -> instance indices
    mean: np.ndarray = None
    std: np.ndarray = None
    config_hash: str = ""
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    sensor_names: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.labels)

    def split(self, name: str):
        idx = self.splits[name]
        return self.U[idx], self.labels[idx]

    def class_counts(self, name: str | None = None) -> list:
        lab = self.labels if name is None else self.labels[self.splits[name]]
        return np.bincount(lab, minlength=self.n_classes).tolist()


def standardization(U_train) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over instances and time (std floored at tiny)."""
    U_train = np.asarray(U_train)
    mean = U_train.mean(axis=(0, 1))
    std = U_train.std(axis=(0, 1))
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _split_indices(count, train_fraction, rng):
    order = rng.permutation(count)
    n_train = int(round(train_fraction * count))
    return {"train": np.sort(order[:n_train]), "val": np.sort(order[n_train:])}


def generate(count: int, space: ParamSpace, solver, layout: SensorLayout, snr=None, seed: int = 0,
             train_fraction: float | None = 0.75, config_hash: str = "", points=None) -> Dataset:
    """Sample, solve, extract and perturb ``count`` instances.

    Randomness is split up front: one stream for the parameter sample, one per
    instance for noise, one for the split. With ``train_fraction=None`` all
    instances form a single ``test`` split. Failed solves are logged with their
    parameters and skipped.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ss_params, ss_noise, ss_split = np.random.SeedSequence(seed).spawn(3)
    if points is None:
        points = sample_points(space, count, np.random.default_rng(ss_params))
    noise_seeds = ss_noise.spawn(count)
    U, labels, params, failures, warnings = [], [], [], [], []
    for i, p in enumerate(points):
        try:
            hist = solver.sensor_history(p, layout.rows)
            u = extract_sensors(hist, layout, rows_recorded=layout.rows)
            if not np.isfinite(u).all():
                raise FloatingPointError("non-finite sensor values")
        except Exception as exc:  # recorded, generation continues
            failures.append({"index": i, "params": p.as_dict(), "error": str(exc)})
            log.error("instance %d failed (%s): %s", i, p.as_dict(), exc)
            continue
        U.append(add_noise(u, snr, np.random.default_rng(noise_seeds[i]), warnings))
        labels.append(p.g)
        params.append([p.g, p.amplitude, p.frequency, p.delta])
    if failures:
        log.warning("dataset shortfall: %d of %d instances failed", len(failures), count)
    if not U:
        raise RuntimeError("every instance failed")
    U = np.stack(U)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if train_fraction is None:
        splits = {"test": np.arange(n)}
        mean, std = None, None
    else:
        splits = _split_indices(n, train_fraction, np.random.default_rng(ss_split))
        mean, std = standardization(U[splits["train"]])
    return Dataset(U=U, labels=labels, params=np.asarray(params, dtype=np.float64), fidelity=solver.fidelity,
                   snr=snr, n_classes=space.n_classes, splits=splits, mean=mean, std=std,
                   config_hash=config_hash, failures=failures, warnings=warnings, sensor_names=list(layout.names))


# ---------------------------------------------------------------------------
# Storage: one container per split plus a JSON sidecar
# ---------------------------------------------------------------------------

SIDECAR = "dataset.json"


def _meta(ds: Dataset, name: str) -> dict:
    return {"split": name, "fidelity": ds.fidelity, "snr": ds.snr, "snr_kind": "linear power ratio",
            "n_classes": ds.n_classes, "config_hash": ds.config_hash, "sensor_names": ds.sensor_names,
            "param_columns": list(PARAM_COLUMNS), "class_counts": ds.class_counts(name)}


def save_dataset(ds: Dataset, out_dir, generation_config: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in ds.splits.items():
        U = ds.U[idx]
        row_bytes = U.shape[1] * U.shape[2] * 8
        arrays = {"U": U, "labels": ds.labels[idx], "params": ds.params[idx], "instance": idx,
                  "offset": np.arange(len(idx), dtype=np.int64) * row_bytes}
        if ds.mean is not None:
            arrays["mean"], arrays["std"] = ds.mean, ds.std
        write_container(out / f"{name}.shm", "dataset", arrays, _meta(ds, name))
    sidecar = {"count": ds.count, "splits": {k: len(v) for k, v in ds.splits.items()},
               "class_counts": ds.class_counts(), "fidelity": ds.fidelity, "snr": ds.snr,
               "snr_kind": "linear power ratio", "config_hash": ds.config_hash, "failures": ds.failures,
               "warnings": ds.warnings, "generation": generation_config or {}}
    (out / SIDECAR).write_text(json.dumps(json.loads(canonical_json(sidecar)), indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"missing dataset directory: {path}")
    files = sorted(path.glob("*.shm"))
    if not files:
        raise FileNotFoundError(f"no split containers in {path}")
    parts = {f.stem: read_container(f, kind="dataset") for f in files}
    n = sum(len(c["labels"]) for c in parts.values())
    first = next(iter(parts.values()))
    U = np.empty((n,) + first["U"].shape[1:])
    labels = np.empty(n, dtype=np.int64)
    params = np.empty((n, len(PARAM_COLUMNS)))
    splits = {}
    for name, c in parts.items():
        idx = c["instance"]
        U[idx], labels[idx], params[idx] = c["U"], c["labels"], c["params"]
        splits[name] = idx
    meta = first.meta
    sidecar = json.loads((path / SIDECAR).read_text()) if (path / SIDECAR).exists() else {}
    return Dataset(U=U, labels=labels, params=params, fidelity=meta["fidelity"], snr=meta["snr"],
                   n_classes=int(meta["n_classes"]), splits=splits,
                   mean=first.arrays.get("mean"), std=first.arrays.get("std"), config_hash=meta["config_hash"],
                   failures=sidecar.get("failures", []), warnings=sidecar.get("warnings", []),
                   sensor_names=meta.get("sensor_names", []))
