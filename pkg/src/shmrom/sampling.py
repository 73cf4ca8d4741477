"""Parameter sampling: Latin hypercube over the continuous pdfs, inverse-CDF draws
for the damage class, and the snapshot collection plan."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import ParamPoint

# continuous dimension names understood by ParamPoint
AMPLITUDE, FREQUENCY, DELTA = "amplitude", "frequency", "delta"


@dataclass
class ParamSpace:
    """Uniform pdf bounds per continuous parameter plus the damage-class pdf.

    ``fixed`` pins a parameter to a constant (e.g. a fixed damage level); a
    pinned parameter does not take part in the hypercube.
    """

    bounds: dict = field(default_factory=lambda: {AMPLITUDE: (10e3, 50e3), FREQUENCY: (50.0, 95.0),
                                                 DELTA: (0.02, 0.25)})
    damage_pdf: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = {k: (float(v[0]), float(v[1])) for k, v in self.bounds.items()}
        for name, (lo, hi) in self.bounds.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bounds for {name}: need finite lo < hi")
        p = np.asarray(self.damage_pdf, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("damage_pdf must be a non-negative probability vector summing to 1")
        self.damage_pdf = tuple(float(x) for x in p)
        overlap = set(self.bounds) & set(self.fixed)
        if overlap:
            raise ValueError(f"parameters both sampled and fixed: {sorted(overlap)}")
        missing = {AMPLITUDE, FREQUENCY, DELTA} - set(self.bounds) - set(self.fixed)
        if missing:
            raise ValueError(f"parameters neither sampled nor fixed: {sorted(missing)}")

    @property
    def n_classes(self) -> int:
        return len(self.damage_pdf)

    @property
    def names(self) -> list[str]:
        return list(self.bounds)


def lhs_unit(n_dims: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube in [0, 1)^n_dims: one point per stratum and dimension."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if n_dims < 1:
        raise ValueError("empty parameter space")
    u = np.empty((count, n_dims))
    for d in range(n_dims):
        u[:, d] = (rng.permutation(count) + rng.random(count)) / count
    return u


def lhs(space: ParamSpace, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` hypercube samples scaled to ``space.bounds`` (columns in ``space.names`` order)."""
    lo = np.array([b[0] for b in space.bounds.values()])
    hi = np.array([b[1] for b in space.bounds.values()])
    return lo + (hi - lo) * lhs_unit(len(lo), count, rng)


def sample_damage(pdf, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) of the damage class."""
    cdf = np.cumsum(np.asarray(pdf, dtype=np.float64))
    cdf /= cdf[-1]
    u = rng.random(size)
    g = np.searchsorted(cdf, u, side="right")
    g = np.minimum(g, len(cdf) - 1)
    return int(g) if size is None else g.astype(np.int64)


def _to_points(space, values, classes):
    names = space.names
    points = []
    for row, g in zip(values, classes):
        kw = dict(space.fixed)
        kw.update({n: float(v) for n, v in zip(names, row)})
        delta = kw[DELTA] if g != 0 else 0.0
        points.append(ParamPoint(g=int(g), amplitude=kw[AMPLITUDE], frequency=kw[FREQUENCY], delta=delta))
    return points


def sample_points(space: ParamSpace, count: int, rng: np.random.Generator, classes=None) -> list[ParamPoint]:
    """Hypercube over the continuous parameters; damage class drawn independently.

    The damage level is sampled for every point but zeroed when ``g == 0``.
    """
    if space.bounds:
        values = lhs(space, count, rng)
    else:
        values = np.zeros((count, 0))
    if classes is None:
        classes = sample_damage(space.damage_pdf, rng, size=count)
    return _to_points(space, values, classes)


@dataclass
class SnapshotPlan:
    points: list  # ParamPoint per parameter sample, tau = 1..Y
    time_indices: np.ndarray  # 0-based recording columns, length X

    @property
    def n_snapshots(self) -> int:
        return len(self.points) * len(self.time_indices)


def snapshot_time_indices(X: int, L: int, window_steps: int | None = None) -> np.ndarray:
    """``X`` uniformly spaced recording columns within the first ``window_steps`` samples."""
    window = L if window_steps is None else int(window_steps)
    if not 1 <= window <= L:
        raise ValueError(f"snapshot window of {window} samples must lie in 1..L={L}")
    if X > L:
        raise ValueError(f"X={X} snapshots per sample exceed the L={L} recorded instants")
    if X > window:
        raise ValueError(f"X={X} snapshots do not fit into a window of {window} samples")
    if X < 1:
        raise ValueError("X must be >= 1")
    return (np.arange(1, X + 1) * window) // X - 1


def snapshot_schedule(space: ParamSpace, Y: int, X: int, L: int, rng: np.random.Generator,
                      window_steps: int | None = None) -> SnapshotPlan:
    """Parameter samples and time columns for snapshot collection.

    The first ``G + 1`` samples cover every damage class once (in a random
    order); the remaining classes follow the damage pdf.
    """
    G1 = space.n_classes
    if Y < G1:
        raise ValueError(f"Y={Y} must be >= 1 + G = {G1} so that every damage class is sampled")
    idx = snapshot_time_indices(X, L, window_steps)
    cover = rng.permutation(G1)
    rest = sample_damage(space.damage_pdf, rng, size=Y - G1)
    classes = np.concatenate([cover, rest]).astype(np.int64)
    return SnapshotPlan(points=sample_points(space, Y, rng, classes=classes), time_indices=idx)


def write_samples_csv(points, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "g", "amplitude_Pa", "frequency_Hz", "delta"])
        for i, p in enumerate(points):
            w.writerow([i, p.g, repr(p.amplitude), repr(p.frequency), repr(p.delta)])
