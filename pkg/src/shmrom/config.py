"""Run configuration: one YAML file per case study, validated into dataclasses.

Keys carry their units as suffixes (``_m``, ``_Pa``, ``_Hz``, ``_s``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fem import Material, PortalGeometry
from .fcn import TrainConfig
from .integrator import GenAlphaParams
from .io import config_hash
from .sampling import AMPLITUDE, DELTA, FREQUENCY, ParamSpace

STAGES = ("snapshots", "dataset", "test", "train")


class ConfigError(ValueError):
    """Invalid configuration; ``keys`` lists the offending entries."""

    def __init__(self, keys, detail=""):
        self.keys = list(keys)
        super().__init__(f"invalid configuration keys: {', '.join(self.keys)}" + (f" ({detail})" if detail else ""))


DEFAULTS = {
    "name": "portal",
    "geometry": {"span_m": 5.4, "height_m": 5.5, "column_width_m": 0.24, "deck_depth_m": 0.48,
                 "thickness_m": 0.1, "damage_box_height_m": 0.5, "damage_box_scale": 1.0},
    "mesh": {"element_size_m": 0.085},
    "material": {"young_modulus_Pa": 30e9, "poisson_ratio": 0.2, "density_kg_m3": 2500.0},
    "time": {"dt_s": 5e-3, "n_steps": 200, "rho_inf": 1.0},
    "parameters": {"amplitude_Pa": [10e3, 50e3], "frequency_Hz": [50.0, 95.0], "delta": [0.02, 0.25],
                   "damage_pdf": [0.2, 0.2, 0.2, 0.2, 0.2]},
    "snapshots": {"Y": 200, "X": 100, "window_s": 0.5},
    "rom": {"eps_tol": 1e-4},
    "sensors": {"quantity": "acceleration", "points": []},
    "dataset": {"count": 2000, "test_count": 200, "snr": None, "train_fraction": 0.75},
    "fcn": {"filters": [16, 32, 16], "kernels": [8, 5, 3], "batch_size": 16, "epochs": 100,
            "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps_adam": 1e-8,
            "bn_momentum": 0.99, "bn_eps": 1e-3},
    "seeds": {"snapshots": 1, "dataset": 2, "test": 3, "train": 4},
    # geometry overrides for the full-order model that produces test instances
    "test_geometry": {},
}


def _merge(base: dict, over: dict, prefix="") -> dict:
    out = copy.deepcopy(base)
    unknown = []
    for k, v in (over or {}).items():
        if k not in base:
            unknown.append(prefix + k)
        elif k == "test_geometry" and not prefix:
            if not isinstance(v, dict) or set(v) - set(DEFAULTS["geometry"]):
                unknown.append(k)
            else:
                out[k] = dict(v)
        elif isinstance(base[k], dict) and k != "damage_pdf":
            if not isinstance(v, dict):
                unknown.append(prefix + k)
                continue
            try:
                out[k] = _merge(base[k], v, prefix + k + ".")
            except ConfigError as exc:
                unknown.extend(exc.keys)
        else:
            out[k] = v
    if unknown:
        raise ConfigError(unknown, "unknown or malformed")
    return out


def _pair(d, key, errors):
    v = d.get(key)
    if isinstance(v, (int, float)):
        return None, float(v)
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        errors.append(key)
        return None, None
    return (float(v[0]), float(v[1])), None


@dataclass
class RunConfig:
    raw: dict
    geometry: PortalGeometry
    element_size: float
    material: Material
    dt: float
    n_steps: int
    integrator: GenAlphaParams
    space: ParamSpace
    Y: int
    X: int
    window_steps: int
    eps_tol: float
    sensor_quantity: str
    sensor_points: list
    count: int
    test_count: int
    snr: float | None
    train_fraction: float
    train: TrainConfig
    seeds: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.raw["name"]

    def stage_hash(self, *sections) -> str:
        """Hash of the config sections a stage depends on."""
        return config_hash({s: self.raw[s] for s in sections})

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def from_dict(data: dict) -> RunConfig:
    raw = _merge(DEFAULTS, data or {})
    errors = []

    def section(name, build):
        try:
            return build(raw[name])
        except (TypeError, ValueError, KeyError) as exc:
            errors.append(f"{name} ({exc})")
            return None

    geo = section("geometry", lambda g: PortalGeometry(
        span=float(g["span_m"]), height=float(g["height_m"]), column_width=float(g["column_width_m"]),
        deck_depth=float(g["deck_depth_m"]), thickness=float(g["thickness_m"]),
        damage_box_height=float(g["damage_box_height_m"]), damage_box_scale=float(g["damage_box_scale"])))
    h = raw["mesh"]["element_size_m"]
    if not (isinstance(h, (int, float)) and h > 0):
        errors.append("mesh.element_size_m")
    mat = section("material", lambda m: Material(float(m["young_modulus_Pa"]), float(m["poisson_ratio"]),
                                                 float(m["density_kg_m3"])))
    t = raw["time"]
    if not (isinstance(t["dt_s"], (int, float)) and t["dt_s"] > 0):
        errors.append("time.dt_s")
    if not (isinstance(t["n_steps"], int) and t["n_steps"] >= 1):
        errors.append("time.n_steps")
    integ = section("time", lambda t: GenAlphaParams(float(t["rho_inf"])))

    p = raw["parameters"]
    bounds, fixed = {}, {}
    for key, name in (("amplitude_Pa", AMPLITUDE), ("frequency_Hz", FREQUENCY), ("delta", DELTA)):
        pair, const = _pair(p, key, errors)
        if pair is not None:
            bounds[name] = pair
        elif const is not None:
            fixed[name] = const
    space = None
    if not any(e in ("amplitude_Pa", "frequency_Hz", "delta") for e in errors):
        try:
            space = ParamSpace(bounds=bounds, damage_pdf=tuple(p["damage_pdf"]), fixed=fixed)
        except (TypeError, ValueError) as exc:
            errors.append(f"parameters ({exc})")
    d = fixed.get(DELTA)
    if d is not None and not 0 <= d < 1:
        errors.append("parameters.delta")

    s = raw["snapshots"]
    window_steps = None
    try:
        window_steps = int(round(float(s["window_s"]) / float(t["dt_s"])))
        if not (1 <= int(s["X"]) <= window_steps <= int(t["n_steps"])):
            errors.append("snapshots.X/window_s")
        if space is not None and int(s["Y"]) < space.n_classes:
            errors.append("snapshots.Y")
    except (TypeError, ValueError, ZeroDivisionError):
        errors.append("snapshots")
    eps = raw["rom"]["eps_tol"]
    if not (isinstance(eps, (int, float)) and 0 < eps < 1):
        errors.append("rom.eps_tol")
    sens = raw["sensors"]
    if sens["quantity"] not in ("displacement", "acceleration"):
        errors.append("sensors.quantity")
    if not sens["points"]:
        errors.append("sensors.points")
    for i, pt in enumerate(sens["points"] or []):
        if not (isinstance(pt, dict) and {"x_m", "y_m", "direction"} <= set(pt)):
            errors.append(f"sensors.points[{i}]")
    ds = raw["dataset"]
    snr = ds["snr"]
    if snr is not None and not (isinstance(snr, (int, float)) and snr > 0):
        errors.append("dataset.snr")
    if not (0 < float(ds["train_fraction"]) < 1):
        errors.append("dataset.train_fraction")
    for k in ("count", "test_count"):
        if not (isinstance(ds[k], int) and ds[k] >= 1):
            errors.append(f"dataset.{k}")
    seeds = raw["seeds"]
    for stage in STAGES:
        if not isinstance(seeds.get(stage), int):
            errors.append(f"seeds.{stage}")
    tc = section("fcn", lambda f: TrainConfig(seed=int(seeds.get("train", 0) or 0), **f))
    if errors:
        raise ConfigError(errors)
    return RunConfig(raw=raw, geometry=geo, element_size=float(h), material=mat, dt=float(t["dt_s"]),
                     n_steps=int(t["n_steps"]), integrator=integ, space=space, Y=int(s["Y"]), X=int(s["X"]),
                     window_steps=window_steps, eps_tol=float(eps), sensor_quantity=sens["quantity"],
                     sensor_points=list(sens["points"]), count=int(ds["count"]), test_count=int(ds["test_count"]),
                     snr=None if snr is None else float(snr), train_fraction=float(ds["train_fraction"]),
                     train=tc, seeds=dict(seeds))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([str(path)], "config file not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([str(path)], f"YAML parse error: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError([str(path)], "top level must be a mapping")
    return from_dict(data or {})


def override(cfg: RunConfig, changes: dict) -> RunConfig:
    """New config with nested ``{"section": {"key": value}}`` changes applied."""
    return from_dict(_merge(cfg.raw, changes))
