"""Stage orchestration over a workspace directory.

Each stage reads the previous stage's container, checks that it was built
from the same configuration, and writes its own container.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from .config import RunConfig, override
from .evaluation import ConfusionMatrix, Table, curves_table, evaluate
from .fcn import FcnModel, TrainHistory, model_arrays, model_from_arrays, train
from .fem import FomArrays, Mesh2D, ParamPoint, PortalGeometry, build_fom, generate_portal_mesh
from .io import config_hash, read_container, write_container
from .reduction import PodBasis, RomArrays, collect_snapshots, incremental_pod, project
from .sampling import snapshot_schedule, write_samples_csv
from .solvers import FomSolver, RomSolver

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


class StaleArtifact(ValueError):
    pass


# ---------------------------------------------------------------------------
# Mesh and full-order arrays
# ---------------------------------------------------------------------------

def mesh_from_config(cfg: RunConfig, geometry: PortalGeometry | None = None) -> Mesh2D:
    return generate_portal_mesh(geometry or cfg.geometry, cfg.element_size)


def mesh_arrays(mesh: Mesh2D) -> dict:
    return {"nodes": mesh.nodes, "elements": mesh.elements, "subdomain": mesh.subdomain,
            "fixed_dofs": mesh.fixed_dofs, "loaded_edges": mesh.loaded_edges}


def mesh_from_container(c) -> Mesh2D:
    m = c.meta
    return Mesh2D(nodes=c["nodes"], elements=c["elements"], subdomain=c["subdomain"], fixed_dofs=c["fixed_dofs"],
                  thickness=float(m["thickness_m"]), n_subdomains=int(m["n_subdomains"]),
                  loaded_edges=c["loaded_edges"], load_direction=tuple(m["load_direction"]))


def fom_arrays(fom: FomArrays) -> dict:
    arrays = {"mass": fom.mass, "load_basis": fom.load_basis, "free_dofs": fom.free_dofs}
    arrays.update({f"stiffness_{p}": K for p, K in enumerate(fom.stiffness)})
    return arrays


def fom_from_container(c) -> FomArrays:
    n = int(c.meta["n_components"])
    return FomArrays(mass=c["mass"], stiffness=[c[f"stiffness_{p}"] for p in range(n)],
                     load_basis=c["load_basis"], free_dofs=c["free_dofs"])


def rom_arrays(basis: PodBasis, rom: RomArrays) -> dict:
    arrays = {"basis": basis.basis, "singular_values": basis.singular_values, "mass": rom.mass,
              "load_basis": rom.load_basis}
    arrays.update({f"stiffness_{p}": K for p, K in enumerate(rom.stiffness)})
    return arrays


def rom_from_container(c) -> tuple[PodBasis, RomArrays]:
    n = int(c.meta["n_components"])
    basis = PodBasis(basis=c["basis"], singular_values=c["singular_values"], error=float(c.meta["error"]),
                     tol=float(c.meta["eps_tol"]))
    rom = RomArrays(mass=c["mass"], stiffness=[c[f"stiffness_{p}"] for p in range(n)],
                    load_basis=c["load_basis"], basis=c["basis"])
    return basis, rom


@dataclass
class RomBuild:
    basis: PodBasis
    rom: RomArrays
    plan: object
    sizes: list  # basis size after each update
    seconds: float
    eps_tol: float
    Y: int
    X: int
    seed: int


def build_rom(cfg: RunConfig, fom: FomArrays, eps_tol=None, Y=None, X=None, seed=None) -> RomBuild:
    """Snapshot collection and incremental POD, then Galerkin projection."""
    eps_tol = cfg.eps_tol if eps_tol is None else eps_tol
    Y = cfg.Y if Y is None else Y
    X = cfg.X if X is None else X
    seed = cfg.seeds["snapshots"] if seed is None else seed
    plan = snapshot_schedule(cfg.space, Y, X, cfg.n_steps, np.random.default_rng(seed), cfg.window_steps)
    solver = FomSolver(fom, cfg.dt, cfg.n_steps, cfg.integrator)
    sizes = []
    t0 = time.perf_counter()
    basis = incremental_pod(collect_snapshots(solver.displacements, plan.points, plan.time_indices), eps_tol,
                            on_update=lambda tau, b: sizes.append(b.size))
    rom = project(fom, basis)
    return RomBuild(basis, rom, plan, sizes, time.perf_counter() - t0, eps_tol, Y, X, seed)


def sensor_layout(cfg: RunConfig, mesh: Mesh2D, fom: FomArrays) -> dsmod.SensorLayout:
    return dsmod.SensorLayout.from_points(mesh, fom, cfg.sensor_points, cfg.sensor_quantity)


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model: FcnModel, history: TrainHistory, meta: dict) -> Path:
    arrays = model_arrays(model)
    arrays.update({f"history/{k}": v for k, v in history.to_arrays().items()})
    meta = dict(meta, train_config=model.config.to_dict(), n_inputs=model.n_inputs, n_classes=model.n_classes,
                best_epoch=history.best_epoch)
    return write_container(path, "fcn_model", arrays, meta)


def load_model(path) -> tuple[FcnModel, dict]:
    c = read_container(path, kind="fcn_model")
    return model_from_arrays(c.arrays, c.meta), c.meta


# ---------------------------------------------------------------------------
# Workspace
# ---------------------------------------------------------------------------

@dataclass
class Workspace:
    root: Path
    cfg: RunConfig
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)

    def path(self, name) -> Path:
        return self.root / name

    def _require(self, name) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p}; run the stage that produces it first")
        return p

    def _check(self, c, expected: str, what: str):
        if c.meta.get("stage_hash") != expected:
            raise StaleArtifact(f"{what} in {self.root} was built from a different configuration; rerun that stage")

    # hashes of the config sections each stage depends on
    @property
    def mesh_hash(self) -> str:
        return self.cfg.stage_hash("geometry", "mesh")

    @property
    def fom_hash(self) -> str:
        return self.cfg.stage_hash("geometry", "mesh", "material")

    # -- mesh ---------------------------------------------------------------
    def mesh_gen(self) -> Mesh2D:
        mesh = mesh_from_config(self.cfg)
        write_container(self.path("mesh.shm"), "mesh", mesh_arrays(mesh),
                        {"stage_hash": self.mesh_hash, "thickness_m": mesh.thickness,
                         "n_subdomains": mesh.n_subdomains, "load_direction": list(mesh.load_direction),
                         "n_elements": mesh.n_elements, "n_dofs": mesh.n_dofs})
        self._cache["mesh"] = mesh
        return mesh

    def mesh(self) -> Mesh2D:
        if "mesh" not in self._cache:
            c = read_container(self._require("mesh.shm"), kind="mesh")
            self._check(c, self.mesh_hash, "mesh.shm")
            self._cache["mesh"] = mesh_from_container(c)
        return self._cache["mesh"]

    # -- fom ----------------------------------------------------------------
    def fom_build(self) -> FomArrays:
        fom = build_fom(self.mesh(), self.cfg.material)
        write_container(self.path("fom.shm"), "fom", fom_arrays(fom),
                        {"stage_hash": self.fom_hash, "n_components": len(fom.stiffness), "n_dofs": fom.n_dofs})
        self._cache["fom"] = fom
        return fom

    def fom(self) -> FomArrays:
        if "fom" not in self._cache:
            p = self.path("fom.shm")
            if not p.exists():
                return self.fom_build()
            c = read_container(p, kind="fom")
            self._check(c, self.fom_hash, "fom.shm")
            self._cache["fom"] = fom_from_container(c)
        return self._cache["fom"]

    def layout(self) -> dsmod.SensorLayout:
        return sensor_layout(self.cfg, self.mesh(), self.fom())

    def fom_solver(self) -> FomSolver:
        return FomSolver(self.fom(), self.cfg.dt, self.cfg.n_steps, self.cfg.integrator)

    def fom_solve(self, p: ParamPoint, full: bool = False):
        solver = self.fom_solver()
        layout = self.layout()
        hist = solver.solve(p) if full else solver.sensor_history(p, layout.rows)
        rows = None if full else layout.rows
        U = dsmod.extract_sensors(hist, layout, rows_recorded=rows)
        arrays = {"U": U, "displacement": hist.displacement, "acceleration": hist.acceleration}
        write_container(self.path("fom_solution.shm"), "fom_solution", arrays,
                        {"params": p.as_dict(), "dt_s": self.cfg.dt, "full": full,
                         "rows": None if full else layout.rows.tolist(), "sensor_names": layout.names})
        return U

    # -- rom ----------------------------------------------------------------
    def rom_hash(self, eps_tol, Y, X, seed) -> str:
        return config_hash({"fom": self.fom_hash, "time": self.cfg.raw["time"],
                            "parameters": self.cfg.raw["parameters"],
                            "window_s": self.cfg.raw["snapshots"]["window_s"],
                            "eps_tol": eps_tol, "Y": Y, "X": X, "seed": seed})

    def rom_build(self, eps_tol=None, Y=None, X=None, seed=None) -> RomBuild:
        b = build_rom(self.cfg, self.fom(), eps_tol, Y, X, seed)
        write_samples_csv(b.plan.points, self.path("snapshot_samples.csv"))
        write_container(self.path("rom.shm"), "rom", rom_arrays(b.basis, b.rom),
                        {"rom_hash": self.rom_hash(b.eps_tol, b.Y, b.X, b.seed), "fom_hash": self.fom_hash,
                         "eps_tol": b.eps_tol, "error": b.basis.error, "W": b.basis.size, "Y": b.Y, "X": b.X,
                         "seed": b.seed, "sizes": b.sizes, "n_components": len(b.rom.stiffness),
                         "svd_path": b.basis.svd_path})
        self._cache["rom"] = (b.basis, b.rom, self.rom_hash(b.eps_tol, b.Y, b.X, b.seed))
        return b

    def rom(self) -> tuple[PodBasis, RomArrays, str]:
        if "rom" not in self._cache:
            c = read_container(self._require("rom.shm"), kind="rom")
            if c.meta.get("fom_hash") != self.fom_hash:
                raise StaleArtifact(f"rom.shm in {self.root} was built on a different FOM; rerun rom-build")
            self._cache["rom"] = (*rom_from_container(c), c.meta["rom_hash"])
        return self._cache["rom"]

    def rom_solver(self) -> RomSolver:
        return RomSolver(self.rom()[1], self.cfg.dt, self.cfg.n_steps, self.cfg.integrator)

    # -- datasets -----------------------------------------------------------
    def dataset_gen(self, out="datasets/train", count=None, model="rom", snr="config", seed=None,
                    test=False, points=None) -> dsmod.Dataset:
        cfg = self.cfg
        count = (cfg.test_count if test else cfg.count) if count is None else count
        seed = (cfg.seeds["test"] if test else cfg.seeds["dataset"]) if seed is None else seed
        snr = cfg.snr if snr == "config" else snr
        if model == "rom":
            solver, upstream = self.rom_solver(), self.rom()[2]
        elif model == "fom":
            solver, upstream = self.fom_solver(), self.fom_hash
        else:
            raise ValueError("model must be 'rom' or 'fom'")
        gen = {"count": count, "model": model, "snr": snr, "seed": seed, "test": test, "upstream": upstream,
               "sensors": cfg.raw["sensors"], "parameters": cfg.raw["parameters"], "time": cfg.raw["time"],
               "train_fraction": None if test else cfg.train_fraction}
        h = config_hash(gen)
        ds = dsmod.generate(count, cfg.space, solver, self.layout(), snr, seed,
                            None if test else cfg.train_fraction, config_hash=h, points=points)
        dsmod.save_dataset(ds, self.path(out), gen)
        return ds

    def dataset(self, name="datasets/train") -> dsmod.Dataset:
        p = self.path(name)
        if not p.is_dir():
            raise MissingArtifact(f"missing dataset {p}; run dataset-gen first")
        return dsmod.load_dataset(p)

    # -- training -----------------------------------------------------------
    def train(self, dataset="datasets/train", out="model.shm", epochs=None, seed=None,
              progress=None) -> tuple[FcnModel, TrainHistory]:
        ds = self.dataset(dataset) if isinstance(dataset, (str, Path)) else dataset
        if "train" not in ds.splits:
            raise ValueError("dataset has no training split")
        tc = self.cfg.train
        if epochs is not None or seed is not None:
            tc = type(tc)(**dict(tc.to_dict(), epochs=epochs or tc.epochs, seed=tc.seed if seed is None else seed))
        Xtr, ytr = ds.split("train")
        Xv, yv = ds.split("val") if "val" in ds.splits else (None, None)
        model, hist = train(Xtr, ytr, Xv, yv, tc, ds.n_classes, ds.mean, ds.std, progress=progress)
        save_model(self.path(out), model, hist, {"dataset_hash": ds.config_hash})
        curves_table(hist).write(self.path("reports/training_curves"))
        return model, hist

    def model(self, path="model.shm") -> FcnModel:
        p = Path(path)
        p = p if p.is_absolute() or p.exists() else self.path(path)
        if not p.exists():
            raise MissingArtifact(f"missing model checkpoint {p}; run train first")
        return load_model(p)[0]

    # -- testing ------------------------------------------------------------
    def test_solver(self, fidelity: str):
        """Solver for test instances; ``test_geometry`` overrides apply to the FOM only."""
        tg = self.cfg.raw.get("test_geometry") or {}
        if fidelity == "rom":
            return self.rom_solver(), self.layout()
        if not tg:
            return self.fom_solver(), self.layout()
        geo_raw = dict(self.cfg.raw["geometry"], **tg)
        cfg = override(self.cfg, {"geometry": geo_raw, "test_geometry": {}})
        mesh = mesh_from_config(cfg)
        fom = build_fom(mesh, cfg.material)
        return (FomSolver(fom, cfg.dt, cfg.n_steps, cfg.integrator), sensor_layout(cfg, mesh, fom))

    def test(self, model_path="model.shm", fidelity="fom", count=None, seed=None, snr="config",
             out="datasets/test") -> ConfusionMatrix:
        cfg = self.cfg
        model = self.model(model_path)
        count = cfg.test_count if count is None else count
        seed = cfg.seeds["test"] if seed is None else seed
        snr = cfg.snr if snr == "config" else snr
        solver, layout = self.test_solver(fidelity)
        gen = {"count": count, "model": fidelity, "snr": snr, "seed": seed, "test": True,
               "test_geometry": cfg.raw.get("test_geometry") or {}, "parameters": cfg.raw["parameters"]}
        ds = dsmod.generate(count, cfg.space, solver, layout, snr, seed, None, config_hash=config_hash(gen))
        dsmod.save_dataset(ds, self.path(f"{out}_{fidelity}"), gen)
        cm = evaluate(model, ds.U, ds.labels, ds.n_classes)
        title = f"test ({fidelity}, {count} instances, snr={snr})"
        self.path("reports").mkdir(parents=True, exist_ok=True)
        self.path(f"reports/confusion_{fidelity}.txt").write_text(cm.to_text(title) + "\n")
        Table(["true"] + [f"pred_{j}" for j in range(cm.counts.shape[0])],
              [[i] + row.tolist() for i, row in enumerate(cm.counts)]).write(self.path(f"reports/confusion_{fidelity}"))
        return cm


# ---------------------------------------------------------------------------
# Comparative studies
# ---------------------------------------------------------------------------

STUDIES = ("delta", "snr", "eps_tol")


def sweep(cfg: RunConfig, study: str, grid, root, count=None, epochs=None, test_count=None,
          log_fn=None) -> Table:
    """Rebuild-train-test for every grid value; a failing cell is recorded and skipped.

    ``delta`` pins the damage level for snapshots, training and test data;
    ``snr`` varies the noise of training and test data on one reduced model;
    ``eps_tol`` varies the POD tolerance.
    """
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; choose from {STUDIES}")
    root = Path(root)
    changes = {"dataset": {}}
    if count is not None:
        changes["dataset"]["count"] = count
    if test_count is not None:
        changes["dataset"]["test_count"] = test_count
    if epochs is not None:
        changes["fcn"] = {"epochs": epochs}
    base = override(cfg, changes)
    rows = []
    shared = Workspace(root / "shared", base)
    for value in grid:
        cell = {"delta": {"parameters": {"delta": float(value)}},
                "snr": {"dataset": {"snr": None if value in (None, "none") else float(value)}},
                "eps_tol": {"rom": {"eps_tol": float(value)}}}[study]
        try:
            c = override(base, cell)
            ws = Workspace(root / f"{study}_{value}", c)
            if study == "snr":
                # one reduced model for all noise levels
                if "rom" not in shared._cache:
                    shared.mesh_gen()
                    shared.rom_build()
                ws._cache.update(mesh=shared.mesh(), fom=shared.fom(), rom=shared.rom())
            else:
                ws.mesh_gen()
                ws.rom_build()
            W = ws.rom()[0].size
            ds = ws.dataset_gen()
            model, hist = ws.train()
            cm = ws.test(fidelity="fom")
            be = hist.best_epoch - 1
            rows.append([value, W, hist.epoch_accuracy[be], hist.val_accuracy[be] if hist.val_accuracy else None,
                         cm.accuracy, cm.damaged_as_undamaged, ""])
        except Exception as exc:  # recorded, sweep continues
            log.exception("sweep cell %s=%s failed", study, value)
            rows.append([value, None, None, None, None, None, f"{type(exc).__name__}: {exc}"])
        if log_fn:
            log_fn(rows[-1])
    table = Table([study, "W", "train_accuracy", "val_accuracy", "test_accuracy", "damaged_as_undamaged", "error"],
                  rows)
    table.write(root / f"sweep_{study}")
    return table
