"""Command-line entry point: ``shmrom <subcommand> --config FILE --workspace DIR``.

Exit codes: 0 success, 2 configuration or missing-artifact error, 3 numerical
failure. Numerical libraries are imported after ``--threads`` has been applied.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _floats(text):
    return [None if v.strip().lower() == "none" else float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shmrom", description="Reduced-order simulation-based damage classification.")
    p.add_argument("--config", default="configs/portal_noise_free.yaml", help="run configuration (YAML)")
    p.add_argument("--workspace", default="workspace", help="directory holding every artifact")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads; 1 is the reproducible reference mode")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh-gen", help="generate the mesh and assemble the full-order arrays")
    s.add_argument("--mesh-size", type=float, help="target element size in m (overrides the config)")
    s.add_argument("--geometry", help="YAML file with a 'geometry' mapping overriding the config")

    s = sub.add_parser("fom-solve", help="solve the full-order model for one parameter point")
    s.add_argument("--g", type=int, default=0, help="damage class")
    s.add_argument("--amplitude", type=float, default=30e3, help="load amplitude in Pa")
    s.add_argument("--frequency", type=float, default=70.0, help="load frequency in Hz")
    s.add_argument("--delta", type=float, default=0.0, help="damage level (fraction)")
    s.add_argument("--full", action="store_true", help="store every dof, not only the sensors")

    s = sub.add_parser("rom-build", help="collect snapshots, run the incremental POD and project")
    s.add_argument("--eps-tol", type=float)
    s.add_argument("--snapshots", help="Y,X")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("dataset-gen", help="generate a labelled dataset")
    s.add_argument("--count", type=int)
    s.add_argument("--model", choices=("rom", "fom"), default="rom")
    s.add_argument("--snr", default="config", help="linear power ratio, 'none', or 'config'")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="datasets/train", help="output directory inside the workspace")

    s = sub.add_parser("train", help="train the classifier")
    s.add_argument("--dataset", default="datasets/train")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="model.shm")

    s = sub.add_parser("predict", help="classify recordings with a trained model")
    s.add_argument("--model", default="model.shm")
    s.add_argument("--input", required=True, help=".npy / .csv (L x N0 or I x L x N0) or a dataset container")

    s = sub.add_parser("test", help="evaluate a model on freshly generated test instances")
    s.add_argument("--model", default="model.shm")
    s.add_argument("--fidelity", choices=("fom", "rom"), default="fom")
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--snr", default="config")

    s = sub.add_parser("sweep", help="comparative study over a grid")
    s.add_argument("--study", choices=("delta", "snr", "eps_tol"), required=True)
    s.add_argument("--grid", required=True, type=_floats, help="comma-separated values ('none' allowed for snr)")
    s.add_argument("--count", type=int)
    s.add_argument("--test-count", type=int)
    s.add_argument("--epochs", type=int)

    sub.add_parser("report", help="bundle tables and curves into reports/summary.txt")
    return p


def _snr(text):
    if text == "config":
        return "config"
    if text.lower() == "none":
        return None
    return float(text)


def _run(args) -> int:
    import numpy as np
    import yaml

    from . import pipeline
    from .config import load_config, override
    from .fcn import predict_proba
    from .fem import ParamPoint
    from .io import read_container

    cfg = load_config(args.config)
    ws = pipeline.Workspace(Path(args.workspace), cfg)
    ws.root.mkdir(parents=True, exist_ok=True)
    cmd = args.command

    if cmd == "mesh-gen":
        changes = {}
        if args.geometry:
            data = yaml.safe_load(Path(args.geometry).read_text()) or {}
            changes["geometry"] = data.get("geometry", data)
        if args.mesh_size is not None:
            changes["mesh"] = {"element_size_m": args.mesh_size}
        if changes:
            ws = pipeline.Workspace(ws.root, override(cfg, changes))
        mesh = ws.mesh_gen()
        fom = ws.fom_build()
        print(f"mesh: {mesh.n_elements} triangles, {mesh.n_nodes} nodes, {fom.n_dofs} free dofs")
    elif cmd == "fom-solve":
        p = ParamPoint(g=args.g, amplitude=args.amplitude, frequency=args.frequency, delta=args.delta)
        U = ws.fom_solve(p, full=args.full)
        rms = np.sqrt(np.mean(U ** 2, axis=0))
        print(f"solved {p.as_dict()}: {U.shape[0]} samples x {U.shape[1]} sensors, rms {np.array2string(rms, precision=4)}")
    elif cmd == "rom-build":
        Y = X = None
        if args.snapshots:
            Y, X = (int(v) for v in args.snapshots.split(","))
        b = ws.rom_build(args.eps_tol, Y, X, args.seed)
        print(f"POD basis: W={b.basis.size} at eps_tol={b.eps_tol:g} (achieved {b.basis.error:.3e}), "
              f"{b.Y * b.X} snapshots, {b.seconds:.1f} s")
    elif cmd == "dataset-gen":
        ds = ws.dataset_gen(out=args.out, count=args.count, model=args.model, snr=_snr(args.snr), seed=args.seed)
        print(f"dataset: {ds.count} instances, splits {{{', '.join(f'{k}: {len(v)}' for k, v in ds.splits.items())}}}, "
              f"class counts {ds.class_counts()}" + (f", {len(ds.failures)} failures" if ds.failures else ""))
    elif cmd == "train":
        def progress(epoch, h):
            if epoch % 10 == 0 or epoch == 1:
                va = f", val acc {h.val_accuracy[-1]:.3f}" if h.val_accuracy else ""
                logging.info("epoch %d: loss %.4f, acc %.3f%s", epoch, h.epoch_loss[-1], h.epoch_accuracy[-1], va)
        model, hist = ws.train(args.dataset, args.out, args.epochs, args.seed, progress)
        be = hist.best_epoch - 1
        va = f", val acc {hist.val_accuracy[be]:.4f}" if hist.val_accuracy else ""
        print(f"trained {len(hist.epoch_loss)} epochs; best epoch {hist.best_epoch}: "
              f"train acc {hist.epoch_accuracy[be]:.4f}{va}")
    elif cmd == "predict":
        model = ws.model(args.model)
        path = Path(args.input)
        if not path.exists():
            raise FileNotFoundError(f"missing input {path}")
        if path.suffix == ".npy":
            U = np.load(path)
        elif path.suffix == ".csv":
            U = np.loadtxt(path, delimiter=",", ndmin=2)
        else:
            U = read_container(path)["U"]
        probs = np.atleast_2d(predict_proba(model, U))
        for i, pr in enumerate(probs):
            print(json.dumps({"instance": i, "class": int(np.argmax(pr)), "probabilities": [round(float(x), 6) for x in pr]}))
    elif cmd == "test":
        cm = ws.test(args.model, args.fidelity, args.count, args.seed, _snr(args.snr))
        print(cm.to_text(f"test ({args.fidelity})"))
    elif cmd == "sweep":
        table = pipeline.sweep(cfg, args.study, args.grid, ws.root / "sweeps", args.count, args.epochs, args.test_count,
                               log_fn=lambda row: logging.info("cell: %s", row))
        print(table.to_text())
    elif cmd == "report":
        reports = sorted(p for p in ws.root.rglob("*.txt") if p.name != "summary.txt")
        if not reports:
            raise FileNotFoundError(f"no reports under {ws.root}; run test or sweep first")
        parts = [f"== {p.relative_to(ws.root)} ==\n{p.read_text()}" for p in reports]
        out = ws.path("reports/summary.txt")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(f"config: {cfg.name} ({cfg.hash[:12]})\n\n" + "\n".join(parts))
        print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    for var in _THREAD_VARS:
        os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    from .config import ConfigError
    from .fcn import TrainingError
    from .integrator import IntegrationError
    from .io import ContainerError
    from .pipeline import MissingArtifact, StaleArtifact
    from .reduction import ReductionError

    try:
        return _run(args)
    except (ConfigError, StaleArtifact, ContainerError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, TrainingError, ReductionError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:
        import numpy as np

        if isinstance(exc, np.linalg.LinAlgError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
