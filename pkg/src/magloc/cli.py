"""``magloc`` command-line interface.

Every subcommand writes into ``--out`` (a directory) and stamps each output
file with the run's config hash and seed. Settings resolve in three layers:
built-in defaults, then command-line flags, then ``--config`` (a YAML/JSON
mapping whose keys are the long flag names), which wins.

Exit codes: 0 success, 1 computational failure, 2 configuration or input
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .calibration import CalibrationSet, factory_calibration, local_recalibration
from .errors import DomainError, MaglocError, SchemaError
from .evaluation import (
    MEDIAN_COLUMNS,
    ErrorMapRecord,
    export_error_map,
    export_estimates,
    read_estimates,
)
from .fingerprint import DEFAULT_LAMBDA, KINDS, FingerprintModel, build_map, predict
from .localization import estimate_position
from .records import config_hash, read_dataset, write_dataset, write_table
from .scenario import load_scenario, read_config

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2

DEFAULTS = {
    "scenario": None,
    "seed": None,
    "out": ".",
    "method": "all",
    "train_frac": 0.3,
    "recal_frac": 0.1,
    "lambda": None,
    "workers": 1,
    "kind": None,
    "fusion": "field",
    "dataset": None,
    "calibration": None,
    "model": None,
    "estimates": None,
}
# Settings that do not change any output byte stay out of the hash.
_UNHASHED = ("out", "workers")


class InputError(MaglocError):
    """Bad command-line or config-file input."""


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def _lambda_arg(text: str):
    if text == "cv":
        return "cv"
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a number or 'cv', got {text!r}") from exc
    if value < 0:
        raise argparse.ArgumentTypeError("lambda must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magloc", description="Magneto-inductive localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run-config file; its values override flags")
    common.add_argument("--scenario", help="bundled scenario name or scenario file path")
    common.add_argument("--seed", type=int, help="RNG seed (default: the scenario's seed)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--workers", type=int, help="simulation worker processes")
    common.add_argument("--dataset", help="dataset file (JSON lines)")

    sub.add_parser("simulate", parents=[common], help="simulate a measurement dataset")

    p = sub.add_parser("calibrate", parents=[common],
                       help="factory calibration, or local recalibration with --dataset")
    p.add_argument("--recal-frac", type=float, dest="recal_frac")

    p = sub.add_parser("localize", parents=[common], help="estimate positions for a dataset")
    p.add_argument("--method", choices=("model", "recalibrated", "fingerprint"))
    p.add_argument("--calibration", help="calibration file (JSON)")
    p.add_argument("--model", help="fingerprint model file (JSON)")
    p.add_argument("--recal-frac", type=float, dest="recal_frac")
    p.add_argument("--fusion", choices=("field", "axis"))

    p = sub.add_parser("fingerprint", parents=[common], help="train a fingerprint map")
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--kind", choices=(*KINDS, "auto"))
    p.add_argument("--lambda", type=_lambda_arg, dest="lambda")

    p = sub.add_parser("evaluate", parents=[common], help="error statistics for an estimates file")
    p.add_argument("--estimates", help="estimates file written by 'localize'")

    p = sub.add_parser("pipeline", parents=[common], help="compare all methods on one dataset")
    p.add_argument("--method", choices=("all", "model", "recalibrated", "fingerprint"))
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--recal-frac", type=float, dest="recal_frac")
    p.add_argument("--lambda", type=_lambda_arg, dest="lambda")
    p.add_argument("--kind", choices=(*KINDS, "auto"))
    p.add_argument("--fusion", choices=("field", "axis"))
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, flags and the optional config file, in that order."""
    cfg = dict(DEFAULTS)
    cfg.update({k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None})
    if args.config:
        data = read_config(args.config) or {}
        if not isinstance(data, dict):
            raise SchemaError(f"{args.config}: top level must be a mapping")
        for key, value in data.items():
            name = str(key).replace("-", "_")
            if name not in DEFAULTS:
                raise SchemaError(f"{args.config}: unknown setting '{key}'")
            cfg[name] = value
    lam = cfg["lambda"]
    if lam is not None and lam != "cv":
        try:
            cfg["lambda"] = _lambda_arg(str(lam))
        except argparse.ArgumentTypeError as exc:
            raise SchemaError(f"lambda: {exc}") from exc
    for key in ("train_frac", "recal_frac"):
        if not 0 < float(cfg[key]) <= 1:
            raise InputError(f"{key} must be in (0, 1], got {cfg[key]}")
        cfg[key] = float(cfg[key])
    if int(cfg["workers"]) < 1:
        raise InputError("workers must be >= 1")
    return cfg


class Run:
    """Resolved settings plus lazily loaded inputs for one command."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self._scenario = None
        self._dataset = None
        self.out = Path(cfg["out"])

    @property
    def scenario(self):
        if self._scenario is None:
            if not self.cfg["scenario"]:
                raise InputError(f"'{self.command}' needs --scenario")
            self._scenario = load_scenario(self.cfg["scenario"])
        return self._scenario

    @property
    def has_scenario(self) -> bool:
        return bool(self.cfg["scenario"])

    @property
    def seed(self) -> int:
        if self.cfg["seed"] is not None:
            return int(self.cfg["seed"])
        if self.has_scenario:
            return self.scenario.seed
        if self._dataset is not None or self.cfg["dataset"]:
            return self.dataset.seed
        raise InputError("no seed given and no scenario or dataset to take one from")

    @property
    def dataset(self):
        if self._dataset is None:
            path = self.cfg["dataset"]
            if path:
                if not Path(path).exists():
                    raise FileNotFoundError(f"dataset file not found: {path}")
                self._dataset = read_dataset(path)
            else:
                from .pipeline import simulate

                self._dataset = simulate(self.scenario, self.seed, int(self.cfg["workers"]))
        return self._dataset

    @property
    def meta(self) -> dict:
        settings = {k: v for k, v in self.cfg.items() if k not in _UNHASHED}
        if self.has_scenario:
            settings["scenario"] = self.scenario.raw
        return {"command": self.command, "config_hash": config_hash(settings), "seed": self.seed}

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _transmitters(run: Run):
    return run.scenario.env.transmitters if run.has_scenario else None


def cmd_simulate(run: Run) -> None:
    with _Stage("simulate"):
        ds = run.dataset
    path = run.path("dataset.jsonl")
    with _Stage("write"):
        write_dataset(ds, path, run.meta)
    print(f"simulated {len(ds)} cycles (scenario={ds.scenario_id}, seed={run.seed}) -> {path}")


def _calibration_for(run: Run, method: str) -> CalibrationSet:
    if run.cfg["calibration"]:
        path = run.cfg["calibration"]
        if not Path(path).exists():
            raise FileNotFoundError(f"calibration file not found: {path}")
        return CalibrationSet.load(path)
    if method == "recalibrated":
        _require_truth(run.dataset, "local recalibration")
        return local_recalibration(run.dataset, run.cfg["recal_frac"], run.seed)
    if not run.has_scenario:
        raise InputError("factory calibration needs --scenario (or pass --calibration)")
    sc = run.scenario
    opts = sc.calibration
    return factory_calibration(sc.env, run.seed, int(opts.get("n_per_transmitter", 200)),
                               tuple(opts.get("distance_range", (0.5, 8.0))), sc.receiver)


def _require_truth(ds, what: str) -> None:
    if not ds.has_truth:
        raise InputError(f"{what} requires ground-truth positions in the dataset")


def cmd_calibrate(run: Run) -> None:
    method = "recalibrated" if run.cfg["dataset"] else "model"
    with _Stage("calibrate"):
        cals = _calibration_for(run, method)
    path = run.path("calibration.json")
    cals.save(path, run.meta)
    kind = "local recalibration" if method == "recalibrated" else "factory calibration"
    print(f"{kind}: {len(cals)} axis calibrations -> {path}")


def cmd_localize(run: Run) -> None:
    method = run.cfg["method"] if run.cfg["method"] != "all" else "model"
    ds = run.dataset
    rows = []
    with _Stage("localize"):
        if method == "fingerprint":
            if not run.cfg["model"]:
                raise InputError("--method fingerprint needs --model")
            if not Path(run.cfg["model"]).exists():
                raise FileNotFoundError(f"model file not found: {run.cfg['model']}")
            model = FingerprintModel.load(run.cfg["model"])
            for c in ds.cycles:
                rows.append((c.index, c.true_position, predict(model, c).position, 0.0, method))
        else:
            if ds.anchors is None:
                raise SchemaError("dataset has no transmitter anchors")
            cals = _calibration_for(run, method)
            failed = 0
            for c in ds.cycles:
                try:
                    e = estimate_position(c, cals, ds.anchors, ds.floor, ds.planar_height,
                                          _transmitters(run), method, run.cfg["fusion"])
                except MaglocError:
                    failed += 1
                    continue
                rows.append((c.index, c.true_position, e.position, e.residual, method))
            if failed:
                print(f"warning: {failed} cycles had fewer than 3 usable transmitters", file=sys.stderr)
    path = run.path("estimates.csv")
    export_estimates(rows, path, run.meta)
    msg = f"{len(rows)} estimates ({method}) -> {path}"
    errs = [np.linalg.norm(e - t) for _, t, e, _, _ in rows if t is not None]
    if errs:
        msg += f"; median error {np.median(errs):.3f} m"
    print(msg)


def cmd_fingerprint(run: Run) -> None:
    ds = run.dataset
    _require_truth(ds, "fingerprint training")
    opts = run.scenario.fingerprint if run.has_scenario else {}
    kind = run.cfg["kind"] or opts.get("kind", "auto")
    lam = run.cfg["lambda"] if run.cfg["lambda"] is not None else opts.get("lambda", DEFAULT_LAMBDA)
    with _Stage("fingerprint"):
        model, median = build_map(ds, run.cfg["train_frac"], kind, run.seed, lam)
    model.meta.update(run.meta)
    path = run.path("model.json")
    model.save(path)
    print(f"{model.kind} model (lambda={model.lam:g}, n_train={model.meta['n_train']}) -> {path}; "
          f"held-out median error {median:.3f} m")


def cmd_evaluate(run: Run) -> None:
    if not run.cfg["estimates"]:
        raise InputError("'evaluate' needs --estimates")
    path = run.cfg["estimates"]
    if not Path(path).exists():
        raise FileNotFoundError(f"estimates file not found: {path}")
    meta_in, rows = read_estimates(path)
    if run.cfg["seed"] is None and "seed" in meta_in:
        run.cfg["seed"] = int(meta_in["seed"])
    rows = [r for r in rows if r[1] is not None]
    if not rows:
        raise InputError(f"{path}: no estimates with ground truth")
    by_method: dict = {}
    records = []
    for _, truth, est, _, method in rows:
        err = float(np.linalg.norm(est - truth))
        by_method.setdefault(method, []).append(err)
        records.append(ErrorMapRecord(tuple(truth), err, method))
    meta = run.meta
    medians = [(m, len(v), float(np.median(v))) for m, v in sorted(by_method.items())]
    write_table(run.path("medians.csv"), MEDIAN_COLUMNS, medians, meta)
    export_error_map(records, run.path("error_map.csv"), meta)
    for m, n, med in medians:
        print(f"{m:<14} n={n:<5} median={med:.3f} m")


def cmd_pipeline(run: Run) -> None:
    from .pipeline import METHODS, run_pipeline, write_reports

    methods = METHODS if run.cfg["method"] == "all" else (run.cfg["method"],)
    sc = run.scenario
    with _Stage("simulate"):
        ds = run.dataset
    if any(m in methods for m in ("recalibrated", "fingerprint")):
        _require_truth(ds, "recalibration and fingerprint training")
    meta = run.meta
    if not run.cfg["dataset"]:
        write_dataset(ds, run.path("dataset.jsonl"), meta)
    with _Stage("pipeline"):
        result = run_pipeline(sc, ds, run.seed, methods, run.cfg["recal_frac"], run.cfg["train_frac"],
                              run.cfg["kind"], run.cfg["lambda"], run.cfg["fusion"])
    with _Stage("report"):
        write_reports(result, ds, run.out, meta)
    for m in METHODS:
        if m in result.results:
            r = result.results[m]
            print(f"{m:<14} n={len(r.estimates):<5} median={r.median:.3f} m")
    print(f"reports -> {run.out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "localize": cmd_localize,
    "fingerprint": cmd_fingerprint,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}

_INPUT_ERRORS = (InputError, SchemaError, DomainError, FileNotFoundError, IsADirectoryError,
                 PermissionError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = Run(args.command, resolve(args))
        COMMANDS[args.command](run)
    except StageError as exc:
        code = EXIT_INPUT if isinstance(exc.cause, _INPUT_ERRORS) else EXIT_FAILURE
        print(f"magloc {args.command}: error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return code
    except _INPUT_ERRORS as exc:
        print(f"magloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MaglocError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"magloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
