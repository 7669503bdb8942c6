# scripts/driver_ddm.py
"""
Command-line entry point for the driver decision toolkit.

Usage:
  python scripts/driver_ddm.py simulate --kind cutin --n-per-group 250 --out trials.csv
  python scripts/driver_ddm.py calibrate --trials trials.csv --kind cutin --config calib.json --out params.json
  python scripts/driver_ddm.py fit-risk --trials trials.csv --kind rearend --out risk.json
  python scripts/driver_ddm.py compare --config experiment.json --out report.json
  python scripts/driver_ddm.py report --report report.json --out tables/

Exit codes: 0 on success, 2 on invalid input, 3 on a numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

import pydantic

from utils.calibration import CalibrationConfig, calibrate
from utils.ddm import DDM_DT, DDM_WORKERS
from utils.errors import NumericalError, ValidationError
from utils.fixtures import load_params, parse_params, read_json
from utils.harness import ExperimentConfig, ExperimentReport, export_traces, run_experiment, synthesize_trials
from utils.kinematics import ScenarioConfig, ScenarioKind
from utils.risk import ALL_FEATURES, DEFAULT_FEATURES, MgdModel, classify_sensitivity, scenario_population_fit
from utils.trials import load_trials, write_trials

logger = logging.getLogger("driver_ddm")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _read_model(cls, path: Optional[str]):
    if not path:
        return cls()
    try:
        return cls.model_validate(read_json(path))
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid {path}: {e}") from e


def _sibling(out: str, suffix: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + suffix)


def _params(args, kind: ScenarioKind):
    if getattr(args, "params", None):
        return parse_params(read_json(args.params), args.params)
    return load_params(kind, args.fixtures)


def cmd_simulate(args) -> int:
    kind = ScenarioKind.parse(args.kind)
    scenario = _read_model(ScenarioConfig, args.config)
    p = _params(args, kind)
    behavior_model = MgdModel.from_dict(read_json(args.risk)) if args.risk else None
    seed = args.seed or 0
    trials = synthesize_trials(p, kind, args.speeds, args.n_per_group, seed, scenario,
                               behavior_model=behavior_model, workers=args.workers, dt=args.dt)
    out = args.out or f"{kind.value}_trials.csv"
    n = write_trials(trials, out)
    logger.info("wrote %d trials to %s", n, out)
    if args.traces:
        path = _sibling(out, ".traces.csv")
        export_traces(p, kind, path, args.speeds, args.traces, seed, args.n_per_group,
                      scenario_config=scenario, dt=args.dt)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    kind = ScenarioKind.parse(args.kind)
    config = _read_model(CalibrationConfig, args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    if updates:
        config = config.model_copy(update=updates)
    trials = load_trials(args.trials)
    result = calibrate(trials, kind, config=config, base=load_params(kind, args.fixtures))
    out = args.out or f"{kind.value}_calibrated.json"
    result.write_json(out)
    result.write_trace_csv(_sibling(out, ".trace.csv"))
    logger.info("BIC %.3f over %d trials -> %s", result.bic, result.n, out)
    return EXIT_OK


def cmd_fit_risk(args) -> int:
    kind = ScenarioKind.parse(args.kind)
    features = tuple(args.features)
    unknown = [f for f in features if f not in ALL_FEATURES]
    if unknown:
        raise ValidationError(f"unknown features: {', '.join(unknown)}")
    trials = load_trials(args.trials)
    model = scenario_population_fit(trials, kind, features, args.unbiased)
    out = args.out or f"{kind.value}_risk.json"
    with open(out, "w") as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)

    path = _sibling(out, ".assignments.csv")
    rows = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["participant_id", "v0A_mps", "R_s", "level", "percentile"])
        for tr in trials:
            beh = tr.behavior() if tr.scenario is kind else None
            if beh is None:
                continue
            a = classify_sensitivity(beh, model)
            w.writerow([tr.participant_id, tr.v0A, f"{a.R_s:.6f}", a.level.value, f"{a.percentile:.6f}"])
            rows += 1
    logger.info("fitted %s population on %d trials; %d assignments in %s", kind.value, model.n, rows, path)
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.config:
        raise ValidationError("compare needs --config")
    config = _read_model(ExperimentConfig, args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.trials:
        updates["trials_path"] = args.trials
    if updates:
        config = config.model_copy(update=updates)
    report = run_experiment(config, args.fixtures)
    out = args.out or "report.json"
    report.write_json(out)
    logger.info("report %s written to %s", report.metadata["config_hash"][:12], out)
    return EXIT_OK


def cmd_report(args) -> int:
    report = ExperimentReport.from_dict(read_json(args.report))
    written = report.write_tables(args.out or "tables")
    for path in written:
        logger.info("wrote %s", path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed")
    common.add_argument("--config", default=None, help="JSON config document for the subcommand")
    common.add_argument("--out", default=None, help="Output file (directory for report)")
    common.add_argument("--fixtures", default=None, help="Fixture directory (defaults to DRIVER_DDM_FIXTURES)")
    common.add_argument("--workers", type=int, default=None, help="Worker threads")
    common.add_argument("--log-level", default="INFO", help="Logging level")

    p = argparse.ArgumentParser(description="Driver brake/steer decision models")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Synthesise trials to a trial CSV")
    s.add_argument("--kind", required=True, help="cutin, rearend or lanechange")
    s.add_argument("--speeds", type=float, nargs="+", default=None, help="Ego speed groups in m/s")
    s.add_argument("--n-per-group", type=int, default=1000)
    s.add_argument("--risk", default=None, help="Behaviour model JSON; draws a sensitivity per trial")
    s.add_argument("--params", default=None, help="DDM parameter JSON instead of the fixture")
    s.add_argument("--traces", type=int, default=0, help="Also export N evidence traces per speed group")
    s.add_argument("--dt", type=float, default=DDM_DT)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", parents=[common], help="Fit DDM parameters to a trial CSV")
    c.add_argument("--trials", required=True)
    c.add_argument("--kind", required=True)
    c.set_defaults(func=cmd_calibrate)

    f = sub.add_parser("fit-risk", parents=[common], help="Fit the behaviour model and assign sensitivities")
    f.add_argument("--trials", required=True)
    f.add_argument("--kind", required=True)
    f.add_argument("--features", nargs="+", default=list(DEFAULT_FEATURES))
    f.add_argument("--unbiased", action="store_true", help="Use the 1/(N-1) covariance")
    f.set_defaults(func=cmd_fit_risk)

    m = sub.add_parser("compare", parents=[common], help="Run the model comparison experiment")
    m.add_argument("--trials", default=None, help="Empirical trial CSV instead of synthetic data")
    m.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", parents=[common], help="Write CSV tables from a report JSON")
    r.add_argument("--report", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    if args.command == "simulate" and args.workers is None:
        args.workers = DDM_WORKERS
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error("invalid input: %s", e)
        return EXIT_INVALID
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
