"""Command-line interface.

    spillover simulate  --case I --seed 7 --out-dir data/
    spillover estimate  --players data/players.csv --sessions data/sessions.csv --out-dir est/
    spillover mc-eval   --case II --replicates 100 --out-dir mc/
    spillover report    --input mc/report.json --out-dir rendered/

Every option can also come from a flat YAML or JSON file given with
``--config``; flags override the file.  A stored ``report.json`` is accepted
as a config file too, which reruns the command it came from.

Exit status: 0 success, 2 configuration error, 3 data error, 4 other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .case_study import CaseStudyConfig, generate_case_study
from .domain import ConfigError, DataError
from .estimators import (
    ESTIMATORS,
    PropensityConfig,
    estimate_baseline,
    propensity_populations,
    run_all_estimators,
)
from .evaluation import McConfig, bias_comparison, run_monte_carlo
from .io import (
    REPORT_FORMAT,
    emit_report,
    load_dataset,
    make_report,
    read_report,
    write_dataset,
    write_json,
)
from .propensity import (
    cross_validate,
    fit_propensity,
    load_fit,
    predict_propensities,
    save_fit,
    stabilize_weights,
)
from .simulator import SimulationConfig, case_config, simulate_experiment

log = logging.getLogger("spillover")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

SIM_KEYS = {f.name for f in fields(SimulationConfig)} - {"seed", "truncate_at"}
STUDY_KEYS = {f.name for f in fields(CaseStudyConfig)} - {"seed", "truncate_at"}

# Defaults per command.  Simulation mode truncates at 10; ingestion mode at 21
# with an outlier cap of 60 and the pre-period baseline.
DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"case": "I", "dgp": "matching", "seed": 0, "truncate_at": None},
    "estimate": {
        "players": None,
        "sessions": None,
        "exposures": None,
        "truncate_at": 21,
        "outlier_cap": 60.0,
        "baseline": "did-linear",
        "propensity": "boosted",
        "propensity_options": {},
        "fit_population": "all",
        "epsilon": 0.01,
        "cv_folds": 0,
        "load_propensity": None,
        "seed": 0,
        "format": "both",
    },
    "mc-eval": {
        "case": "I",
        "replicates": 100,
        "seed": 0,
        "truncate_at": 10,
        "baseline": "known-mu",
        "propensity": "linear",
        "propensity_options": {},
        "fit_population": "all",
        "epsilon": 0.01,
        "oracle_replays": None,
        "workers": 1,
        "format": "both",
    },
    "report": {"input": None, "format": "both"},
}

CV_GRID = ({"max_depth": 3, "n_rounds": 20}, {"max_depth": 6, "n_rounds": 20}, {"max_depth": 6, "n_rounds": 50})


def _cap(text: str) -> float | None:
    if text.lower() in ("none", "off", ""):
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'none', got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spillover", description="Experiments with contamination through shared team games.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, out=True):
        sp.add_argument("--config", type=Path, help="flat YAML/JSON file of options (flags override it)")
        if out:
            sp.add_argument("--out-dir", type=Path, default=None, help="output directory (default: .)")
        sp.add_argument("--format", choices=("json", "csv", "both"), default=None)
        sp.add_argument("-v", "--verbose", action="store_true")

    def estimation(sp):
        sp.add_argument("--truncate-at", type=int, default=None, metavar="K")
        sp.add_argument("--baseline", choices=("known-mu", "did-linear"), default=None)
        sp.add_argument("--propensity", choices=("linear", "boosted"), default=None)
        sp.add_argument("--epsilon", type=float, default=None, help="propensity floor")
        sp.add_argument("--fit-population", choices=("all", "analysis"), default=None)
        sp.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("simulate", help="generate a synthetic experiment as CSV files")
    common(s)
    s.add_argument("--case", choices=("I", "II", "III"), default=None)
    s.add_argument("--dgp", choices=("matching", "case-study"), default=None,
                   help="game-matching simulation, or the synthetic export with pre-period outcomes")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--truncate-at", type=int, default=None, metavar="K")
    s.add_argument("--n-players", type=int, default=None)
    s.add_argument("--n-games", type=int, default=None)

    e = sub.add_parser("estimate", help="estimate effects on one dataset")
    common(e)
    estimation(e)
    e.add_argument("--players", type=Path, default=None)
    e.add_argument("--sessions", type=Path, default=None)
    e.add_argument("--exposures", type=Path, default=None)
    e.add_argument("--outlier-cap", type=_cap, default=None, help="drop y >= cap; 'none' keeps everything")
    e.add_argument("--cv-folds", type=int, default=None, help="cross-validate boosted trees with k folds (0 = off)")
    e.add_argument("--load-propensity", type=Path, default=None, help="reuse fitted models from this directory")

    m = sub.add_parser("mc-eval", help="Monte Carlo evaluation against the simulator's truth")
    common(m)
    estimation(m)
    m.add_argument("--case", choices=("I", "II", "III"), default=None)
    m.add_argument("--replicates", type=int, default=None)
    m.add_argument("--oracle-replays", type=int, default=None,
                   help="use simulated oracle propensities with this many matching replays")
    m.add_argument("--workers", type=int, default=None)

    r = sub.add_parser("report", help="re-render a stored report")
    common(r)
    r.add_argument("--input", type=Path, default=None)
    return p


def load_config_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a key-value mapping")
    if data.get("format") == REPORT_FORMAT:
        data = dict(data["config"])
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults < config file < flags into one flat config."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    allowed = set(cfg) | {"out_dir"}
    if cmd == "simulate":
        allowed |= SIM_KEYS | STUDY_KEYS
    if cmd == "mc-eval":
        allowed |= SIM_KEYS
    if args.config is not None:
        from_file = load_config_file(args.config)
        from_file.pop("command", None)
        unknown = sorted(set(from_file) - allowed)
        if unknown:
            raise ConfigError(f"unknown keys for {cmd} in {args.config}: {unknown}")
        cfg.update(from_file)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        cfg[key] = str(value) if isinstance(value, Path) else value
    cfg.setdefault("out_dir", ".")
    cfg["out_dir"] = str(cfg["out_dir"])
    return cfg


def _echo(cfg: dict[str, Any]) -> dict[str, Any]:
    """The effective config as embedded in reports (output location excluded)."""
    return {k: v for k, v in sorted(cfg.items()) if k != "out_dir"}


def _sim_config(cfg: dict[str, Any], *, truncate_default: int = 10) -> SimulationConfig:
    overrides = {k: cfg[k] for k in SIM_KEYS if k in cfg and cfg[k] is not None}
    k = cfg.get("truncate_at") or truncate_default
    return case_config(cfg["case"], seed=int(cfg["seed"]), truncate_at=int(k), **overrides)


def _propensity_config(cfg: dict[str, Any]) -> PropensityConfig:
    opts = cfg.get("propensity_options") or {}
    if not isinstance(opts, dict):
        raise ConfigError("propensity_options must be a mapping")
    return PropensityConfig(kind=cfg["propensity"], floor=float(cfg["epsilon"]), options=dict(opts),
                            fit_population=cfg["fit_population"])


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: dict[str, Any]) -> dict:
    out = Path(cfg["out_dir"])
    if cfg["dgp"] == "matching":
        sim = _sim_config(cfg)
        ds = simulate_experiment(sim)
        config_used = sim.to_dict()
    elif cfg["dgp"] == "case-study":
        overrides = {k: cfg[k] for k in STUDY_KEYS if k in cfg and cfg[k] is not None}
        study = CaseStudyConfig(seed=int(cfg["seed"]), truncate_at=int(cfg.get("truncate_at") or 21), **overrides)
        ds = generate_case_study(study).dataset
        config_used = study.to_dict()
    else:
        raise ConfigError(f"unknown dgp {cfg['dgp']!r}")
    paths = write_dataset(ds, out)
    sizes = {g.value: n for g, n in ds.group_sizes().items()}
    results = {"dgp": cfg["dgp"], "generator_config": config_used, "n_players": ds.n,
               "n_sessions": len(ds.session_ids), "group_sizes": sizes, "files": sorted(p.name for p in paths.values())}
    report = make_report("simulate", _echo(cfg), int(cfg["seed"]), results)
    write_json(out / "simulate.json", report)
    log.info("wrote %d players to %s", ds.n, out)
    return report


def _level_columns(fit, ds, floor, levels):
    probs = stabilize_weights(predict_propensities(fit, ds.x), floor)
    return {int(c): probs[:, i] for i, c in enumerate(fit.categories) if int(c) in levels}


def cmd_estimate(cfg: dict[str, Any]) -> dict:
    if cfg["players"] is None:
        raise ConfigError("estimate needs --players")
    for key in ("players", "sessions", "exposures", "load_propensity"):
        if cfg.get(key) is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} path {cfg[key]} does not exist")
    baseline_mode = cfg["baseline"]
    ds, ingest = load_dataset(
        cfg["players"],
        cfg.get("sessions"),
        cfg.get("exposures"),
        outlier_cap=cfg["outlier_cap"],
        require_y_pre=baseline_mode == "did-linear",
    )
    k = int(cfg["truncate_at"])
    propensity = _propensity_config(cfg)
    out = Path(cfg["out_dir"])
    levels = set(range(k + 1))
    populations = propensity_populations(ds, propensity)
    lv = ds.levels(k)

    cv_report = None
    if cfg["load_propensity"] is not None:
        src = Path(cfg["load_propensity"])
        fits = {kind: load_fit(src / f"propensity_{kind}.json") for kind in ("proposed", "proposed-wo-cm")}
    else:
        options = dict(propensity.options)
        if int(cfg["cv_folds"] or 0) > 0:
            if propensity.kind != "boosted":
                raise ConfigError("cross-validation is only wired for the boosted model")
            pool = populations["proposed"]
            cv_report = cross_validate(ds.x[pool], lv[pool], [{**g, **options} for g in CV_GRID],
                                       int(cfg["cv_folds"]), kind="boosted", seed=int(cfg["seed"]))
            options = cv_report.best_params
        fits = {kind: fit_propensity(propensity.kind, ds.x[mask], lv[mask], **options)
                for kind, mask in populations.items()}
    cols = {kind: _level_columns(fit, ds, propensity.floor, levels) for kind, fit in fits.items()}
    baseline = estimate_baseline(ds, baseline_mode)
    est = run_all_estimators(ds, k, propensity, baseline, level_propensities=cols)

    prop_dir = out / "propensity"
    prop_dir.mkdir(parents=True, exist_ok=True)
    for kind, fit in fits.items():
        save_fit(fit, prop_dir / f"propensity_{kind}.json")
    diagnostics = {kind: {key: v for key, v in fit.diagnostics.items() if key != "loss_history"}
                   for kind, fit in fits.items()}
    if cv_report is not None:
        diagnostics["cross_validation"] = cv_report.to_dict()
    write_json(prop_dir / "diagnostics.json", diagnostics)

    level_rows = [{"estimator": kind, **row} for kind in ESTIMATORS for row in est[kind].to_dict()["levels"]]
    overall_rows = [{"estimator": kind, "overall": est[kind].overall, "dropped_mass": est[kind].dropped_mass,
                     "error": est[kind].error} for kind in ESTIMATORS]
    results = {
        "ingestion": ingest.to_dict(),
        "n_players": ds.n,
        "group_sizes": {g.value: n for g, n in ds.group_sizes().items()},
        "baseline": baseline.to_dict(),
        "propensity": {"config": propensity.to_dict(), "diagnostics": diagnostics},
        "levels": level_rows,
        "overall": overall_rows,
    }
    report = make_report("estimate", _echo(cfg), int(cfg["seed"]), results)
    emit_report(report, out, cfg["format"])
    return report


def cmd_mc_eval(cfg: dict[str, Any]) -> dict:
    if int(cfg["replicates"]) < 1:
        raise ConfigError("replicates must be >= 1")
    sim = _sim_config({**cfg, "seed": 0})
    mc = McConfig(sim=sim, replicates=int(cfg["replicates"]), master_seed=int(cfg["seed"]),
                  propensity=_propensity_config(cfg), baseline=cfg["baseline"],
                  oracle_replays=cfg.get("oracle_replays"))
    summary = run_monte_carlo(mc, workers=int(cfg["workers"]))
    ranking = bias_comparison(summary, min_support=0.02)
    d = summary.to_dict()
    overall_rows = [{"estimator": kind, **d["overall"][kind]} for kind in ESTIMATORS if kind in d["overall"]]
    results = {
        "mc_config": d["config"],
        "n_replicates": d["n_replicates"],
        "n_failed": d["n_failed"],
        "failures": d["failures"],
        "estimator_errors": d["estimator_errors"],
        "group_shares": d["group_shares"],
        "bias_comparison": ranking.to_dict(),
        "levels": d["levels"],
        "overall": overall_rows,
    }
    report = make_report("mc-eval", _echo(cfg), int(cfg["seed"]), results)
    emit_report(report, Path(cfg["out_dir"]), cfg["format"])
    return report


def cmd_report(cfg: dict[str, Any]) -> dict:
    if cfg["input"] is None:
        raise ConfigError("report needs --input")
    report = read_report(cfg["input"])
    emit_report(report, Path(cfg["out_dir"]), cfg["format"])
    return report


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc-eval": cmd_mc_eval, "report": cmd_report}


def dispatch(cfg: dict[str, Any], command: str) -> int:
    try:
        COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"spillover: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"spillover: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"spillover: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"spillover: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg, args.command)


if __name__ == "__main__":
    sys.exit(main())
