"""Monte Carlo evaluation of the estimators against the simulator's ground truth."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .domain import DataError, level_name, truncate_levels
from .estimators import ESTIMATORS, PropensityConfig, TauEstimate, run_all_estimators
from .simulator import SimulationConfig, case_config, oracle_propensities, simulate_experiment, true_tau

MIN_DEFINED_FRACTION = 0.5


@dataclass(frozen=True)
class McConfig:
    sim: SimulationConfig = field(default_factory=lambda: case_config("I"))
    replicates: int = 100
    master_seed: int = 0
    propensity: PropensityConfig = field(default_factory=PropensityConfig)
    baseline: str = "known-mu"
    oracle_replays: int | None = None

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise DataError("replicates must be >= 1")

    @property
    def truncate_at(self) -> int:
        return self.sim.truncate_at

    def seeds(self) -> list[int]:
        return replicate_seeds(self.master_seed, self.replicates)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sim": self.sim.to_dict(),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "propensity": self.propensity.to_dict(),
            "baseline": self.baseline,
            "oracle_replays": self.oracle_replays,
        }


def replicate_seeds(master_seed: int, n: int) -> list[int]:
    """Distinct 64-bit seeds, one per replicate, derived from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
    if len(set(seeds)) != n:
        raise RuntimeError("replicate seed collision")
    return seeds


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    seed: int
    estimates: dict[str, TauEstimate] | None
    truth: dict[int, float]
    overall_truth: float | None
    support: dict[int, float]
    shares: tuple[float, float, float]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.estimates is not None


def level_truth(m: np.ndarray, z: np.ndarray, truncate_at: int, covariate_params=(0.5, 0.5)) -> dict[int, float]:
    """Target effect per truncated level.

    Levels below the threshold use the analytic effect.  The top bucket pools
    several exposure counts, so its target is the analytic effect averaged
    over the treated players that fall in it.
    """
    out = {k: float(true_tau(k, covariate_params)) for k in range(0, truncate_at)}
    top = m[(z == 1) & (m >= truncate_at)]
    out[truncate_at] = float(np.mean(true_tau(top, covariate_params))) if top.size else math.nan
    return out


def run_replication(mc: McConfig, index: int) -> ReplicationResult:
    seed = mc.seeds()[index]
    sim = replace(mc.sim, seed=seed)
    k = mc.truncate_at
    try:
        ds = simulate_experiment(sim)
    except Exception as exc:  # recorded, never silently dropped
        return ReplicationResult(index, seed, None, {}, None, {}, (math.nan,) * 3, error=f"{type(exc).__name__}: {exc}")
    sizes = np.bincount(ds.groups, minlength=3) / ds.n
    treated_lv = truncate_levels(ds.m[ds.z == 1], k)
    support = {int(lv): float(c / treated_lv.size) for lv, c in enumerate(np.bincount(treated_lv)) if c}
    truth = level_truth(ds.m, ds.z, k, sim.covariate_params)
    # the exposure-weighted average of the level targets is the mean effect over treated players
    overall_truth = float(np.mean(true_tau(ds.m[ds.z == 1], sim.covariate_params)))
    try:
        level_props = None
        if mc.oracle_replays:
            from .propensity import stabilize_weights

            probs = stabilize_weights(oracle_propensities(ds, sim, mc.oracle_replays), mc.propensity.floor)
            cols = {lv: probs[:, lv] for lv in range(k + 1)}
            level_props = {"proposed": cols, "proposed-wo-cm": cols}
        est = run_all_estimators(ds, k, mc.propensity, mc.baseline, level_propensities=level_props)
    except Exception as exc:
        return ReplicationResult(index, seed, None, truth, overall_truth, support, tuple(sizes),
                                 error=f"{type(exc).__name__}: {exc}")
    return ReplicationResult(index, seed, est, truth, overall_truth, support, tuple(float(s) for s in sizes))


def nearest_rank(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    xs = sorted(values)
    if not xs:
        return math.nan
    rank = max(1, math.ceil(q / 100 * len(xs)))
    return float(xs[rank - 1])


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    level: int
    label: str
    mean: float
    lower: float
    upper: float
    truth: float
    bias: float
    rmse: float
    defined_fraction: float
    support: float
    included: bool

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class McSummary:
    config: McConfig
    rows: list[SummaryRow]
    overall: dict[str, dict[str, float]]
    n_replicates: int
    n_failed: int
    failures: list[dict[str, Any]]
    estimator_errors: dict[str, int]
    group_shares: dict[str, float] = field(default_factory=dict)

    def row(self, estimator: str, level: int) -> SummaryRow:
        for r in self.rows:
            if r.estimator == estimator and r.level == level:
                return r
        raise KeyError((estimator, level))

    def levels(self, min_support: float = 0.0) -> list[int]:
        return sorted({r.level for r in self.rows if r.included and r.support >= min_support})

    def tidy_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "estimator": r.estimator,
                "level": r.level,
                "label": r.label,
                "mean": r.mean,
                "lower": r.lower,
                "upper": r.upper,
                "truth": r.truth,
                "bias": r.bias,
                "rmse": r.rmse,
                "defined_fraction": r.defined_fraction,
                "support": r.support,
                "included": r.included,
            }
            for r in self.rows
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "estimator_errors": self.estimator_errors,
            "overall": self.overall,
            "group_shares": self.group_shares,
            "levels": self.tidy_rows(),
        }


def summarize(mc: McConfig, results: Iterable[ReplicationResult]) -> McSummary:
    """Aggregate replicate results; the order in which they arrive is irrelevant."""
    results = sorted(results, key=lambda r: r.index)
    ok = [r for r in results if r.ok]
    failures = [{"index": r.index, "seed": r.seed, "error": r.error} for r in results if not r.ok]
    if not ok:
        raise RuntimeError(f"all {len(results)} replicates failed: {failures[:5]}")
    k = mc.truncate_at
    levels = range(0, k + 1)
    n_ok = len(ok)
    rows = []
    overall = {}
    errors = {}
    for name in ESTIMATORS:
        errors[name] = sum(1 for r in ok if r.estimates[name].error is not None)
        for m in levels:
            pairs = [
                (r.estimates[name].estimate(m), r.truth.get(m, math.nan))
                for r in ok
                if r.estimates[name].estimate(m) is not None
            ]
            support = float(np.mean([r.support.get(m, 0.0) for r in ok]))
            frac = len(pairs) / n_ok
            if pairs:
                est = np.array([p[0] for p in pairs])
                tr = np.array([p[1] for p in pairs])
                mean = float(est.mean())
                truth = float(np.nanmean(tr)) if np.isfinite(tr).any() else math.nan
                bias = mean - truth
                rmse = float(np.sqrt(np.nanmean((est - tr) ** 2)))
                lo, hi = nearest_rank(est, 2.5), nearest_rank(est, 97.5)
            else:
                mean = truth = bias = rmse = lo = hi = math.nan
            rows.append(SummaryRow(name, m, level_name(m, k), mean, lo, hi, truth, bias, rmse, frac, support,
                                   frac >= MIN_DEFINED_FRACTION))
        vals = [(r.estimates[name].overall, r.overall_truth) for r in ok if r.estimates[name].overall is not None]
        if vals:
            est = np.array([v[0] for v in vals])
            tr = np.array([v[1] for v in vals], dtype=float)
            overall[name] = {
                "mean": float(est.mean()),
                "lower": nearest_rank(est, 2.5),
                "upper": nearest_rank(est, 97.5),
                "truth": float(tr.mean()),
                "bias": float(est.mean() - tr.mean()),
                "defined_fraction": len(vals) / n_ok,
            }
    shares = np.mean([r.shares for r in ok], axis=0)
    group_shares = {"T": float(shares[0]), "C1": float(shares[1]), "C0": float(shares[2])}
    return McSummary(mc, rows, overall, len(results), len(failures), failures, errors, group_shares)


def run_monte_carlo(mc: McConfig, workers: int = 1) -> McSummary:
    indices = range(mc.replicates)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_replication, [mc] * mc.replicates, indices))
    else:
        results = [run_replication(mc, i) for i in indices]
    return summarize(mc, results)


@dataclass(frozen=True)
class GroupShares:
    shares: np.ndarray  # (replicates, 3): T, C1, C0
    control_mixed_histogram: np.ndarray  # mean share of C1 players at each raw exposure count

    @property
    def mean(self) -> dict[str, float]:
        t, c1, c0 = self.shares.mean(axis=0)
        return {"T": float(t), "C1": float(c1), "C0": float(c0)}


def group_share_report(mc: McConfig) -> GroupShares:
    """Group proportions per replicate (simulation only; no estimation)."""
    shares = []
    hists = []
    for seed in mc.seeds():
        ds = simulate_experiment(replace(mc.sim, seed=seed))
        shares.append(np.bincount(ds.groups, minlength=3) / ds.n)
        cm = ds.m[ds.groups == 1]
        hists.append(np.bincount(cm, minlength=1) / max(cm.size, 1))
    width = max(len(h) for h in hists)
    hist = np.mean([np.pad(h, (0, width - len(h))) for h in hists], axis=0)
    return GroupShares(np.array(shares), hist)


@dataclass(frozen=True)
class BiasRanking:
    rows: list[dict[str, Any]]
    levels: list[int]
    proposed_best_fraction: float
    proposed_beats_naive_fraction: float
    wo_cm_wider_fraction: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": self.levels,
            "proposed_best_fraction": self.proposed_best_fraction,
            "proposed_beats_naive_fraction": self.proposed_beats_naive_fraction,
            "wo_cm_wider_fraction": self.wo_cm_wider_fraction,
            "rows": self.rows,
        }


def bias_comparison(summary: McSummary, min_support: float = 0.0, estimators: Sequence[str] = ESTIMATORS) -> BiasRanking:
    """Rank estimators per level by |bias| and by interval width (rank 1 = best, ties share).

    Only levels defined for every listed estimator in enough replicates and
    with treated support of at least ``min_support`` are ranked.
    """
    levels = [
        m for m in summary.levels(min_support)
        if all(summary.row(e, m).included and math.isfinite(summary.row(e, m).bias) for e in estimators)
    ]
    rows = []
    best = beats_naive = wider = 0
    for m in levels:
        r = {e: summary.row(e, m) for e in estimators}
        abs_bias = np.array([abs(r[e].bias) for e in estimators])
        widths = np.array([r[e].width for e in estimators])
        bias_rank = rankdata(abs_bias, method="min").astype(int)
        width_rank = rankdata(widths, method="min").astype(int)
        rows.append({
            "level": m,
            "label": r[estimators[0]].label,
            "abs_bias": dict(zip(estimators, abs_bias.tolist())),
            "bias_rank": dict(zip(estimators, bias_rank.tolist())),
            "width": dict(zip(estimators, widths.tolist())),
            "width_rank": dict(zip(estimators, width_rank.tolist())),
        })
        if "proposed" in r:
            p = abs(r["proposed"].bias)
            best += bias_rank[list(estimators).index("proposed")] == 1
            naive = [abs(r[e].bias) for e in ("naive", "naive-wo-cm") if e in r]
            beats_naive += all(p <= b for b in naive)
            if "proposed-wo-cm" in r:
                wider += r["proposed-wo-cm"].width > r["proposed"].width
    n = len(levels)
    frac = (lambda c: c / n) if n else (lambda c: math.nan)
    return BiasRanking(rows, levels, frac(best), frac(beats_naive), frac(wider))
