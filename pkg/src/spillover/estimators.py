"""Treatment-effect estimators for experiments with session-level contamination.

Four per-level estimators are compared:

``naive``           treated at level m vs. every initially-control player
``naive-wo-cm``     treated at level m vs. control-control players only
``proposed``        Hájek-weighted mean of treated and control-mixed players at
                    level m, minus the average no-treatment baseline
``proposed-wo-cm``  the same with treated players only
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .domain import ConfigError, DataError, ExperimentDataset, level_name, truncate_levels
from .propensity import fit_propensity, predict_propensities, stabilize_weights

ESTIMATORS = ("naive", "naive-wo-cm", "proposed", "proposed-wo-cm")


class UndefinedLevel(ValueError):
    """No analysis units at the requested exposure level."""


class ZeroPropensityError(ValueError):
    """A unit entering the weighted mean has propensity zero."""


def _mean(values: np.ndarray, what: str) -> float:
    if values.size == 0:
        raise DataError(f"{what} is empty")
    return float(values.mean())


def naive_overall(ds: ExperimentDataset) -> float:
    """Difference in means between the assigned treatment and control groups."""
    treated = ds.z == 1
    return _mean(ds.y[treated], "treatment group") - _mean(ds.y[~treated], "control group")


def _treated_mean_at(ds: ExperimentDataset, m: int, truncate_at: int | None) -> float:
    at = (ds.z == 1) & (truncate_levels(ds.m, truncate_at) == m)
    if not at.any():
        raise UndefinedLevel(f"no treated units at exposure level {level_name(m, truncate_at)}")
    return float(ds.y[at].mean())


def naive_per_m(ds: ExperimentDataset, m: int, truncate_at: int | None = None) -> float:
    control = _mean(ds.y[ds.z == 0], "control group")
    return _treated_mean_at(ds, m, truncate_at) - control


def naive_without_control_mixed(ds: ExperimentDataset, m: int, truncate_at: int | None = None) -> float:
    cc = (ds.z == 0) & (ds.m == 0)
    if not cc.any():
        raise DataError("control-control group is empty: no initially-control player avoided treated games")
    return _treated_mean_at(ds, m, truncate_at) - float(ds.y[cc].mean())


def hajek_weights(e: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Normalised inverse-propensity weights over the units selected by ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise UndefinedLevel("no analysis units at this level")
    e = np.asarray(e, dtype=float)[mask]
    if (e <= 0).any() or not np.isfinite(e).all():
        raise ZeroPropensityError(
            f"{int(np.sum(e <= 0))} analysis units have zero propensity; apply stabilize_weights first"
        )
    w = 1.0 / e
    return w / w.sum()


def hajek(y: np.ndarray, e: np.ndarray, mask: np.ndarray) -> float:
    """``sum(y_i / e_i) / sum(1 / e_i)`` over the masked units."""
    w = hajek_weights(e, mask)
    return float(w @ np.asarray(y, dtype=float)[np.asarray(mask, dtype=bool)])


def analysis_mask(ds: ExperimentDataset, m: int, truncate_at: int | None, include_control_mixed: bool) -> np.ndarray:
    at = truncate_levels(ds.m, truncate_at) == m
    return at if include_control_mixed else at & (ds.z == 1)


def hajek_mean(
    ds: ExperimentDataset,
    m: int,
    e_m: np.ndarray,
    include_control_mixed: bool = True,
    truncate_at: int | None = None,
) -> float:
    """Weighted mean outcome at level ``m``.

    ``e_m`` holds each unit's estimated probability of being at level ``m``;
    entries for units outside the analysis population are ignored.  With
    control-mixed players included the population is every unit at ``m``
    (for ``m > 0`` these are treated and control-mixed players).
    """
    mask = analysis_mask(ds, m, truncate_at, include_control_mixed)
    if not mask.any():
        raise UndefinedLevel(f"no analysis units at exposure level {level_name(m, truncate_at)}")
    return hajek(ds.y, e_m, mask)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w**2))


@dataclass(frozen=True)
class BaselineModel:
    """No-treatment outcome model used for the average control baseline.

    ``known-mu`` evaluates a supplied function of the first covariate.
    ``did-linear`` adds a linear, covariate-driven increment (fit on
    control-control players) to each player's own pre-period outcome.
    """

    mode: str
    coef: np.ndarray | None = None
    mu: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def predict(self, ds: ExperimentDataset) -> np.ndarray:
        if self.mode == "known-mu":
            return np.asarray(self.mu(ds.x[:, 0]), dtype=float)
        if self.mode == "did-linear":
            if ds.y_pre is None:
                raise DataError("did-linear baseline needs pre-period outcomes (y_pre)")
            design = np.hstack([np.ones((ds.n, 1)), ds.x])
            return ds.y_pre + design @ self.coef

        raise DataError(f"unknown baseline mode {self.mode!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"mode": self.mode}
        if self.coef is not None:
            d["coef"] = [float(c) for c in self.coef]
        return d


def estimate_baseline(ds: ExperimentDataset, mode: str = "known-mu", mu=None) -> BaselineModel:
    if mode == "known-mu":
        if mu is None:
            from .simulator import true_mu

            mu = true_mu
        return BaselineModel(mode="known-mu", mu=mu)
    if mode != "did-linear":
        raise DataError(f"unknown baseline mode {mode!r}; expected 'known-mu' or 'did-linear'")
    if ds.y_pre is None:
        raise DataError("did-linear baseline needs pre-period outcomes (y_pre)")
    cc = (ds.z == 0) & (ds.m == 0)
    n_cc = int(cc.sum())
    p = ds.x.shape[1]
    if n_cc <= p + 1:
        raise DataError(f"did-linear baseline needs more than {p + 1} control-control players, got {n_cc}")
    design = np.hstack([np.ones((n_cc, 1)), ds.x[cc]])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DataError("control-control covariate design is rank deficient")
    coef, *_ = np.linalg.lstsq(design, ds.y[cc] - ds.y_pre[cc], rcond=None)
    return BaselineModel(mode="did-linear", coef=coef)


def estimate_tau_m(
    ds: ExperimentDataset,
    m: int,
    e_m: np.ndarray,
    baseline: BaselineModel,
    include_control_mixed: bool = True,
    truncate_at: int | None = None,
) -> float:
    """Weighted mean at level ``m`` minus the baseline averaged over all players."""
    return hajek_mean(ds, m, e_m, include_control_mixed, truncate_at) - float(np.mean(baseline.predict(ds)))


@dataclass(frozen=True)
class LevelEstimate:
    level: int
    label: str
    estimate: float | None
    n_units: int
    ess: float
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.estimate is not None


@dataclass(frozen=True)
class OverallTau:
    value: float
    dropped_mass: float


@dataclass(frozen=True)
class TauEstimate:
    kind: str
    truncate_at: int | None
    levels: dict[int, LevelEstimate]
    overall: float | None
    dropped_mass: float
    error: str | None = None

    def estimate(self, level: int) -> float | None:
        le = self.levels.get(level)
        return None if le is None else le.estimate

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "truncate_at": self.truncate_at,
            "overall": self.overall,
            "dropped_mass": self.dropped_mass,
            "error": self.error,
            "levels": [
                {
                    "level": le.level,
                    "label": le.label,
                    "estimate": le.estimate,
                    "n_units": le.n_units,
                    "ess": le.ess,
                    "defined": le.defined,
                    "reason": le.reason,
                }
                for le in self.levels.values()
            ],
        }


def treated_level_distribution(ds: ExperimentDataset, truncate_at: int | None) -> dict[int, float]:
    """Empirical P(level = m | Z = 1) over the observed levels."""
    lv = truncate_levels(ds.m[ds.z == 1], truncate_at)
    if lv.size == 0:
        raise DataError("treatment group is empty")
    counts = np.bincount(lv)
    return {int(m): c / lv.size for m, c in enumerate(counts) if c}


def estimate_overall_tau(
    per_level: Mapping[int, float | None],
    ds: ExperimentDataset,
    truncate_at: int | None = None,
    include_zero: bool = False,
) -> OverallTau:
    """Combine per-level effects with the treated players' exposure distribution.

    Only levels ``m > 0`` enter unless ``include_zero`` is set (the naive
    contrasts, whose level-0 value is not zero by construction).  Levels whose estimate is undefined are
    dropped and the remaining positive-level weights scaled up to the full
    ``m > 0`` mass; the dropped share of that mass is reported.
    """
    dist = {m: p for m, p in treated_level_distribution(ds, truncate_at).items() if m > 0 or include_zero}
    total = sum(dist.values())
    kept = {m: p for m, p in dist.items() if per_level.get(m) is not None}
    if not kept:
        raise DataError("no exposure level with treated support has a defined estimate")
    mass = sum(kept.values())
    # treated players with m = 0 keep their share (their effect is zero by definition);
    # only undefined positive levels are renormalised away
    value = sum(per_level[m] * p for m, p in kept.items()) * total / mass
    return OverallTau(value=float(value), dropped_mass=float(1 - mass / total))


@dataclass(frozen=True)
class PropensityConfig:
    """How exposure propensities are obtained.

    ``kind`` is ``linear`` or ``boosted``; ``options`` pass through to the
    fitter.  ``floor`` is the weight-stabilisation floor.  ``fit_population``
    picks the training rows for the pooled estimator's model: ``all`` players
    (the default, matching the average over all N in the estimand) or only the
    ``analysis`` units, treated plus control-mixed.
    """

    kind: str = "linear"
    floor: float = 0.01
    options: dict[str, Any] = field(default_factory=dict)
    fit_population: str = "all"

    def __post_init__(self):
        if self.kind not in ("linear", "boosted"):
            raise ConfigError(f"propensity kind must be linear or boosted, got {self.kind!r}")
        if self.fit_population not in ("all", "analysis"):
            raise ConfigError(f"fit_population must be all or analysis, got {self.fit_population!r}")
        if not 0 <= self.floor < 0.5:
            raise ConfigError(f"weight floor must lie in [0, 0.5), got {self.floor}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "floor": self.floor,
            "options": dict(self.options),
            "fit_population": self.fit_population,
        }


def _level_matrix(probs: np.ndarray, categories, levels) -> dict[int, np.ndarray]:
    cols = {int(c): probs[:, i] for i, c in enumerate(categories)}
    return {m: cols[m] for m in levels if m in cols}


def fit_level_propensities(
    ds: ExperimentDataset,
    population: np.ndarray,
    truncate_at: int | None,
    config: PropensityConfig,
):
    """Fit an exposure model on ``population`` and return stabilised columns by level, plus the fit."""
    lv = truncate_levels(ds.m, truncate_at)
    fit = fit_propensity(config.kind, ds.x[population], lv[population], **config.options)
    probs = stabilize_weights(predict_propensities(fit, ds.x), config.floor)
    return _level_matrix(probs, fit.categories, fit.categories), fit


def propensity_populations(ds: ExperimentDataset, config: PropensityConfig) -> dict[str, np.ndarray]:
    """Training rows for each weighted estimator's exposure model."""
    treated = ds.z == 1
    pooled = np.ones(ds.n, dtype=bool) if config.fit_population == "all" else treated | (ds.m > 0)
    return {"proposed": pooled, "proposed-wo-cm": treated}


def _per_level(kind, levels, truncate_at, compute) -> dict[int, LevelEstimate]:
    out = {}
    for m in levels:
        label = level_name(m, truncate_at)
        try:
            est, n, ess = compute(m)
            out[m] = LevelEstimate(m, label, est, n, ess)
        except (UndefinedLevel, DataError, KeyError) as exc:
            out[m] = LevelEstimate(m, label, None, 0, 0.0, reason=str(exc))
    return out


def run_all_estimators(
    ds: ExperimentDataset,
    truncate_at: int | None = 10,
    propensity: PropensityConfig | None = None,
    baseline: BaselineModel | str = "known-mu",
    *,
    level_propensities: Mapping[str, Mapping[int, np.ndarray]] | None = None,
) -> dict[str, TauEstimate]:
    """All four estimators, per exposure level and overall.

    Levels reported are ``0 .. truncate_at`` (or up to the largest observed
    count when not truncating).  The naive overall values combine every level,
    which makes them the plain differences in means; the weighted estimators
    combine levels ``m > 0``.  The proposed estimator's exposure model is fit on all
    players by default (see :class:`PropensityConfig`); the treated-only
    variant's model on treated players only.
    ``level_propensities`` (keyed ``"proposed"`` / ``"proposed-wo-cm"``)
    bypasses fitting, e.g. for oracle propensities.
    """
    propensity = propensity or PropensityConfig()
    if isinstance(baseline, str):
        baseline = estimate_baseline(ds, baseline)
    lv = truncate_levels(ds.m, truncate_at)
    top = truncate_at if truncate_at is not None else int(lv.max())
    levels = list(range(0, top + 1))
    results: dict[str, TauEstimate] = {}

    treated = ds.z == 1

    def naive_level(fn):
        def compute(m):
            at = treated & (lv == m)
            return fn(ds, m, truncate_at), int(at.sum()), float(at.sum())
        return compute

    for kind, fn in (("naive", naive_per_m), ("naive-wo-cm", naive_without_control_mixed)):
        try:
            if kind == "naive-wo-cm" and not ((ds.z == 0) & (ds.m == 0)).any():
                raise DataError("control-control group is empty")
            per = _per_level(kind, levels, truncate_at, naive_level(fn))
            results[kind] = _finish(kind, per, ds, truncate_at)
        except DataError as exc:
            results[kind] = TauEstimate(kind, truncate_at, {}, None, 1.0, error=str(exc))

    mu_bar = float(np.mean(baseline.predict(ds)))
    populations = propensity_populations(ds, propensity)
    for kind, include_cm in (("proposed", True), ("proposed-wo-cm", False)):
        population = populations[kind]
        try:
            if level_propensities is not None:
                cols = level_propensities[kind]
            else:
                cols, _ = fit_level_propensities(ds, population, truncate_at, propensity)

            def compute(m, cols=cols, include_cm=include_cm):
                mask = analysis_mask(ds, m, truncate_at, include_cm)
                if not mask.any():
                    raise UndefinedLevel(f"no analysis units at level {level_name(m, truncate_at)}")
                if m not in cols:
                    raise UndefinedLevel(f"level {level_name(m, truncate_at)} absent from exposure model")
                w = 1.0 / np.asarray(cols[m])[mask]
                est = hajek(ds.y, cols[m], mask) - mu_bar
                return est, int(mask.sum()), effective_sample_size(w)

            per = _per_level(kind, levels, truncate_at, compute)
            results[kind] = _finish(kind, per, ds, truncate_at)
        except (DataError, ValueError) as exc:
            results[kind] = TauEstimate(kind, truncate_at, {}, None, 1.0, error=str(exc))
    return {k: results[k] for k in ESTIMATORS}


def _finish(kind, per, ds, truncate_at) -> TauEstimate:
    try:
        overall = estimate_overall_tau(
            {m: le.estimate for m, le in per.items()}, ds, truncate_at, include_zero=kind.startswith("naive")
        )
        return TauEstimate(kind, truncate_at, per, overall.value, overall.dropped_mass)
    except DataError as exc:
        return TauEstimate(kind, truncate_at, per, None, 1.0, error=str(exc))
