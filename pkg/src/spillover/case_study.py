"""Synthetic stand-in for a real experiment export.

Real exports have no session logs, several player features, a pre-period
outcome, and a few absurd outcome values.  This generator mimics those traits
with a known answer:

* experiment players are a minority of the traffic, so most teammates are
  outsiders who carry the treatment with a fixed probability;
* the number of games a player plays grows with their activity feature, so
  players who never meet a treated teammate (the control-control group) are
  mostly the less active ones;
* the no-treatment outcome is the pre-period outcome plus an increment that
  is linear in the features, and the treatment effect depends only on the
  number of treated games, ``effect_scale * sqrt(m)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .domain import DEFAULT_TEAM_SIZE, ConfigError, ExperimentDataset

FEATURES = ("activity", "skill", "spend")
STREAMS = {"assignment": 0, "features": 1, "games": 2, "outcomes": 3, "outliers": 4}

# increment = INCREMENT[0] + INCREMENT[1:] @ features
INCREMENT = (0.3, 0.2, 0.1, 0.0)


@dataclass(frozen=True)
class CaseStudyConfig:
    n_players: int = 5000
    p_treat: float = 0.5
    mean_games: float = 8.0
    outsider_treated_rate: float = 0.2
    team_size: int = DEFAULT_TEAM_SIZE
    effect_scale: float = 0.75
    noise_shape: float = 4.0
    outlier_rate: float = 0.005
    outlier_floor: float = 60.0
    truncate_at: int = 21
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_players < 2:
            raise ConfigError("n_players must be at least 2")
        for name in ("p_treat", "outsider_treated_rate", "outlier_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.mean_games <= 0 or self.noise_shape <= 0:
            raise ConfigError("mean_games and noise_shape must be positive")
        if self.team_size < 2:
            raise ConfigError("team_size must be at least 2")
        if self.truncate_at < 1:
            raise ConfigError("truncate_at must be >= 1")

    @property
    def contamination_rate(self) -> float:
        """Chance that a control player's game contains a treated outsider."""
        return 1 - (1 - self.outsider_treated_rate) ** (self.team_size - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(100 + STREAMS[name],)))


def draw_features(n: int, rng: np.random.Generator) -> np.ndarray:
    activity = rng.gamma(2.0, 1.0, n)
    skill = rng.random(n)
    spend = rng.exponential(1.0, n)
    return np.column_stack([activity, skill, spend])


def expected_games(activity: np.ndarray, mean_games: float) -> np.ndarray:
    # a floor of casual play plus a share linear in activity; E[A] = 2 keeps the mean at mean_games.
    # Steeper (superlinear) activity curves leave high-m treated players with no comparable controls.
    return mean_games * (0.3 + 0.35 * activity)


def pre_period_mean(x: np.ndarray) -> np.ndarray:
    return 1.0 + 1.5 * x[:, 0] + x[:, 1] + 0.5 * x[:, 2]


def increment(x: np.ndarray) -> np.ndarray:
    return INCREMENT[0] + x @ np.asarray(INCREMENT[1:])


def effect(m, scale: float = 0.75) -> np.ndarray:
    return scale * np.sqrt(np.asarray(m, dtype=float))


@dataclass(frozen=True)
class CaseStudy:
    dataset: ExperimentDataset
    config: CaseStudyConfig
    games: np.ndarray  # games played per player
    outlier: np.ndarray  # rows whose outcome was replaced by an absurd value

    def true_overall(self) -> float:
        """Mean effect over treated players (players with no treated games contribute zero)."""
        ds = self.dataset
        keep = (ds.z == 1) & ~self.outlier
        return float(np.mean(effect(ds.m[keep], self.config.effect_scale)))


def generate_case_study(config: CaseStudyConfig = CaseStudyConfig()) -> CaseStudy:
    n, seed = config.n_players, config.seed
    z = (_rng(seed, "assignment").random(n) < config.p_treat).astype(np.int8)
    x = draw_features(n, _rng(seed, "features"))
    g = _rng(seed, "games")
    games = g.poisson(expected_games(x[:, 0], config.mean_games))
    # treated players carry the treatment into every game; controls only meet it through outsiders
    m = np.where(z == 1, games, g.binomial(games, config.contamination_rate))

    o = _rng(seed, "outcomes")
    base = pre_period_mean(x)
    y_pre = o.gamma(config.noise_shape, base / config.noise_shape)
    mean = y_pre + increment(x) + effect(m, config.effect_scale)
    y = mean * o.gamma(config.noise_shape, 1 / config.noise_shape, n)

    r = _rng(seed, "outliers")
    outlier = r.random(n) < config.outlier_rate
    y = np.where(outlier, config.outlier_floor + r.exponential(30.0, n), y)

    width = len(str(n - 1))
    ds = ExperimentDataset(
        ids=tuple(f"u{i:0{width}d}" for i in range(n)),
        z=z,
        x=x,
        y=y,
        m=m,
        y_pre=y_pre,
        feature_names=FEATURES,
    )
    return CaseStudy(ds, config, games, outlier)


def drop_outliers(ds: ExperimentDataset, cap: float | None) -> ExperimentDataset:
    """Remove players with ``y >= cap`` (exposures were counted before removal)."""
    if cap is None:
        return ds
    keep = ds.y < cap
    return ExperimentDataset(
        ids=tuple(pid for pid, k in zip(ds.ids, keep) if k),
        z=ds.z[keep],
        x=ds.x[keep],
        y=ds.y[keep],
        m=ds.m[keep],
        y_pre=None if ds.y_pre is None else ds.y_pre[keep],
        feature_names=ds.feature_names,
    )


@dataclass(frozen=True)
class CaseStudyReplicate:
    seed: int
    truth: float
    overall: dict[str, float | None]


def run_case_study_replicates(
    config: CaseStudyConfig,
    seeds,
    propensity=None,
    outlier_cap: float | None = 60.0,
) -> list[CaseStudyReplicate]:
    """The ingestion pipeline (outlier cap, pre-period baseline) on fresh draws."""
    from dataclasses import replace

    from .estimators import run_all_estimators

    out = []
    for seed in seeds:
        study = generate_case_study(replace(config, seed=int(seed)))
        ds = drop_outliers(study.dataset, outlier_cap)
        est = run_all_estimators(ds, config.truncate_at, propensity, "did-linear")
        out.append(CaseStudyReplicate(int(seed), study.true_overall(), {k: v.overall for k, v in est.items()}))
    return out
