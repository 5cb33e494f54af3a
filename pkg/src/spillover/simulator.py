"""Synthetic team-game experiments with ephemeral interference.

Players are randomised to treatment, carry one Beta-distributed activity
covariate, and are matched into five-player games.  Each game first draws the
number of treated members, then fills treated and control slots by weighted
sampling without replacement.  Outcomes are exponential with a mean that grows
with both the covariate and the number of treated games played.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .domain import DEFAULT_TEAM_SIZE, ConfigError, ExperimentDataset, exposure_counts, truncate_levels

log = logging.getLogger(__name__)

CASE_PRESETS: dict[str, tuple[int, tuple[float, ...]]] = {
    "I": (2000, (0.40, 0.10, 0.10, 0.10, 0.10, 0.20)),
    "II": (1000, (0.06, 0.02, 0.19, 0.23, 0.34, 0.16)),
    "III": (1000, (0.20, 0.34, 0.07, 0.16, 0.06, 0.17)),
}

# Fixed spawn keys: adding a stream must never renumber the existing ones.
STREAMS = {"assignment": 0, "covariates": 1, "matching": 2, "outcomes": 3, "oracle": 4}

_CHUNK = 256  # games per vectorised matching block; part of the seed -> data contract


class DegenerateAssignmentError(RuntimeError):
    """Randomisation left the treatment or the control group empty."""


@dataclass(frozen=True)
class SimulationConfig:
    n_players: int = 1000
    p_treat: float = 0.5
    n_games: int = 2000
    team_size: int = DEFAULT_TEAM_SIZE
    treated_count_probs: tuple[float, ...] = CASE_PRESETS["I"][1]
    covariate_params: tuple[float, float] = (0.5, 0.5)
    truncate_at: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.treated_count_probs)
        object.__setattr__(self, "treated_count_probs", probs)
        object.__setattr__(self, "covariate_params", tuple(float(a) for a in self.covariate_params))
        if self.team_size < 1:
            raise ConfigError("team_size must be positive")
        if len(probs) != self.team_size + 1:
            raise ConfigError(f"treated_count_probs needs {self.team_size + 1} entries, got {len(probs)}")
        if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1) > 1e-12:
            raise ConfigError(f"treated_count_probs must be a probability vector, got {probs}")
        if not 0 <= self.p_treat <= 1:
            raise ConfigError(f"p_treat must lie in [0, 1], got {self.p_treat}")
        if self.n_players < self.team_size:
            raise ConfigError("n_players must be at least team_size")
        if self.n_games < 0:
            raise ConfigError("n_games must be non-negative")
        if self.truncate_at < 1:
            raise ConfigError("truncate_at must be >= 1")
        if min(self.covariate_params) <= 0:
            raise ConfigError("Beta shape parameters must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["treated_count_probs"] = list(self.treated_count_probs)
        d["covariate_params"] = list(self.covariate_params)
        return d


def case_config(case: str, **overrides) -> SimulationConfig:
    """Simulation config for one of the three preset interference cases."""
    try:
        n_games, probs = CASE_PRESETS[case]
    except KeyError:
        raise ConfigError(f"unknown case {case!r}; expected one of {sorted(CASE_PRESETS)}") from None
    return SimulationConfig(**{"n_games": n_games, "treated_count_probs": probs, **overrides})


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named stage of the pipeline."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


def assign_treatments(config: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    z = (rng.random(config.n_players) < config.p_treat).astype(np.int8)
    n_t = int(z.sum())
    if n_t == 0 or n_t == config.n_players:
        empty = "treatment" if n_t == 0 else "control"
        raise DegenerateAssignmentError(
            f"the {empty} group is empty (n_players={config.n_players}, p_treat={config.p_treat}); "
            "use more players or a p_treat strictly inside (0, 1)"
        )
    return z


def draw_covariates(config: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    a, b = config.covariate_params
    return rng.beta(a, b, size=config.n_players)


def matching_weights(x_group: np.ndarray) -> np.ndarray:
    """Unnormalised selection weights within one assignment group.

    Mostly uniform, with a small tilt towards high-covariate players.  The sum
    in the tilt term runs over the group being sampled from.
    """
    x_group = np.asarray(x_group, dtype=float)
    return 0.8 / len(x_group) + 0.2 * (x_group / x_group.sum()) ** 2


def all_control_weights(x_control: np.ndarray, cutoff: float = 0.2) -> np.ndarray:
    """Control weights for games without any treated player: only low-covariate players."""
    x_control = np.asarray(x_control, dtype=float)
    return x_control * (x_control < cutoff)


def draw_treated_counts(config: SimulationConfig, n_games: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(config.team_size + 1, size=n_games, p=config.treated_count_probs)


def _first_k_by_key(keys: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest keys per row, in increasing key order."""
    part = np.argpartition(keys, k - 1, axis=1)[:, :k]
    order = np.take_along_axis(keys, part, axis=1).argsort(axis=1, kind="stable")
    return np.take_along_axis(part, order, axis=1)


def simulate_matching(
    z: np.ndarray, x: np.ndarray, config: SimulationConfig, rng: np.random.Generator
) -> np.ndarray:
    """Form ``config.n_games`` rosters; returns an ``(n_games, team_size)`` array of player positions.

    Within a game players are drawn without replacement with probability
    proportional to their weight (exponential-race keys ``E / w``; the k
    smallest keys are a successive weighted sample).  Games are independent.
    Treated members fill the first slots of each roster.
    """
    z = np.asarray(z)
    x = np.asarray(x, dtype=float)
    team = config.team_size
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    probs = np.asarray(config.treated_count_probs)
    max_t = int(np.flatnonzero(probs > 0).max())
    max_c = team - int(np.flatnonzero(probs > 0).min())
    if len(treated) < max_t or len(control) < max_c:
        raise ConfigError(
            f"need at least {max_t} treated and {max_c} control players, got {len(treated)} and {len(control)}"
        )

    w_t = matching_weights(x[treated])
    w_c = matching_weights(x[control])
    w_0 = all_control_weights(x[control])
    if w_t.sum() <= 0 or w_c.sum() <= 0:
        raise ConfigError("matching weights sum to zero")

    n_t = draw_treated_counts(config, config.n_games, rng)
    need_redraw = n_t == 0
    if need_redraw.any() and np.count_nonzero(w_0) < team:
        if probs[0] >= 1:
            raise ConfigError("all-control games requested but too few low-covariate control players")
        cond = probs[1:] / probs[1:].sum()
        log.info(
            "only %d control players eligible for all-control games; redrawing %d games",
            np.count_nonzero(w_0), int(need_redraw.sum()),
        )
        n_t[need_redraw] = 1 + rng.choice(team, size=int(need_redraw.sum()), p=cond)

    rosters = np.empty((config.n_games, team), dtype=np.int64)
    with np.errstate(divide="ignore"):
        inv_t, inv_c, inv_0 = 1.0 / w_t, 1.0 / w_c, 1.0 / w_0
    for start in range(0, config.n_games, _CHUNK):
        nt = n_t[start:start + _CHUNK]
        g = len(nt)
        keys_t = rng.standard_exponential((g, len(treated))) * inv_t
        keys_c = rng.standard_exponential((g, len(control))) * np.where((nt == 0)[:, None], inv_0, inv_c)
        block = np.empty((g, team), dtype=np.int64)
        if nt.max() > 0:
            picks_t = treated[_first_k_by_key(keys_t, int(nt.max()))]
        picks_c = control[_first_k_by_key(keys_c, int(team - nt.min()))]
        for r in range(g):
            k = nt[r]
            if k:
                block[r, :k] = picks_t[r, :k]
            block[r, k:] = picks_c[r, : team - k]
        rosters[start:start + g] = block
    return rosters


def outcome_mean(m, x):
    """Mean outcome for a player with ``m`` treated games and covariate ``x``."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    root = np.sqrt(m)
    return 0.5 * root + 2 * x + 0.5 * x * (x > 0.5) + 0.5 * root * x


def generate_outcomes(m: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exponential outcomes with mean :func:`outcome_mean` (rate ``1 / mean``)."""
    return rng.exponential(outcome_mean(m, x))


def true_mu(x):
    """Expected outcome without any treated game."""
    return outcome_mean(0, x)


def true_tau(m, covariate_params: tuple[float, float] = (0.5, 0.5)):
    """Population effect of ``m`` treated games versus none.

    ``E[0.5 sqrt(m) (1 + X)]`` with ``X ~ Beta(a, b)``; 0.75 sqrt(m) for the default.
    """
    a, b = covariate_params
    return 0.5 * np.sqrt(np.asarray(m, dtype=float)) * (1 + a / (a + b))


def empirical_tau(m, x) -> float:
    """Average potential-outcome contrast over a concrete covariate sample."""
    x = np.asarray(x, dtype=float)
    return float(np.mean(outcome_mean(m, x) - outcome_mean(0, x)))


@dataclass(frozen=True)
class SimulatedExperiment:
    dataset: ExperimentDataset
    config: SimulationConfig
    treated_counts: np.ndarray = field(repr=False)


def simulate_experiment(config: SimulationConfig) -> ExperimentDataset:
    return simulate_experiment_full(config).dataset


def simulate_experiment_full(config: SimulationConfig) -> SimulatedExperiment:
    seed = config.seed
    z = assign_treatments(config, rng_stream(seed, "assignment"))
    x = draw_covariates(config, rng_stream(seed, "covariates"))
    rosters = simulate_matching(z, x, config, rng_stream(seed, "matching"))
    m = exposure_counts(rosters, z)
    y = generate_outcomes(m, x, rng_stream(seed, "outcomes"))
    width = len(str(max(config.n_players - 1, 0)))
    gwidth = len(str(max(config.n_games - 1, 0)))
    ds = ExperimentDataset(
        ids=tuple(f"p{i:0{width}d}" for i in range(config.n_players)),
        z=z,
        x=x,
        y=y,
        m=m,
        session_ids=tuple(f"g{j:0{gwidth}d}" for j in range(config.n_games)),
        rosters=rosters,
    )
    n_t = (z[rosters] == 1).sum(axis=1) if config.n_games else np.zeros(0, dtype=np.int64)
    return SimulatedExperiment(dataset=ds, config=config, treated_counts=n_t)


def inclusion_rates(
    z: np.ndarray, x: np.ndarray, config: SimulationConfig, n_replays: int, seed: int
) -> np.ndarray:
    """Per-player probability of sitting in a treated game, by replaying the matching.

    The assignment and covariates are held fixed; only the matching is
    re-run ``n_replays`` times.
    """
    z = np.asarray(z)
    rng = rng_stream(seed, "oracle")
    counts = np.zeros(len(z), dtype=np.int64)
    for _ in range(n_replays):
        counts += exposure_counts(simulate_matching(z, x, config, rng), z)
    return counts / (n_replays * max(config.n_games, 1))


def oracle_propensities(
    dataset: ExperimentDataset, config: SimulationConfig, n_replays: int = 50
) -> np.ndarray:
    """Exposure-level probabilities for every player, columns ``0 .. truncate_at``.

    Games are independent given the assignment and covariates, so a player's
    exposure is Binomial(n_games, q) with ``q`` the per-game chance of being
    in a treated game; ``q`` is estimated by replaying the matching.  The
    result conditions on each player's own (X, Z); since Z is randomised this
    balances on X for both the pooled and the treated-only populations.
    """
    q = inclusion_rates(dataset.z, dataset.x[:, 0], config, n_replays, config.seed)
    return _binomial_levels(q, config.n_games, config.truncate_at)


def _binomial_levels(q: np.ndarray, n_games: int, threshold: int) -> np.ndarray:
    k = np.arange(threshold)
    probs = np.empty((len(q), threshold + 1))
    probs[:, :threshold] = stats.binom.pmf(k[None, :], n_games, q[:, None])
    probs[:, threshold] = stats.binom.sf(threshold - 1, n_games, q)
    return probs


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(config, seed=int(seed))


def treated_support(dataset: ExperimentDataset, threshold: int | None) -> dict[int, float]:
    """Share of treated players at each (truncated) exposure level."""
    lv = truncate_levels(dataset.m[dataset.z == 1], threshold)
    counts = np.bincount(lv)
    return {int(k): float(c / lv.size) for k, c in enumerate(counts) if c}
