"""Efficiency-gain analysis: summaries, rank tests, bootstrap, discount fit.

The Mann-Whitney-Wilcoxon test uses the exact permutation distribution of
the U statistic whenever n_x*n_y <= 10^4 and a tie-corrected normal
approximation with continuity correction beyond that. The exact branch
handles ties by dynamic programming over tie groups, which reproduces full
enumeration without iterating over every label assignment.
"""

from __future__ import annotations

import bisect
import itertools
import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import ConfigError, GameConfig
from .simulator import BatchSpec, Dataset, run_batch

EXACT_LIMIT = 10_000


def efficiency_gain(score: float, s_rand: float) -> float:
    """Relative improvement over the ex-ante random benchmark."""
    if s_rand <= 0:
        raise ValueError(f"degenerate random benchmark {s_rand}; need S_rand > 0")
    return (score - s_rand) / s_rand


# -- summaries -------------------------------------------------------------

def _median(sorted_vals: Sequence[float]) -> float:
    n = len(sorted_vals)
    mid = n // 2
    if n % 2:
        return float(sorted_vals[mid])
    return 0.5 * (sorted_vals[mid - 1] + sorted_vals[mid])


def decile_slices(n: int) -> list[slice]:
    """Ten contiguous groups over a sorted sample of size n.

    When n is not divisible by 10 the leftover elements go to the extreme
    groups first (1st, 10th, 2nd, 9th, ...), so the tails are never the
    short ones.
    """
    if n < 10:
        raise ValueError(f"need at least 10 values for deciles, got {n}")
    base, extra = divmod(n, 10)
    sizes = [base] * 10
    order = [0, 9, 1, 8, 2, 7, 3, 6, 4, 5]
    for j in range(extra):
        sizes[order[j]] += 1
    out = []
    start = 0
    for s in sizes:
        out.append(slice(start, start + s))
        start += s
    return out


@dataclass
class EfficiencyReport:
    treatment: str
    gains: list[float]
    median: float
    lower_half_median: float
    upper_half_median: float
    decile_means: Optional[list[float]]   # None when n < 10
    non_adopter_count: Optional[int]

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment,
            "n": len(self.gains),
            "median": self.median,
            "lower_half_median": self.lower_half_median,
            "upper_half_median": self.upper_half_median,
            "decile_means": self.decile_means,
            "non_adopter_count": self.non_adopter_count,
        }


def summarize(
    gains: Sequence[float],
    treatment: str = "",
    non_adopter_count: Optional[int] = None,
) -> EfficiencyReport:
    """Median, half-medians and decile means of a gain sample.

    Halves split at the median rank; for odd n the middle element belongs
    to neither half. Deciles are reported only for n >= 10.
    """
    if not gains:
        raise ValueError("empty gain sample")
    ordered = sorted(gains)
    n = len(ordered)
    half = n // 2
    lower = ordered[:half]
    upper = ordered[n - half:]
    if half == 0:
        lower = upper = ordered
    deciles = None
    if n >= 10:
        deciles = [
            float(np.mean(ordered[s])) for s in decile_slices(n)
        ]
    return EfficiencyReport(
        treatment=treatment,
        gains=list(gains),
        median=_median(ordered),
        lower_half_median=_median(lower),
        upper_half_median=_median(upper),
        decile_means=deciles,
        non_adopter_count=non_adopter_count,
    )


# -- Mann-Whitney-Wilcoxon -------------------------------------------------

@dataclass
class TestResult:
    u: float
    p_value: float
    n_x: int
    n_y: int
    method: str          # exact | normal

    def __post_init__(self):
        assert 0.0 <= self.u <= self.n_x * self.n_y + 1e-9
        assert 0.0 <= self.p_value <= 1.0


def _u_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    """U = pairwise wins of x over y with half credit for ties."""
    u = 0.0
    ys = sorted(y)
    for v in x:
        lo = bisect.bisect_left(ys, v)
        hi = bisect.bisect_right(ys, v)
        u += lo + 0.5 * (hi - lo)
    return u


def _exact_two_u_distribution(groups: list[tuple[int, int]], n_x: int):
    """Weights over 2U for x-labelings of tie groups.

    ``groups`` lists (pooled count, cumulative count before the group) in
    ascending value order. Returns a dict or array mapping 2U -> number of
    labelings, total sum C(n, n_x). Exact integers below a size threshold,
    float64 otherwise (cell counts stay far inside float precision for the
    sizes the exact branch accepts).
    """
    n = sum(c for c, _ in groups)
    n_y = n - n_x
    two_u_max = 2 * n_x * n_y
    small = n_x * n_y <= 900

    if small:
        dp: dict[tuple[int, int], int] = {(0, 0): 1}
        for c, before in groups:
            nxt: dict[tuple[int, int], int] = {}
            for (t, v), ways in dp.items():
                for a in range(0, min(c, n_x - t) + 1):
                    dv = 2 * a * (before - t) + a * (c - a)
                    key = (t + a, v + dv)
                    nxt[key] = nxt.get(key, 0) + ways * math.comb(c, a)
            dp = nxt
        out = np.zeros(two_u_max + 1)
        for (t, v), ways in dp.items():
            if t == n_x:
                out[v] += float(ways)
        return out

    dp = np.zeros((n_x + 1, two_u_max + 1))
    dp[0, 0] = 1.0
    for c, before in groups:
        nxt = np.zeros_like(dp)
        for a in range(0, min(c, n_x) + 1):
            comb = math.comb(c, a)
            base = 2 * a * before + a * (c - a)
            for t in range(0, n_x - a + 1):
                # t <= count before this group, so the shift stays nonnegative
                dv = base - 2 * a * t
                row = dp[t]
                if not row.any():
                    continue
                width = two_u_max + 1 - dv
                if width > 0:
                    nxt[t + a, dv:] += comb * row[:width]
        dp = nxt
    return dp[n_x]


def _exact_p_value(x: Sequence[float], y: Sequence[float], u: float) -> float:
    pooled = sorted(list(x) + list(y))
    groups = []
    before = 0
    for _, grp in itertools.groupby(pooled):
        c = len(list(grp))
        groups.append((c, before))
        before += c
    n_x, n_y = len(x), len(y)
    weights = _exact_two_u_distribution(groups, n_x)
    total = weights.sum()
    nm2 = 2 * n_x * n_y
    two_u = round(2 * u)
    lo = min(two_u, nm2 - two_u)
    hi = nm2 - lo
    p = (weights[: lo + 1].sum() + weights[hi:].sum()) / total
    return float(min(1.0, p))


def _normal_p_value(x: Sequence[float], y: Sequence[float], u: float) -> float:
    n_x, n_y = len(x), len(y)
    n = n_x + n_y
    mu = n_x * n_y / 2.0
    tie_counts = Counter(list(x) + list(y)).values()
    tie_term = sum(t ** 3 - t for t in tie_counts) / (n * (n - 1))
    var = n_x * n_y / 12.0 * ((n + 1) - tie_term)
    if var <= 0 or u == mu:
        return 1.0
    # Continuity correction pulls the statistic half a unit toward the mean.
    shift = 0.5 if u < mu else -0.5
    z = (u - mu + shift) / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


def mww_test(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Two-sided rank test on two independent samples."""
    if not len(x) or not len(y):
        raise ValueError("both samples must be nonempty")
    u = _u_statistic(x, y)
    if len(x) * len(y) <= EXACT_LIMIT:
        p = _exact_p_value(x, y, u)
        method = "exact"
    else:
        p = _normal_p_value(x, y, u)
        method = "normal"
    return TestResult(u=u, p_value=p, n_x=len(x), n_y=len(y), method=method)


# -- bootstrap -------------------------------------------------------------

def bootstrap_ci(
    values: Sequence[float],
    statistic: Callable[[np.ndarray], float] = np.median,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile interval of a statistic over resamples with replacement.

    Endpoints are order statistics of the resampled values, so the same
    seed always returns the same interval.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("empty sample")
    rng = np.random.default_rng(seed)
    stats = np.empty(n_boot)
    for b in range(n_boot):
        stats[b] = statistic(arr[rng.integers(0, arr.size, arr.size)])
    stats.sort()
    q_lo = (1.0 - level) / 2.0
    q_hi = 1.0 - q_lo
    lo_idx = min(n_boot - 1, max(0, math.ceil(q_lo * n_boot) - 1))
    hi_idx = min(n_boot - 1, max(0, math.ceil(q_hi * n_boot) - 1))
    return float(stats[lo_idx]), float(stats[hi_idx])


# -- discount fitting ------------------------------------------------------

def simulated_median_gain(
    configs: Sequence[GameConfig],
    discount: float,
    n_games: int,
    base_seed: int,
) -> float:
    """Pooled median gain of all-policy populations at one discount."""
    from .agents import AgentSpec
    from .equilibrium import SolverOptions, solve_cached

    pooled: list[float] = []
    for idx, config in enumerate(configs):
        result = solve_cached(config, discount)
        spec = BatchSpec(
            config=config,
            population=[AgentSpec("policy", config.n_participants)],
            n_games=n_games,
            base_seed=base_seed + 100_000 * idx,
            policy=result.policy,
        )
        pooled.extend(run_batch(spec).gains())
    return _median(sorted(pooled))


def fit_discount(
    observed_median: float,
    config: Union[GameConfig, Sequence[GameConfig]],
    alpha_grid: Sequence[float],
    n_games: int = 150,
    base_seed: int = 7000,
    tol_pp: float = 2.0,
) -> Optional[tuple[float, float]]:
    """Discount factors whose simulated median matches an observed one.

    Each grid point solves the equilibrium, simulates a batch per config,
    and pools the gains; the returned interval spans every alpha whose
    pooled median lies within tol_pp percentage points of the observation.
    None means no grid point matched.
    """
    configs = [config] if isinstance(config, GameConfig) else list(config)
    if list(alpha_grid) != sorted(alpha_grid):
        raise ValueError("alpha_grid must be sorted ascending")
    matched = []
    for alpha in alpha_grid:
        med = simulated_median_gain(configs, alpha, n_games, base_seed)
        if abs(med - observed_median) <= tol_pp / 100.0:
            matched.append(alpha)
    if not matched:
        return None
    return (min(matched), max(matched))


# -- decile comparison -----------------------------------------------------

@dataclass
class DecileComparison:
    karma_means: list[float]
    random_means: list[float]
    random_ci: list[tuple[float, float]]
    deciles_at_or_above_mean: int
    deciles_at_or_above_upper: int


def _mechanism_key(config: GameConfig) -> GameConfig:
    return replace(config, seed=0, label="")


def decile_comparison(
    karma_dataset: Dataset,
    random_dataset: Dataset,
    n_boot: int = 200,
    level: float = 0.95,
    seed: int = 0,
) -> DecileComparison:
    """Decile-by-decile gains of a karma run against the random benchmark."""
    if _mechanism_key(karma_dataset.config) != _mechanism_key(random_dataset.config):
        raise ConfigError("datasets come from different game configurations")

    def decile_means(gains: np.ndarray) -> np.ndarray:
        ordered = np.sort(gains)
        return np.array([ordered[s].mean() for s in decile_slices(len(ordered))])

    karma = np.asarray(karma_dataset.gains())
    rand = np.asarray(random_dataset.gains())
    karma_means = decile_means(karma)
    random_means = decile_means(rand)

    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot, 10))
    for b in range(n_boot):
        boots[b] = decile_means(rand[rng.integers(0, rand.size, rand.size)])
    q_lo = (1.0 - level) / 2.0
    lo = np.quantile(boots, q_lo, axis=0)
    hi = np.quantile(boots, 1.0 - q_lo, axis=0)

    return DecileComparison(
        karma_means=[float(v) for v in karma_means],
        random_means=[float(v) for v in random_means],
        random_ci=[(float(a), float(b)) for a, b in zip(lo, hi)],
        deciles_at_or_above_mean=int((karma_means >= random_means).sum()),
        deciles_at_or_above_upper=int((karma_means >= hi).sum()),
    )
