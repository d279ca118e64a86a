"""Profit analysis: per-type profit series, density and box summaries,
normality testing and the one-sided rank-sum test.

The unit of the hypothesis test is one observation per race per bettor
type (the mean net profit of that type's bettors in the race).  A
per-bettor alternative (each bettor's total over the session) is
available through ``unit="agent_total"``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from statistics import NormalDist
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .datagen import RaceRecord, profit_by_bettor

_NORMAL = NormalDist()


# -- kernel density and box statistics -----------------------------------------

def silverman_bandwidth(sample) -> float:
    """``0.9 * min(sd, IQR/1.34) * n^(-1/5)``; a zero IQR falls back to the sd."""
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise ValueError("bandwidth needs at least 2 observations")
    sd = float(np.std(x, ddof=1))
    q1, q3 = np.percentile(x, [25, 75])
    spread = min(sd, (q3 - q1) / 1.34) if q3 > q1 else sd
    h = 0.9 * spread * x.size ** (-0.2)
    if not h > 0:
        raise ValueError("degenerate sample: all values are equal, bandwidth would be 0")
    return h


def gaussian_kde(sample, grid, bandwidth: Optional[float] = None) -> np.ndarray:
    """Gaussian kernel density of ``sample`` evaluated on ``grid``."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    z = (np.asarray(grid, dtype=float)[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))


def kde_grid(samples: Iterable[Sequence[float]], points: int = 512, pad: float = 3.0) -> np.ndarray:
    """Common evaluation grid covering every sample plus ``pad`` bandwidths on each side."""
    lo, hi, widest = np.inf, -np.inf, 0.0
    for s in samples:
        s = np.asarray(s, dtype=float)
        lo, hi = min(lo, s.min()), max(hi, s.max())
        widest = max(widest, silverman_bandwidth(s))
    return np.linspace(lo - pad * widest, hi + pad * widest, points)


@dataclass(frozen=True)
class BoxStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def box_stats(sample) -> BoxStats:
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size == 0:
        raise ValueError("empty sample")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = tuple(float(v) for v in x[(x < lo_fence) | (x > hi_fence)])
    return BoxStats(float(x[0]), q1, med, q3, float(x[-1]), float(inside[0]), float(inside[-1]), outliers)


# -- Shapiro-Wilk ----------------------------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coef: Sequence[float], x: float) -> float:
    out = 0.0
    for c in reversed(coef):
        out = out * x + c
    return out


def shapiro_coefficients(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk weights, ascending order."""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    m = np.array([_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    mm = float(m @ m)
    u = 1.0 / math.sqrt(n)
    a = np.empty(n)
    an = m[-1] / math.sqrt(mm) + _poly(_C1, u)
    if n > 5:
        an1 = m[-2] / math.sqrt(mm) + _poly(_C2, u)
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


@dataclass(frozen=True)
class ShapiroResult:
    W: float
    p: float


def shapiro_wilk(sample) -> ShapiroResult:
    """W statistic and upper-tail p-value using Royston's normalising transforms."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if not 3 <= n <= 5000:
        raise ValueError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    ssq = float(np.sum((x - x.mean()) ** 2))
    if ssq <= 0:
        raise ValueError("all values are equal")
    a = shapiro_coefficients(n)
    w = min(float(a @ x) ** 2 / ssq, 1.0)
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return ShapiroResult(w, min(max(p, 0.0), 1.0))
    if w >= 1.0:
        return ShapiroResult(w, 1.0)
    y = math.log(1.0 - w)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return ShapiroResult(w, 0.0)
        y = -math.log(gamma - y)
        mu, sigma = _poly(_C3, n), math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu, sigma = _poly(_C5, ln), math.exp(_poly(_C6, ln))
    p = 1.0 - _NORMAL.cdf((y - mu) / sigma)
    return ShapiroResult(w, p)


# -- Mann-Whitney U ---------------------------------------------------------------

@dataclass(frozen=True)
class UTestResult:
    U: float
    z: float
    p_one_sided: float
    method: str  # "exact" or "approximate"


def u_statistic(x, y) -> float:
    """Pairs with ``x > y`` plus half the tied pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x[:, None] - y[None, :]
    return float(np.sum(d > 0) + 0.5 * np.sum(d == 0))


@lru_cache(maxsize=None)
def _u_counts(n: int, m: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U = 0..n*m (no ties)."""
    if n == 0 or m == 0:
        return (1,)
    a = _u_counts(n - 1, m)  # largest value is an x: it beats all m ys
    b = _u_counts(n, m - 1)  # largest value is a y: contributes nothing
    out = [0] * (n * m + 1)
    for u, c in enumerate(a):
        out[u + m] += c
    for u, c in enumerate(b):
        out[u] += c
    return tuple(out)


def exact_u_sf(u: float, n: int, m: int) -> float:
    """P(U >= u) under the null, from exact arrangement counts."""
    counts = _u_counts(n, m)
    k = math.ceil(u - 1e-9)
    return sum(counts[k:]) / math.comb(n + m, n)


def mann_whitney_u(x, y, alternative: str = "x_greater", method: str = "auto") -> UTestResult:
    """One-sided rank-sum test of ``x`` tending to exceed ``y``.

    ``method="auto"`` uses the exact null distribution when ``n + m <= 20``
    and nothing is tied, and the tie-corrected normal approximation with a
    0.5 continuity correction otherwise.
    """
    if alternative not in ("x_greater", "x_less"):
        raise ValueError("alternative must be 'x_greater' or 'x_less'")
    if alternative == "x_less":
        r = mann_whitney_u(y, x, "x_greater", method)
        return UTestResult(float(np.size(x) * np.size(y)) - r.U, -r.z, r.p_one_sided, r.method)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise ValueError("both samples must be nonempty")
    u = u_statistic(x, y)
    pooled = np.concatenate([x, y])
    _, tie_sizes = np.unique(pooled, return_counts=True)
    tied = bool(np.any(tie_sizes > 1))
    if method not in ("auto", "exact", "approximate"):
        raise ValueError("method must be 'auto', 'exact' or 'approximate'")
    if method == "exact" and tied:
        raise ValueError("the exact null distribution assumes no ties")
    N = n + m
    mu = n * m / 2.0
    tie_term = float(np.sum(tie_sizes.astype(float) ** 3 - tie_sizes)) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12.0 * ((N + 1) - tie_term)
    sd = math.sqrt(max(var, 0.0))
    z = (u - mu - 0.5) / sd if sd > 0 else 0.0
    if method == "exact" or (method == "auto" and N <= 20 and not tied):
        return UTestResult(u, z, exact_u_sf(u, n, m), "exact")
    p = 1.0 - _NORMAL.cdf(z) if sd > 0 else 1.0
    return UTestResult(u, z, min(max(p, 0.0), 1.0), "approximate")


# -- profit series -------------------------------------------------------------------

@dataclass
class ProfitSeries:
    agent_type: str
    per_race: list[float] = field(default_factory=list)  # mean net profit (currency units) per race

    @property
    def cumulative(self) -> list[float]:
        return np.cumsum(self.per_race).tolist()


def profit_series(records: Iterable[RaceRecord]) -> dict[str, ProfitSeries]:
    """Per-race mean net profit of each bettor type, in race order."""
    out: dict[str, ProfitSeries] = {}
    for rec in records:
        by_type: dict[str, list[int]] = {}
        for bid, cents in profit_by_bettor(rec).items():
            by_type.setdefault(rec.bettors[bid], []).append(cents)
        for kind, values in by_type.items():
            out.setdefault(kind, ProfitSeries(kind)).per_race.append(float(np.mean(values)) / 100.0)
    return out


def agent_totals(records: Iterable[RaceRecord]) -> dict[str, list[float]]:
    """Each bettor's total net profit over the session, grouped by type."""
    totals: dict[int, int] = {}
    kinds: dict[int, str] = {}
    for rec in records:
        for bid, cents in profit_by_bettor(rec).items():
            totals[bid] = totals.get(bid, 0) + cents
            kinds[bid] = rec.bettors[bid]
    out: dict[str, list[float]] = {}
    for bid in sorted(totals):
        out.setdefault(kinds[bid], []).append(totals[bid] / 100.0)
    return out


@dataclass(frozen=True)
class Comparison:
    target: str
    other: str
    U: float
    p_greater: float      # target more profitable than other
    p_less: float         # target less profitable than other
    method: str
    reject: bool          # null rejected in favour of target at ``alpha``


def compare_types(samples: Mapping[str, Sequence[float]], target: str, alpha: float = 0.05) -> list[Comparison]:
    """One-sided rank-sum tests of ``target`` against every other type, both directions."""
    rows = []
    for other in sorted(samples):
        if other == target:
            continue
        fwd = mann_whitney_u(samples[target], samples[other], "x_greater")
        rev = mann_whitney_u(samples[other], samples[target], "x_greater")
        rows.append(Comparison(target, other, fwd.U, fwd.p_one_sided, rev.p_one_sided, fwd.method,
                               fwd.p_one_sided < alpha))
    return rows


# -- delimited-text tables -------------------------------------------------------------

def _write(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_profit_series(path, series: Mapping[str, ProfitSeries]) -> None:
    kinds = sorted(series)
    n = max((len(series[k].per_race) for k in kinds), default=0)
    rows = ([i] + [_fmt(series[k].per_race[i]) for k in kinds] + [_fmt(series[k].cumulative[i]) for k in kinds]
            for i in range(n))
    _write(path, ["race"] + kinds + [f"{k}_cumulative" for k in kinds], rows)


def write_kde(path, samples: Mapping[str, Sequence[float]], points: int = 512) -> None:
    kinds = sorted(samples)
    grid = kde_grid([samples[k] for k in kinds], points)
    dens = [gaussian_kde(samples[k], grid) for k in kinds]
    _write(path, ["x"] + kinds, ([_fmt(x)] + [_fmt(d[i]) for d in dens] for i, x in enumerate(grid)))


def write_box(path, samples: Mapping[str, Sequence[float]]) -> None:
    rows = []
    for k in sorted(samples):
        b = box_stats(samples[k])
        rows.append([k] + [_fmt(v) for v in (b.min, b.q1, b.median, b.q3, b.max, b.whisker_lo, b.whisker_hi)]
                    + [" ".join(_fmt(v) for v in b.outliers)])
    _write(path, ["type", "min", "q1", "median", "q3", "max", "whisker_lo", "whisker_hi", "outliers"], rows)


def write_normality(path, samples: Mapping[str, Sequence[float]]) -> None:
    rows = []
    for k in sorted(samples):
        r = shapiro_wilk(samples[k])
        rows.append([k, len(samples[k]), _fmt(r.W), _fmt(r.p), r.p < 0.05])
    _write(path, ["type", "n", "W", "p", "non_normal"], rows)


def write_comparisons(path, rows: Sequence[Comparison]) -> None:
    _write(path, ["pairing", "U", "p", "p_reverse", "method", "reject"],
           ([f"{r.target} > {r.other}", _fmt(r.U), _fmt(r.p_greater), _fmt(r.p_less), r.method, r.reject]
            for r in rows))
