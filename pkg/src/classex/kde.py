"""Kernel-density extrapolation baseline.

For each test observation the wrong-class scores are smoothed with a
Gaussian kernel; the smoothed CDF at the true score estimates the chance of
beating one random competitor, and raising it to ``K - 1`` gives the chance
of beating ``K - 1`` of them.  Bandwidths come from unbiased or biased
cross-validation computed on binned pair distances, following the
conventions of R's ``bw.ucv`` / ``bw.bcv``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .ranks import ScoreTable

N_BINS = 1000
DELTA_MAX = 1000.0
GRID_POINTS = 61
SQRT_PI = math.sqrt(math.pi)


class BandwidthError(ValueError):
    """The samples do not have enough spread for cross-validated bandwidth selection."""


@dataclass(frozen=True)
class KdeConfig:
    """``rule`` is ``ucv``, ``bcv`` or ``fixed`` (then ``bandwidth`` is required).

    ``pool`` chooses whether one bandwidth is selected per test observation
    (``observation``) or per true class from the pooled wrong-class scores of
    its observations (``class``).
    """

    rule: str = "ucv"
    bandwidth: float | None = None
    pool: str = "observation"

    def __post_init__(self):
        if self.rule not in ("ucv", "bcv", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == "fixed" and not (self.bandwidth is not None and self.bandwidth > 0):
            raise ValueError("fixed bandwidth must be > 0")
        if self.pool not in ("observation", "class"):
            raise ValueError(f"unknown pooling mode {self.pool!r}")

    @property
    def name(self) -> str:
        return "kde-fixed" if self.rule == "fixed" else f"kde-{self.rule}"


@dataclass(frozen=True, eq=False)
class KdeResult:
    Ks: np.ndarray
    accuracy: np.ndarray       # one value per K
    win_probability: np.ndarray  # acc_2 per (class, obs)
    bandwidths: np.ndarray     # per (class, obs)
    fallbacks: int             # selections that fell back to the normal reference rule


def oversmoothed_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1.144 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def reference_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    return 0.9 * spread * x.size ** (-0.2)


def binned_pair_counts(x, nb: int = N_BINS):
    """Bin width and counts of pairs ``i < j`` by absolute bin-index difference."""
    x = np.asarray(x, dtype=float)
    lo, hi = x.min(), x.max()
    width = 1.01 * (hi - lo) / nb
    idx = np.minimum(np.floor((x - lo) / width).astype(np.int64), nb - 1)
    c = np.bincount(idx, minlength=nb).astype(float)
    size = 2 * nb
    freq = np.fft.rfft(c, size)
    auto = np.rint(np.fft.irfft(freq * np.conj(freq), size)[:nb])
    auto[0] = (auto[0] - x.size) / 2.0
    return width, auto


def ucv_criterion(h, n: int, width: float, counts) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=float))[:, None]
    delta = (np.arange(counts.size) * width / h) ** 2
    term = np.exp(-delta / 4.0) - math.sqrt(8.0) * np.exp(-delta / 2.0)
    term[delta >= DELTA_MAX] = 0.0
    s = term @ counts
    return (0.5 + s / n) / (n * h[:, 0] * SQRT_PI)


def bcv_criterion(h, n: int, width: float, counts) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=float))[:, None]
    delta = (np.arange(counts.size) * width / h) ** 2
    term = np.exp(-delta / 4.0) * (delta * delta - 12.0 * delta + 12.0)
    term[delta >= DELTA_MAX] = 0.0
    s = term @ counts
    return (1.0 + s / (32.0 * n)) / (2.0 * n * h[:, 0] * SQRT_PI)


_CRITERIA = {"ucv": ucv_criterion, "bcv": bcv_criterion}


def select_bandwidth(samples, rule: str = "ucv", nb: int = N_BINS) -> float:
    """Cross-validated Gaussian-kernel bandwidth.

    The criterion is scanned on a log grid over ``[0.1, 10]`` times the
    oversmoothed bandwidth and the best grid point is polished with bounded
    Brent search between its neighbours.
    """
    if rule not in _CRITERIA:
        raise ValueError(f"unknown rule {rule!r}")
    x = np.asarray(samples, dtype=float).ravel()
    if np.unique(x).size < 3:
        raise BandwidthError("bandwidth selection needs at least 3 distinct samples")
    crit = _CRITERIA[rule]
    n = x.size
    width, counts = binned_pair_counts(x, nb)
    h_os = oversmoothed_bandwidth(x)
    log_grid = np.linspace(math.log(0.1 * h_os), math.log(10.0 * h_os), GRID_POINTS)
    vals = crit(np.exp(log_grid), n, width, counts)
    best = int(np.argmin(vals))
    lo = log_grid[max(best - 1, 0)]
    hi = log_grid[min(best + 1, GRID_POINTS - 1)]
    res = minimize_scalar(lambda t: float(crit(math.exp(t), n, width, counts)[0]),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    t = res.x if res.fun <= vals[best] else log_grid[best]
    return math.exp(t)


def _fallback_bandwidth(samples, everything) -> float:
    for pool in (samples, everything):
        bw = reference_bandwidth(pool)
        if bw > 0:
            return bw
    return 1.0


def win_probability(true_score: float, wrong_scores, bandwidth: float) -> float:
    """Smoothed CDF of the wrong-class scores at the true score."""
    z = (true_score - np.asarray(wrong_scores, dtype=float)) / bandwidth
    return math.fsum(ndtr(z)) / z.size


def _wrong_scores(st: ScoreTable) -> np.ndarray:
    k1 = st.k1
    mask = ~np.eye(k1, dtype=bool)
    # (k1, r, k1 - 1): drop the true-class column of each row
    return st.scores.transpose(0, 2, 1)[mask].reshape(k1, k1 - 1, st.r).transpose(0, 2, 1)


def kde_curve(st: ScoreTable, Ks, cfg: KdeConfig = KdeConfig(), threads: int = 1) -> KdeResult:
    """KDE accuracy estimates for every ``K`` in ``Ks`` from one set of bandwidths."""
    Ks = np.atleast_1d(np.asarray(Ks, dtype=np.int64))
    if Ks.size == 0 or Ks.min() < 2:
        raise ValueError("K must be >= 2")
    wrong = _wrong_scores(st)
    correct = st.correct_scores()
    everything = st.scores.ravel()

    def class_bandwidths(i):
        if cfg.rule == "fixed":
            return [cfg.bandwidth] * st.r, 0
        if cfg.pool == "class":
            pools = [wrong[i].ravel()] * st.r
        else:
            pools = [wrong[i, j] for j in range(st.r)]
        out, fails = [], 0
        cache = {}
        for pool in pools:
            key = id(pool)
            if key not in cache:
                try:
                    cache[key] = (select_bandwidth(pool, cfg.rule), 0)
                except BandwidthError:
                    cache[key] = (_fallback_bandwidth(pool, everything), 1)
                fails += cache[key][1]
            out.append(cache[key][0])
        return out, fails

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_class = list(pool.map(class_bandwidths, range(st.k1)))
    else:
        per_class = [class_bandwidths(i) for i in range(st.k1)]
    bw = np.array([row for row, _ in per_class])
    fallbacks = sum(f for _, f in per_class)
    acc2 = ndtr((correct[:, :, None] - wrong) / bw[:, :, None]).mean(axis=2)
    flat = acc2.ravel()
    acc = np.array([math.fsum(flat ** (K - 1)) / flat.size for K in Ks])
    return KdeResult(Ks, acc, acc2, bw, fallbacks)


def kde_extrapolate(st: ScoreTable, K: int, cfg: KdeConfig = KdeConfig(), threads: int = 1) -> float:
    """Average of ``acc_2 ** (K - 1)`` over all test observations."""
    return float(kde_curve(st, [K], cfg, threads).accuracy[0])
