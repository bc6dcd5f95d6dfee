"""Regression extrapolation of the accuracy curve (ClassExReg).

``1 - ATA_k`` is regressed on the moment constants ``H[l, k]`` of a basis for
the discriminability function; the fitted coefficients give the accuracy at
any larger ``k`` through the same moments.  The basis itself is picked by
extrapolating from half of the classes to all of them.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import DEFAULT_H_GRID, DEFAULT_ORDER, BasisSpec, MomentMatrix, basis_values, candidate_bases, moments
from .ranks import ScoreTable, compute_ranks, histogram
from .subsample import EXTRAPOLATED, AccuracyCurve, CurvePoint, OBSERVED, ata_curve, ata_values, test_accuracy

RCOND = 1e-10
MAX_FIT_POINTS = 10_000


class MonotonicityWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ExtrapolationFit:
    basis: BasisSpec
    beta: np.ndarray
    k1: int
    r: int
    fitted_ks: np.ndarray
    residual_rss: float
    rank: int
    d_at_0: float
    d_at_1: float

    def __post_init__(self):
        if len(self.beta) != self.basis.m:
            raise ValueError(f"beta has {len(self.beta)} entries, basis has {self.basis.m}")

    def discriminability(self, u) -> np.ndarray:
        """The implied ``D(u) = sum_l beta_l h_l(u)`` (not constrained to be a CDF)."""
        return self.beta @ basis_values(self.basis, u)

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "beta": [float(b) for b in self.beta],
            "k1": self.k1,
            "r": self.r,
            "fitted_ks": [int(k) for k in self.fitted_ks],
            "residual_rss": float(self.residual_rss),
            "rank": self.rank,
            "d_at_0": float(self.d_at_0),
            "d_at_1": float(self.d_at_1),
        }


@dataclass(frozen=True, eq=False)
class SelectionReport:
    candidates: list  # (BasisSpec, summed squared error)
    chosen: int
    resamples: int
    k0: int
    target_accuracy: float
    with_replacement: bool = False
    redraws: int = 0
    predictions: np.ndarray = field(default=None, repr=False)  # (resamples, candidates)

    @property
    def chosen_basis(self) -> BasisSpec:
        return self.candidates[self.chosen][0]

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen,
            "resamples": self.resamples,
            "k0": self.k0,
            "target_accuracy": float(self.target_accuracy),
            "sampling": "with_replacement" if self.with_replacement else "without_replacement",
            "redraws": self.redraws,
            "candidates": [
                {"bandwidth": b.bandwidth, "kind": b.kind, "m": b.m, "error": float(e)}
                for b, e in self.candidates
            ],
        }


@dataclass(frozen=True)
class ExtrapolationConfig:
    h_grid: tuple = DEFAULT_H_GRID
    resamples: int = 20
    seed: int = 0
    with_replacement: bool = False
    order: int = DEFAULT_ORDER
    max_fit_points: int = MAX_FIT_POINTS
    threads: int = 1


def fit_grid(k1: int, max_points: int = MAX_FIT_POINTS) -> np.ndarray:
    """Label-set sizes used as regression inputs: all of ``2..k1`` or a log-spaced subset."""
    if k1 - 1 <= max_points:
        return np.arange(2, k1 + 1)
    grid = np.unique(np.round(np.geomspace(2, k1, max_points)).astype(np.int64))
    return grid


def _solve(X: np.ndarray, y: np.ndarray):
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=RCOND)
    return beta, int(rank)


def fit_values(ks, ata, b: BasisSpec, M: MomentMatrix, r: int = 0) -> ExtrapolationFit:
    ks = np.asarray(ks, dtype=np.int64)
    ata = np.asarray(ata, dtype=float)
    if ks.size < 2:
        raise ValueError("need accuracies at two or more label-set sizes to fit")
    if M.H.shape[0] != b.m:
        raise ValueError(f"moment matrix has {M.H.shape[0]} rows, basis has {b.m} elements")
    X = M.design(ks)
    y = 1.0 - ata
    beta, rank = _solve(X, y)
    resid = y - X @ beta
    ends = beta @ basis_values(b, np.array([0.0, 1.0]))
    return ExtrapolationFit(b, beta, int(ks.max()), r, ks, float(resid @ resid), rank,
                            float(ends[0]), float(ends[1]))


def fit(curve: AccuracyCurve, b: BasisSpec, M: MomentMatrix, ks=None) -> ExtrapolationFit:
    """Least-squares fit of ``1 - ATA_k`` on the moments of ``b``.

    Uses the observed entries of ``curve`` with ``k >= 2`` (or the subset in
    ``ks``).  Rank-deficient designs get the minimum-norm coefficients.
    """
    obs_ks = curve.ks(OBSERVED)
    obs_vals = curve.values(OBSERVED)
    keep = obs_ks >= 2
    if ks is not None:
        keep &= np.isin(obs_ks, ks)
    return fit_values(obs_ks[keep], obs_vals[keep], b, M, r=curve.r)


def predict_unclamped(f: ExtrapolationFit, M: MomentMatrix, k2) -> np.ndarray:
    k2 = np.atleast_1d(np.asarray(k2, dtype=np.int64))
    if k2.min() < 2:
        raise ValueError(f"k2 must be >= 2, got {k2.min()}")
    return 1.0 - M.design(k2) @ f.beta


def predict(f: ExtrapolationFit, M: MomentMatrix, k2: int) -> float:
    """Predicted average accuracy at ``k2``, clamped to [0, 1]."""
    return float(np.clip(predict_unclamped(f, M, k2)[0], 0.0, 1.0))


def check_monotone(f: ExtrapolationFit, M: MomentMatrix, ks=None) -> bool:
    """Warn when a non-decreasing D-hat yields predictions that increase in k."""
    grid = np.linspace(0.0, 1.0, 1000)
    d = f.discriminability(grid)
    if np.any(np.diff(d) < -1e-12):
        return True
    ks = M.ks if ks is None else np.asarray(ks)
    pred = predict_unclamped(f, M, ks)
    if np.any(np.diff(pred) > 1e-10):
        warnings.warn("predicted accuracy increases with k despite a non-decreasing D-hat",
                      MonotonicityWarning, stacklevel=2)
        return False
    return True


class _PinvPredictor:
    """Maps an accuracy vector on ``2..k0`` to the prediction at ``k_target``."""

    def __init__(self, M: MomentMatrix, k0: int, k_target: int):
        X = M.design(np.arange(2, k0 + 1))
        pinv = np.linalg.pinv(X, rcond=RCOND)
        self.gain = M.design([k_target])[0] @ pinv

    def __call__(self, ata: np.ndarray) -> float:
        return 1.0 - float(self.gain @ (1.0 - ata))


def _draw_subset(rng, k1: int, k0: int, with_replacement: bool):
    redraws = 0
    while True:
        idx = rng.choice(k1, size=k0, replace=with_replacement)
        if np.unique(idx).size >= 2:
            return np.sort(idx), redraws
        redraws += 1


def _smaller_bandwidth_first(b: BasisSpec):
    return (b.bandwidth if b.bandwidth is not None else -np.inf, b.m)


def select_basis(st: ScoreTable, candidates, L: int = 20, seed: int = 0, *,
                 with_replacement: bool = False, moment_matrices=None,
                 order: int = DEFAULT_ORDER, threads: int = 1) -> SelectionReport:
    """Pick the basis that best extrapolates from ``floor(k1/2)`` classes to ``k1``.

    Resample ``l`` draws its classes from ``default_rng([seed, l])`` so the
    outcome does not depend on how resamples are scheduled.  Among candidates
    with equal error the smallest bandwidth wins.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate bases")
    if st.k1 < 4:
        raise ValueError(f"basis selection needs k1 >= 4, got {st.k1}")
    if L < 1:
        raise ValueError("need at least one resample")
    k1, k0 = st.k1, st.k1 // 2
    if moment_matrices is None:
        moment_matrices = [moments(b, np.arange(2, k1 + 1), order=order) for b in candidates]
    predictors = [_PinvPredictor(M, k0, k1) for M in moment_matrices]
    target = test_accuracy(histogram(compute_ranks(st)))
    inner_ks = np.arange(2, k0 + 1)

    def one(ell):
        rng = np.random.default_rng([seed, ell])
        idx, redraws = _draw_subset(rng, k1, k0, with_replacement)
        ata = ata_values(histogram(compute_ranks(st.restrict(idx))), inner_ks)
        return [p(ata) for p in predictors], redraws

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(L)))
    else:
        results = [one(ell) for ell in range(L)]
    preds = np.array([res[0] for res in results])
    redraws = sum(res[1] for res in results)
    errors = ((preds - target) ** 2).sum(axis=0)
    best = errors.min()
    tied = [i for i, e in enumerate(errors) if np.isclose(e, best, rtol=1e-9, atol=1e-15)]
    chosen = min(tied, key=lambda i: _smaller_bandwidth_first(candidates[i]))
    return SelectionReport(
        candidates=[(b, float(e)) for b, e in zip(candidates, errors)],
        chosen=chosen, resamples=L, k0=k0, target_accuracy=target,
        with_replacement=with_replacement, redraws=redraws, predictions=preds,
    )


def extrapolate_pipeline(st: ScoreTable, k2_list, config: ExtrapolationConfig = ExtrapolationConfig(),
                         moment_cache=None):
    """Ranks, observed curve, basis selection, full-data fit and predictions.

    Returns ``(curve, report, fit, moment_matrix)``; the curve carries the
    observed ``ATA_2..ATA_k1`` followed by one extrapolated entry per ``k2``.
    ``moment_cache`` (a dict) lets repeated calls with the same
    ``(r, k1, k2_list)`` reuse the candidate moment matrices.
    """
    k2_list = [int(k) for k in k2_list]
    if any(k < 2 for k in k2_list):
        raise ValueError(f"target sizes must be >= 2, got {k2_list}")
    h = histogram(compute_ranks(st))
    fit_ks = fit_grid(st.k1, config.max_fit_points)
    curve = ata_curve(h, fit_ks)
    candidates = candidate_bases(st.r, st.k1, config.h_grid)
    all_ks = np.unique(np.concatenate([np.arange(2, st.k1 + 1), k2_list])).astype(np.int64)
    key = (st.r, st.k1, tuple(all_ks.tolist()), tuple(config.h_grid), config.order)
    if moment_cache is not None and key in moment_cache:
        mats = moment_cache[key]
    else:
        mats = [moments(b, all_ks, order=config.order) for b in candidates]
        if moment_cache is not None:
            moment_cache[key] = mats
    if st.k1 < 4:
        # too few classes to resample; fall back to the smallest bandwidth
        chosen = min(range(len(candidates)), key=lambda i: _smaller_bandwidth_first(candidates[i]))
        report = SelectionReport([(b, float("nan")) for b in candidates], chosen, 0, st.k1 // 2,
                                 test_accuracy(h), config.with_replacement)
    else:
        report = select_basis(st, candidates, config.resamples, config.seed,
                              with_replacement=config.with_replacement,
                              moment_matrices=mats, threads=config.threads)
    M = mats[report.chosen]
    f = fit(curve, report.chosen_basis, M)
    if k2_list:
        check_monotone(f, M, sorted(set(k2_list) | set(fit_ks.tolist())))
    extra = [CurvePoint(k, predict(f, M, k), EXTRAPOLATED) for k in k2_list]
    return curve.extended(extra), report, f, M
