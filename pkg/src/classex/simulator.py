"""Synthetic classification problems with known ground truth.

Two models are provided.  The bivariate-normal toy model has labels
``Y ~ N(0, 1)`` and examples ``X | Y ~ N(rho Y, 1 - rho^2)`` classified by the
Bayes rule, for which the accuracy of any label set is available in closed
form.  The Gaussian-mixture model draws class centres from ``N(0, I_d)`` and
examples from ``N(centre, sigma^2 I_d)`` and classifies with 1-nearest
neighbour on a single training example per class.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .extrapolator import ExtrapolationConfig, extrapolate_pipeline
from .kde import KdeConfig, kde_curve
from .ranks import ScoreTable, compute_ranks, histogram
from .subsample import EXTRAPOLATED, format_float, test_accuracy

METHODS = ("classexreg", "kde-bcv", "kde-ucv")
SCORES = ("sqdist", "dist")
STUDY_FIELDS = ["k1", "k2", "sigma", "replicate", "method", "predicted", "true_ta"]


# --- bivariate-normal toy model ---------------------------------------------

@dataclass(frozen=True)
class ToyModel:
    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"need |rho| < 1, got {self.rho}")

    @property
    def noise_sd(self) -> float:
        return math.sqrt(1.0 - self.rho ** 2)


def toy_ga_batch(labels, rho: float) -> np.ndarray:
    """Exact Bayes-rule accuracy for each row of a ``(n_sets, k)`` label array.

    The decision boundaries are midpoints between adjacent conditional means
    ``rho * y``, so each class keeps the probability that its own example
    lands between the neighbouring midpoints.
    """
    y = np.sort(np.atleast_2d(np.asarray(labels, dtype=float)), axis=1)
    k = y.shape[1]
    if k == 1:
        return np.ones(y.shape[0])
    sd = math.sqrt(1.0 - rho ** 2)
    half_gap = abs(rho) * np.diff(y, axis=1) / (2.0 * sd)
    # sum_i [Phi(a_i) - Phi(-a_{i-1})] telescopes to 2 sum Phi(a_i) - (k - 2)
    return (2.0 * ndtr(half_gap).sum(axis=1) - (k - 2)) / k


def toy_ga_exact(labels, rho: float) -> float:
    ToyModel(rho)
    return float(toy_ga_batch(np.asarray(labels, dtype=float)[None, :], rho)[0])


def toy_favorability(x_star, y, rho: float):
    """Probability that label ``y`` outscores a fresh random label at ``x_star``.

    The score prefers the label whose conditional mean ``rho * y`` is nearer
    to ``x_star``, so this is ``Pr[|rho Y' - x*| > |rho y - x*|]``.
    At ``rho = 0`` every label ties and the value is 1/2 by convention.
    """
    x_star = np.asarray(x_star, dtype=float)
    y = np.asarray(y, dtype=float)
    if rho == 0:
        return np.full(np.broadcast(x_star, y).shape, 0.5)[()]
    a = abs(rho)
    d = np.abs(rho * y - x_star)
    # 1 - [Phi((x+d)/a) - Phi((x-d)/a)], written without cancellation
    return (ndtr((x_star - d) / a) + ndtr(-(x_star + d) / a))[()]


def toy_correct_favorability(model: ToyModel, n: int, seed) -> np.ndarray:
    """Draws of ``U*``: favorability of the true label at its own example."""
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(n)
    x = model.rho * y + model.noise_sd * rng.standard_normal(n)
    return toy_favorability(x, y, model.rho)


def toy_incorrect_favorability(model: ToyModel, x_star: float, n: int, seed) -> np.ndarray:
    """Draws of ``U_{x*}(M_Y)`` for a fixed example and random labels."""
    rng = np.random.default_rng(seed)
    return toy_favorability(x_star, rng.standard_normal(n), model.rho)


def empirical_cdf(samples, u) -> np.ndarray:
    s = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(s, np.asarray(u, dtype=float), side="right") / s.size


def aga_from_favorability(samples, k: int):
    """``1 - (k-1) int D(u) u^(k-2) du`` with ``D`` the empirical CDF of ``samples``.

    The step-function integral is evaluated exactly.  Returns
    ``(estimate, standard_error)``; the error comes from the equivalent
    sample-mean form ``mean(U^(k-1))``.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    if k == 1:
        return 1.0, 0.0
    edges = np.append(s, 1.0) ** (k - 1)
    levels = np.arange(1, n + 1) / n
    integral = math.fsum(levels * np.diff(edges))
    se = float(np.std(s ** (k - 1), ddof=1) / math.sqrt(n))
    return 1.0 - integral, se


def toy_aga_monte_carlo(model: ToyModel, k: int, n_sets: int, seed, chunk: int = 100_000):
    """Mean and standard error of the exact accuracy over random label sets."""
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    while done < n_sets:
        m = min(chunk, n_sets - done)
        ga = toy_ga_batch(rng.standard_normal((m, k)), model.rho)
        total += math.fsum(ga)
        total_sq += math.fsum(ga * ga)
        done += m
    mean = total / n_sets
    var = max(total_sq / n_sets - mean * mean, 0.0) * n_sets / max(n_sets - 1, 1)
    return mean, math.sqrt(var / n_sets)


def simulate_toy_task(model: ToyModel, k: int, r: int, seed) -> ScoreTable:
    """Score table for a random ``k``-label toy task with ``r`` test examples per label."""
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(k)
    x = model.rho * y[:, None] + model.noise_sd * rng.standard_normal((k, r))
    scores = -((x[:, :, None] - model.rho * y[None, None, :]) ** 2) / (2.0 * (1.0 - model.rho ** 2))
    return ScoreTable(scores)


# --- Gaussian mixture with a 1-NN classifier --------------------------------

@dataclass(frozen=True)
class GaussianMixtureModel:
    sigma: float
    dim: int = 10
    r_test: int = 1
    score: str = "sqdist"

    def __post_init__(self):
        if self.score not in SCORES:
            raise ValueError(f"score must be one of {SCORES}, got {self.score!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.r_test < 1:
            raise ValueError("r_test must be >= 1")


def simulate_gaussian_task(model: GaussianMixtureModel, k: int, seed) -> ScoreTable:
    """1-NN scores ``-||x_train(l) - x||^2`` for a fresh ``k``-class task.

    With ``model.score == "dist"`` the scores are plain negative distances;
    ranks are identical, only the KDE baseline sees the difference.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, model.dim))
    train = centers + model.sigma * rng.standard_normal((k, model.dim))
    test = centers[:, None, :] + model.sigma * rng.standard_normal((k, model.r_test, model.dim))
    scores = np.empty((k, model.r_test, k))
    step = max(1, 2_000_000 // (k * model.dim * model.r_test))
    for start in range(0, k, step):
        diff = test[start:start + step, :, None, :] - train[None, None, :, :]
        scores[start:start + step] = -np.einsum("ijld,ijld->ijl", diff, diff)
    if model.score == "dist":
        scores = -np.sqrt(-scores)
    return ScoreTable(scores)


# --- simulation study --------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    k1: int
    k2: tuple
    sigmas: tuple
    replicates: int
    seed: int = 0
    dim: int = 10
    r_test: int = 1
    h_grid: tuple = tuple(round(0.1 * i, 1) for i in range(1, 11))
    resamples: int = 20
    bootstrap: int = 1000
    methods: tuple = METHODS
    score: str = "sqdist"

    def __post_init__(self):
        k2 = (self.k2,) if isinstance(self.k2, int) else tuple(int(k) for k in self.k2)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.k1 < 2 or any(k <= self.k1 for k in k2):
            raise ValueError(f"need k2 > k1 >= 2, got k1={self.k1}, k2={k2}")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.sigmas or min(self.sigmas) < 0:
            raise ValueError("sigma grid must be non-empty and non-negative")
        if self.score not in SCORES:
            raise ValueError(f"score must be one of {SCORES}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StudyRow:
    k1: int
    k2: int
    sigma: float
    replicate: int
    method: str
    predicted: float
    true_ta: float

    @property
    def key(self):
        return (self.k2, self.sigma, self.replicate, self.method)


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list
    per_sigma: list = field(default_factory=list)   # dicts: k2, sigma, method, rmse, bias, mean_true
    summary: list = field(default_factory=list)     # dicts: k1, k2, method, max_rmse, se

    def max_rmse(self, method: str, k2: int | None = None) -> float:
        k2 = self.config.k2[0] if k2 is None else k2
        return next(s["max_rmse"] for s in self.summary if s["method"] == method and s["k2"] == k2)


def _sigma_key(sigma: float) -> int:
    return int(round(sigma * 1e9))


def replicate_seed(seed: int, sigma: float, replicate: int, k2: int) -> list:
    return [seed, _sigma_key(sigma), replicate, k2]


_MOMENT_CACHE: dict = {}


def run_replicate(cfg: StudyConfig, sigma: float, replicate: int, k2: int) -> list:
    """All method predictions for one (sigma, replicate, k2) cell."""
    base = replicate_seed(cfg.seed, sigma, replicate, k2)
    model = GaussianMixtureModel(sigma, cfg.dim, cfg.r_test, cfg.score)
    task = simulate_gaussian_task(model, k2, base + [0])
    true_ta = test_accuracy(histogram(compute_ranks(task)))
    subset = np.sort(np.random.default_rng(base + [1]).choice(k2, size=cfg.k1, replace=False))
    source = task.restrict(subset)
    rows = []
    for method in cfg.methods:
        if method == "classexreg":
            ecfg = ExtrapolationConfig(h_grid=cfg.h_grid, resamples=cfg.resamples, seed=_seed_int(base + [2]))
            curve, _, _, _ = extrapolate_pipeline(source, [k2], ecfg, moment_cache=_MOMENT_CACHE)
            pred = curve.get(k2, EXTRAPOLATED)
        else:
            pred = float(kde_curve(source, [k2], KdeConfig(rule=method.split("-")[1])).accuracy[0])
        rows.append(StudyRow(cfg.k1, k2, sigma, replicate, method, pred, true_ta))
    return rows


def _seed_int(entropy) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _row_to_csv(row: StudyRow) -> list:
    # full precision so a resumed run matches an uninterrupted one exactly
    return [row.k1, row.k2, repr(row.sigma), row.replicate, row.method,
            repr(row.predicted), repr(row.true_ta)]


def _read_journal(path: Path) -> dict:
    done = {}
    if not path.is_file():
        return done
    with path.open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            try:
                row = StudyRow(int(rec["k1"]), int(rec["k2"]), float(rec["sigma"]), int(rec["replicate"]),
                               rec["method"], float(rec["predicted"]), float(rec["true_ta"]))
            except (KeyError, TypeError, ValueError):
                continue  # torn final line from an interrupted run
            done[row.key] = row
    return done


def summarize(cfg: StudyConfig, rows) -> tuple:
    """Per-sigma RMSE/bias and max-RMSE over sigma with a nested bootstrap SE."""
    per_sigma, summary = [], []
    rng = np.random.default_rng([cfg.seed, 7919])
    for k2 in cfg.k2:
        for method in cfg.methods:
            errs_by_sigma = []
            for sigma in cfg.sigmas:
                sel = sorted((r for r in rows if r.k2 == k2 and r.method == method and r.sigma == sigma),
                             key=lambda r: r.replicate)
                if not sel:
                    continue
                err = np.array([r.predicted - r.true_ta for r in sel])
                errs_by_sigma.append(err)
                per_sigma.append({
                    "k1": cfg.k1, "k2": k2, "sigma": sigma, "method": method,
                    "rmse": math.sqrt(float(np.mean(err ** 2))), "bias": float(np.mean(err)),
                    "mean_true": float(np.mean([r.true_ta for r in sel])), "n": len(sel),
                })
            if not errs_by_sigma:
                continue
            max_rmse = max(math.sqrt(float(np.mean(e ** 2))) for e in errs_by_sigma)
            boot = np.empty(cfg.bootstrap)
            for b in range(cfg.bootstrap):
                boot[b] = max(math.sqrt(float(np.mean(e[rng.integers(0, e.size, e.size)] ** 2)))
                              for e in errs_by_sigma)
            se = float(np.std(boot, ddof=1)) if cfg.bootstrap > 1 else float("nan")
            summary.append({"k1": cfg.k1, "k2": k2, "method": method, "max_rmse": max_rmse, "se": se})
    return per_sigma, summary


def _run_cell(args):
    cfg, sigma, rep, k2 = args
    return run_replicate(cfg, sigma, rep, k2)


def run_study(cfg: StudyConfig, methods=None, out_dir=None, threads: int = 1,
              header_lines=(), progress=None) -> StudyReport:
    """Run every (k2, sigma, replicate) cell and summarise per method.

    With ``out_dir`` each finished cell is appended to ``study_journal.csv``
    so an interrupted run resumes where it stopped; on completion the sorted
    ``study.csv``, ``per_sigma.csv`` and ``summary.csv`` are written and the
    journal removed.
    """
    if methods is not None:
        cfg = StudyConfig(**{**cfg.to_dict(), "methods": tuple(methods)})
    cells = [(k2, s, rep) for k2 in cfg.k2 for s in cfg.sigmas for rep in range(cfg.replicates)]
    journal = Path(out_dir) / "study_journal.csv" if out_dir is not None else None
    done = _read_journal(journal) if journal else {}
    todo = [c for c in cells if any((c[0], c[1], c[2], m) not in done for m in cfg.methods)]
    rows = dict(done)

    fh = writer = None
    if journal is not None:
        journal.parent.mkdir(parents=True, exist_ok=True)
        fresh = not journal.is_file()
        fh = journal.open("a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(STUDY_FIELDS)

    def record(cell_rows):
        for row in cell_rows:
            rows[row.key] = row
            if writer is not None:
                writer.writerow(_row_to_csv(row))
        if fh is not None:
            fh.flush()
            os.fsync(fh.fileno())
        if progress is not None:
            progress(cell_rows)

    try:
        args = [(cfg, s, rep, k2) for k2, s, rep in todo]
        if threads > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for cell_rows in pool.map(_run_cell, args):
                    record(cell_rows)
        else:
            for a in args:
                record(_run_cell(a))
    finally:
        if fh is not None:
            fh.close()

    ordered = sorted(
        (r for r in rows.values() if r.method in cfg.methods and r.k2 in cfg.k2 and r.sigma in cfg.sigmas),
        key=lambda r: (r.k2, cfg.sigmas.index(r.sigma), r.replicate, cfg.methods.index(r.method)),
    )
    per_sigma, summary = summarize(cfg, ordered)
    report = StudyReport(cfg, ordered, per_sigma, summary)
    if out_dir is not None:
        write_study(Path(out_dir), report, header_lines)
        journal.unlink(missing_ok=True)
    return report


def write_study(out_dir: Path, report: StudyReport, header_lines=()) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    def dump(name, fields, records):
        with (out_dir / name).open("w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for rec in records:
                w.writerow([format_float(v) if isinstance(v, float) else v for v in rec])

    dump("study.csv", STUDY_FIELDS,
         ([r.k1, r.k2, r.sigma, r.replicate, r.method, r.predicted, r.true_ta] for r in report.rows))
    dump("per_sigma.csv", ["k1", "k2", "sigma", "method", "rmse", "bias", "mean_true", "n"],
         ([p["k1"], p["k2"], p["sigma"], p["method"], p["rmse"], p["bias"], p["mean_true"], p["n"]]
          for p in report.per_sigma))
    dump("summary.csv", ["k1", "k2", "method", "max_rmse", "se"],
         ([s["k1"], s["k2"], s["method"], s["max_rmse"], s["se"]] for s in report.summary))
