"""Score tables and correct-label rank statistics.

A score table holds, for every true class ``i``, test observation ``j`` and
candidate class ``l``, the score ``m_{y_l}(x_j^{(i)})`` produced by a marginal
classifier.  Everything downstream only needs the rank of the correct class
within each row, so that is the only slice that is kept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_TIE_EPS = 1e-9


class ScoreFormatError(ValueError):
    """Raised when a score or rank file cannot be turned into a valid table."""


@dataclass(frozen=True)
class TieBreakConfig:
    eps: float = DEFAULT_TIE_EPS
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Dense ``(k1, r, k1)`` array of scores, indexed (true class, obs, candidate)."""

    scores: np.ndarray
    perturbed_rows: int = 0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 3 or s.shape[0] != s.shape[2]:
            raise ScoreFormatError(f"score array must have shape (k1, r, k1), got {s.shape}")
        if s.shape[0] < 2:
            raise ScoreFormatError(f"need at least 2 classes, got k1={s.shape[0]}")
        if s.shape[1] < 1:
            raise ScoreFormatError("need at least one test observation per class")
        if not np.all(np.isfinite(s)):
            raise ScoreFormatError("score table contains non-finite entries")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def k1(self) -> int:
        return self.scores.shape[0]

    @property
    def r(self) -> int:
        return self.scores.shape[1]

    def correct_scores(self) -> np.ndarray:
        """Scores of the true class, shape ``(k1, r)``."""
        idx = np.arange(self.k1)
        return self.scores[idx, :, idx]

    def restrict(self, classes) -> "ScoreTable":
        """Sub-table on the given class indices (used both as rows and candidates).

        Repeated indices are allowed; a repeated class competes against its
        own copy, which ties with the correct score.
        """
        classes = np.asarray(classes, dtype=int)
        sub = self.scores[classes][:, :, classes]
        return ScoreTable(sub)


@dataclass(frozen=True, eq=False)
class RankTensor:
    """Correct-label ranks ``R_j^{i,i}``, shape ``(k1, r)``, values in ``[1, k1]``."""

    ranks: np.ndarray
    k1: int = field(default=0)

    def __post_init__(self):
        rk = np.asarray(self.ranks, dtype=np.int64)
        if rk.ndim != 2:
            raise ValueError(f"ranks must be 2-d (k1, r), got shape {rk.shape}")
        k1 = self.k1 or rk.shape[0]
        if rk.size and (rk.min() < 1 or rk.max() > k1):
            raise ValueError(f"ranks must lie in [1, {k1}]")
        rk = rk.copy()
        rk.setflags(write=False)
        object.__setattr__(self, "ranks", rk)
        object.__setattr__(self, "k1", k1)

    @property
    def r(self) -> int:
        return self.ranks.shape[1]


@dataclass(frozen=True, eq=False)
class RankHistogram:
    """``counts[rho - 1]`` is the number of rows whose correct class has rank ``rho``."""

    counts: np.ndarray
    r: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("histogram needs one count per rank and k1 >= 2")
        if np.any(c < 0):
            raise ValueError("negative rank count")
        if c.sum() != c.size * self.r:
            raise ValueError(f"counts sum to {c.sum()}, expected k1*r = {c.size * self.r}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k1(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def break_ties(scores, config: TieBreakConfig = TieBreakConfig()) -> ScoreTable:
    """Perturb rows that contain tied scores with seeded uniform noise.

    The noise magnitude is ``eps * (max - min)`` over the whole table, so rows
    without ties are returned bit-for-bit unchanged.
    """
    s = np.array(scores, dtype=float)
    if s.ndim != 3:
        raise ScoreFormatError(f"score array must be 3-d, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ScoreFormatError("score table contains non-finite entries")
    spread = float(s.max() - s.min()) if s.size else 0.0
    scale = config.eps * (spread if spread > 0 else max(1.0, float(np.abs(s).max(initial=0.0))))
    rng = np.random.default_rng(config.seed)
    flat = s.reshape(-1, s.shape[-1])
    tied = _rows_with_ties(flat)
    perturbed = int(tied.sum())
    # noise of relative size 1e-9 can itself collide only with vanishing probability
    while tied.any():
        rows = np.flatnonzero(tied)
        flat[rows] += rng.uniform(0.0, scale, size=(rows.size, flat.shape[1]))
        tied = np.zeros(flat.shape[0], dtype=bool)
        tied[rows] = _rows_with_ties(flat[rows])
    return ScoreTable(flat.reshape(s.shape), perturbed_rows=perturbed)


def _rows_with_ties(rows: np.ndarray) -> np.ndarray:
    srt = np.sort(rows, axis=1)
    return np.any(srt[:, 1:] == srt[:, :-1], axis=1)


def ingest_scores(source, config: TieBreakConfig = TieBreakConfig()) -> ScoreTable:
    """Load a score table from a CSV path or an array and break ties.

    The CSV layout is ``true_class,obs,score_1,...,score_k1`` with 1-indexed
    classes and observations, one row per (class, observation) pair.
    """
    if isinstance(source, (str, Path)):
        raw = read_score_file(source)
    else:
        raw = np.asarray(source, dtype=float)
    if raw.ndim != 3 or raw.shape[0] != raw.shape[2]:
        raise ScoreFormatError(f"score array must have shape (k1, r, k1), got {raw.shape}")
    if raw.shape[0] < 2:
        raise ScoreFormatError(f"need at least 2 classes, got k1={raw.shape[0]}")
    return break_ties(raw, config)


def read_score_file(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ScoreFormatError(f"score file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ScoreFormatError(f"{path}: empty score file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["true_class", "obs"] or len(header) < 4:
            raise ScoreFormatError(f"{path}: header must be true_class,obs,score_1,...,score_k1")
        k1 = len(header) - 2
        records = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != k1 + 2:
                raise ScoreFormatError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {k1 + 2}"
                )
            try:
                i, j = int(row[0]), int(row[1])
                vals = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise ScoreFormatError(f"{path}: row {lineno}: {exc}") from None
            if not 1 <= i <= k1 or j < 1:
                raise ScoreFormatError(f"{path}: row {lineno}: class/obs index out of range")
            if (i, j) in records:
                raise ScoreFormatError(f"{path}: row {lineno}: duplicate record ({i}, {j})")
            records[(i, j)] = vals
    if not records:
        raise ScoreFormatError(f"{path}: no score rows")
    r = max(j for _, j in records)
    if len(records) != k1 * r:
        missing = [(i, j) for i in range(1, k1 + 1) for j in range(1, r + 1) if (i, j) not in records]
        raise ScoreFormatError(f"{path}: missing records for (class, obs) {missing[:5]}")
    out = np.empty((k1, r, k1))
    for (i, j), vals in records.items():
        out[i - 1, j - 1] = vals
    if not np.all(np.isfinite(out)):
        raise ScoreFormatError(f"{path}: non-finite score")
    return out


def write_score_file(path, table, header_lines=()) -> None:
    scores = table.scores if isinstance(table, ScoreTable) else np.asarray(table)
    k1, r, _ = scores.shape
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_class", "obs"] + [f"score_{l + 1}" for l in range(k1)])
        for i in range(k1):
            for j in range(r):
                w.writerow([i + 1, j + 1] + [repr(float(v)) for v in scores[i, j]])


def read_rank_file(path) -> RankTensor:
    """Load precomputed correct-label ranks from ``true_class,obs,rank`` CSV."""
    path = Path(path)
    if not path.is_file():
        raise ScoreFormatError(f"rank file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = [h.strip() for h in next(reader, [])]
        if header != ["true_class", "obs", "rank"]:
            raise ScoreFormatError(f"{path}: header must be true_class,obs,rank")
        records = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ScoreFormatError(f"{path}: row {lineno} has {len(row)} fields, expected 3")
            try:
                i, j, rank = (int(c) for c in row)
            except ValueError as exc:
                raise ScoreFormatError(f"{path}: row {lineno}: {exc}") from None
            records[(i, j)] = rank
    if not records:
        raise ScoreFormatError(f"{path}: no rank rows")
    k1 = max(i for i, _ in records)
    r = max(j for _, j in records)
    if k1 < 2 or len(records) != k1 * r or min(i for i, _ in records) < 1:
        raise ScoreFormatError(f"{path}: ranks do not cover a complete k1 x r grid")
    ranks = np.empty((k1, r), dtype=np.int64)
    for (i, j), rank in records.items():
        ranks[i - 1, j - 1] = rank
    try:
        return RankTensor(ranks, k1=k1)
    except ValueError as exc:
        raise ScoreFormatError(f"{path}: {exc}") from None


def compute_ranks(st: ScoreTable) -> RankTensor:
    """Rank of the correct class: number of candidates scoring at or below it."""
    correct = st.correct_scores()
    ranks = np.count_nonzero(st.scores <= correct[:, :, None], axis=2)
    return RankTensor(ranks, k1=st.k1)


def histogram(rt: RankTensor) -> RankHistogram:
    counts = np.bincount(rt.ranks.ravel() - 1, minlength=rt.k1)
    return RankHistogram(counts, r=rt.r)
