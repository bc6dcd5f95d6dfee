"""Basis families for the discriminability function and their moment constants.

The moment of basis element ``h`` at label-set size ``k`` is

    H(k) = (k - 1) * int_0^1 h(u) u^(k-2) du = int_0^1 h(v^(1/(k-1))) dv,

the mean of ``h`` under the Beta(k-1, 1) law.  The right-hand form is what
gets integrated: for large ``k`` the Beta weight piles up against ``u = 1``,
while in ``v`` the integrand is bounded and monotone.  Its endpoint
behaviour is only algebraic, so the quadrature uses Gauss-Legendre panels
that are geometrically graded towards both ends of ``[0, 1]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

DEFAULT_H_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_ORDER = 32
GRADING_DEPTH = 16
CONVERGENCE_TOL = 1e-6


class QuadratureError(ArithmeticError):
    """Order doubling changed a moment by more than the convergence tolerance."""


@dataclass(frozen=True)
class BasisSpec:
    """A basis for D(u); element 0 is always the constant function.

    ``kind`` is one of ``constant``, ``monomial`` (elements ``u**p`` for
    ``p`` in ``powers``) or ``radial`` (elements
    ``Phi((Phi^-1(u) - t) / bandwidth)`` for ``t`` in ``knots``).
    """

    kind: str
    bandwidth: float | None = None
    knots: tuple = ()
    powers: tuple = ()
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in ("constant", "monomial", "radial"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "radial":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("radial basis needs a positive bandwidth")
            if not self.knots:
                raise ValueError("radial basis needs at least one knot")
            object.__setattr__(self, "knots", tuple(float(t) for t in self.knots))
        if self.kind == "monomial":
            if not self.powers or any(p <= 0 for p in self.powers):
                raise ValueError("monomial basis needs positive powers")
            object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))

    @property
    def m(self) -> int:
        if self.kind == "radial":
            return 1 + len(self.knots)
        if self.kind == "monomial":
            return 1 + len(self.powers)
        return 1

    @property
    def label(self) -> str:
        if self.kind == "radial":
            return f"radial(h={self.bandwidth:g}, knots={len(self.knots)})"
        if self.kind == "monomial":
            return "monomial(" + ",".join(f"{p:g}" for p in self.powers) + ")"
        return "constant"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bandwidth": self.bandwidth,
            "knots": list(self.knots),
            "powers": list(self.powers),
            "m": self.m,
            **self.meta,
        }


def constant_basis() -> BasisSpec:
    return BasisSpec("constant")


def monomial_basis(powers) -> BasisSpec:
    return BasisSpec("monomial", powers=tuple(powers))


def radial_basis(bandwidth: float, knots) -> BasisSpec:
    return BasisSpec("radial", bandwidth=float(bandwidth), knots=tuple(knots))


def probit(u, tail=None):
    """Standard normal quantile; ``tail = 1 - u`` keeps precision near ``u = 1``."""
    u = np.asarray(u, dtype=float)
    tail = 1.0 - u if tail is None else np.asarray(tail, dtype=float)
    lower = ndtri(np.minimum(u, 0.5))
    upper = -ndtri(np.minimum(tail, 0.5))
    return np.where(u < 0.5, lower, upper)


def basis_values(b: BasisSpec, u, tail=None) -> np.ndarray:
    """All basis elements at ``u``; returns shape ``(m,) + u.shape``."""
    u = np.asarray(u, dtype=float)
    out = np.empty((b.m,) + u.shape)
    out[0] = 1.0
    if b.kind == "monomial":
        for idx, p in enumerate(b.powers, start=1):
            out[idx] = u ** p
    elif b.kind == "radial":
        z = probit(u, tail)
        for idx, t in enumerate(b.knots, start=1):
            out[idx] = ndtr((z - t) / b.bandwidth)
    return out


def eval_basis(b: BasisSpec, ell: int, u: float) -> float:
    """Value of element ``ell`` (0-based; 0 is the constant) at ``u`` in [0, 1]."""
    if not 0 <= ell < b.m:
        raise IndexError(f"basis element {ell} out of range for m={b.m}")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return float(basis_values(b, np.array([u]))[ell, 0])


def knot_range(r: int, k1: int) -> float:
    """Largest knot magnitude, ``Phi^-1(1 - 1/(r k1^2))``."""
    return float(-ndtri(1.0 / (r * k1 * k1)))


def radial_knots(bandwidth: float, T: float) -> np.ndarray:
    """Symmetric knots on ``[-T, T]`` with ``2 floor(2T/h) + 1`` points.

    The spacing ``T / floor(2T/h)`` is never below ``h/2`` and the outermost
    knots sit exactly at ``+-T``.
    """
    n = int(np.floor(T / (bandwidth / 2.0) + 1e-12))
    if n == 0:
        return np.zeros(1)
    return np.linspace(-T, T, 2 * n + 1)


def candidate_bases(r: int, k1: int, h_grid=DEFAULT_H_GRID) -> list:
    """One radial basis (plus intercept) per bandwidth in ``h_grid``."""
    if r < 1 or k1 < 2:
        raise ValueError(f"need r >= 1 and k1 >= 2, got r={r}, k1={k1}")
    h_grid = list(h_grid)
    if not h_grid:
        raise ValueError("empty bandwidth grid")
    T = knot_range(r, k1)
    return [
        BasisSpec("radial", bandwidth=float(h), knots=tuple(radial_knots(h, T)),
                  meta={"knot_range": T, "r": r, "k1": k1})
        for h in h_grid
    ]


@lru_cache(maxsize=8)
def _graded_rule(order: int, depth: int = GRADING_DEPTH):
    """Nodes on [0, 1] graded towards both ends.

    Returns ``(x, one_minus_x, w)``; the complement is exact rather than
    computed as ``1 - x``, which matters when ``x`` is within 1e-16 of 1.
    """
    g, gw = np.polynomial.legendre.leggauss(order)
    edges = np.concatenate([[0.0], 10.0 ** -np.arange(depth, 0, -1), [0.5]])
    a, b = edges[:-1, None], edges[1:, None]
    t = ((a + b) / 2 + (b - a) / 2 * g).ravel()
    tw = ((b - a) / 2 * gw).ravel()
    x = np.concatenate([t, 1.0 - t])
    xc = np.concatenate([1.0 - t, t])
    w = np.concatenate([tw, tw])
    for arr in (x, xc, w):
        arr.setflags(write=False)
    return x, xc, w


def _substituted_moments(b: BasisSpec, ks: np.ndarray, order: int) -> np.ndarray:
    v, vc, w = _graded_rule(order)
    half = v.size // 2
    logv = np.concatenate([np.log(v[:half]), np.log1p(-vc[half:])])
    out = np.empty((b.m, ks.size))
    chunk = max(1, 4_000_000 // (v.size * b.m))
    for start in range(0, ks.size, chunk):
        kk = ks[start:start + chunk].astype(float)
        lu = logv[None, :] / (kk[:, None] - 1.0)
        u = np.exp(lu)
        tail = -np.expm1(lu)
        vals = basis_values(b, u, tail)
        out[:, start:start + chunk] = vals @ w
    return out


def moments_direct(b: BasisSpec, ks, order: int = DEFAULT_ORDER) -> np.ndarray:
    """``(k-1) int h(u) u^(k-2) du`` integrated in ``u`` directly (cross-check path)."""
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    u, uc, w = _graded_rule(order)
    vals = basis_values(b, u, uc)
    weight = (ks[:, None] - 1.0) * np.exp((ks[:, None] - 2.0) * np.log(u)[None, :])
    return vals @ (weight * w).T


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """``H[l, c]`` is the moment of element ``l`` at label-set size ``ks[c]``."""

    H: np.ndarray
    ks: np.ndarray
    basis: BasisSpec | None = None
    max_doubling_change: float = 0.0

    def __post_init__(self):
        index = {int(k): c for c, k in enumerate(self.ks)}
        object.__setattr__(self, "_index", index)

    def covers(self, ks) -> bool:
        return all(int(k) in self._index for k in np.atleast_1d(ks))

    def design(self, ks) -> np.ndarray:
        """Regression design with one row per requested k, shape ``(len(ks), m)``."""
        try:
            cols = [self._index[int(k)] for k in np.atleast_1d(ks)]
        except KeyError as exc:
            raise KeyError(f"no moments available at k={exc.args[0]}") from None
        return self.H[:, cols].T

    def restricted(self, rows) -> "MomentMatrix":
        """Moments for a subset of basis elements (used for nested fits)."""
        return MomentMatrix(self.H[list(rows)], self.ks, None, self.max_doubling_change)


def _audit_ks(ks: np.ndarray, n: int = 12) -> np.ndarray:
    if ks.size <= n:
        return ks
    pos = np.unique(np.round(np.geomspace(1, ks.size, n)).astype(int) - 1)
    return ks[pos]


def moments(b: BasisSpec, ks, order: int = DEFAULT_ORDER, verify: bool = True,
            tol: float = CONVERGENCE_TOL) -> MomentMatrix:
    """Moment constants for every element of ``b`` at every ``k`` in ``ks``.

    With ``verify`` the rule is re-run at doubled order on a log-spaced audit
    subset of ``ks``; a change larger than ``tol`` (relative) raises
    :class:`QuadratureError`.
    """
    ks = np.unique(np.atleast_1d(np.asarray(ks, dtype=np.int64)))
    if ks.size == 0 or ks.min() < 2:
        raise ValueError("moments are defined for k >= 2")
    H = _substituted_moments(b, ks, order)
    change = 0.0
    if verify:
        audit = _audit_ks(ks)
        cols = np.searchsorted(ks, audit)
        fine = _substituted_moments(b, audit, 2 * order)
        rel = np.abs(fine - H[:, cols]) / np.maximum(np.abs(fine), 1e-10)
        change = float(rel.max())
        if change > tol:
            worst = np.unravel_index(np.argmax(rel), rel.shape)
            raise QuadratureError(
                f"moment of element {worst[0]} at k={audit[worst[1]]} changed by "
                f"{change:.3g} under order doubling"
            )
    np.clip(H, 0.0, 1.0, out=H)
    H.setflags(write=False)
    return MomentMatrix(H, ks, b, change)


def write_moments(path, M: MomentMatrix, header_lines=()) -> None:
    """CSV ``ell,k,H`` with 1-based element index (1 is the constant)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ell", "k", "H"])
        for ell in range(M.H.shape[0]):
            for c, k in enumerate(M.ks):
                w.writerow([ell + 1, int(k), f"{M.H[ell, c]:.17g}"])
