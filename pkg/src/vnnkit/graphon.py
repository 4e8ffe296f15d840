"""Graphons, trace-weighted interval partitions, step-function representations
of signals and covariance matrices, and cut-distance estimates.

Graphons are described by a finite nonnegative cosine expansion

    W(u, v) = sum_j eta_j phi_{k_j}(u) phi_{k_j}(v),
    phi_0 = 1,  phi_k(u) = sqrt(2) cos(k pi u),

so any matrix sampled from one is positive semidefinite and the Lipschitz
constant is available in closed form.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .covariance import CovarianceModel, normalize_spectrum
from .errors import ConfigError, InvalidDataError, ShapeError, ZeroSpectrumError
from .rng import make_rng

GRAPHON_FORMAT_VERSION = 1
EXACT_CUT_MAX_M = 12


# --- graphon descriptions ------------------------------------------------


def cosine_basis(k: int, u):
    u = np.asarray(u, dtype=float)
    if k == 0:
        return np.ones_like(u)
    return math.sqrt(2.0) * np.cos(k * math.pi * u)


@dataclass(frozen=True)
class GraphonSpec:
    """Finite spectral description of a Lipschitz graphon."""

    eigenvalues: tuple[float, ...]
    indices: tuple[int, ...]
    lipschitz_constant: float | None = None
    name: str = ""

    def __post_init__(self):
        eta = tuple(float(e) for e in self.eigenvalues)
        idx = tuple(int(k) for k in self.indices)
        if len(eta) != len(idx) or not eta:
            raise ConfigError("graphon needs matching, non-empty eigenvalue and index lists")
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise ConfigError("cosine indices must be distinct and non-negative")
        if min(eta) < 0:
            raise ConfigError("graphon eigenvalues must be non-negative")
        bound = sum(e * (1.0 if k == 0 else 2.0) for e, k in zip(eta, idx))
        if bound > 1.0 + 1e-12:
            raise ConfigError(f"graphon is not bounded by 1 (sup |W| can reach {bound:.4g})")
        alpha = 2.0 * math.pi * sum(k * e for e, k in zip(eta, idx))
        if self.lipschitz_constant is not None:
            if self.lipschitz_constant < alpha - 1e-12:
                raise ConfigError(f"declared Lipschitz constant {self.lipschitz_constant} below the "
                                  f"analytic bound {alpha:.6g}")
            alpha = float(self.lipschitz_constant)
        object.__setattr__(self, "eigenvalues", eta)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "lipschitz_constant", alpha)

    def __call__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast(u, v).shape)
        for e, k in zip(self.eigenvalues, self.indices):
            out = out + e * (cosine_basis(k, u) * cosine_basis(k, v))
        return out

    def diagonal(self, u):
        return self(u, u)

    def to_text(self) -> str:
        return json.dumps({
            "format": "vnnkit-graphon", "format_version": GRAPHON_FORMAT_VERSION, "name": self.name,
            "eigenvalues": list(self.eigenvalues), "indices": list(self.indices),
            "lipschitz_constant": self.lipschitz_constant,
        }, indent=1) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GraphonSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"graphon description is not valid JSON: {exc}") from exc
        if doc.get("format") != "vnnkit-graphon" or doc.get("format_version") != GRAPHON_FORMAT_VERSION:
            raise ConfigError("unsupported graphon description")
        return cls(tuple(doc["eigenvalues"]), tuple(doc["indices"]), doc.get("lipschitz_constant"),
                   doc.get("name", ""))


SHIPPED_GRAPHONS: dict[str, GraphonSpec] = {
    "constant": GraphonSpec((0.5,), (0,), name="constant"),
    "cosine1": GraphonSpec((0.5, 0.25), (0, 1), name="cosine1"),
    "cosine2": GraphonSpec((0.4, 0.2, 0.1), (0, 1, 2), name="cosine2"),
    "cosine3": GraphonSpec((0.4, 0.15, 0.08, 0.05), (0, 1, 2, 3), name="cosine3"),
    # high-frequency structure, unrelated to the low-order family above
    "oscillating": GraphonSpec((0.1, 0.35, 0.1), (0, 6, 9), name="oscillating"),
}


def get_graphon(name: str) -> GraphonSpec:
    try:
        return SHIPPED_GRAPHONS[name]
    except KeyError:
        raise ConfigError(f"unknown graphon {name!r}; shipped: {sorted(SHIPPED_GRAPHONS)}") from None


def lipschitz_violations(kernel: Callable, alpha: float, pairs: int = 10_000, seed: int = 0) -> int:
    """Count random point pairs breaking ``|W(p) - W(q)| <= alpha * |p - q|_1``."""
    rng = make_rng(seed, "lipschitz")
    p = rng.uniform(size=(pairs, 2))
    q = rng.uniform(size=(pairs, 2))
    # half the pairs are close, to probe the local slope
    q[: pairs // 2] = np.clip(p[: pairs // 2] + rng.normal(scale=1e-3, size=(pairs // 2, 2)), 0, 1)
    lhs = np.abs(kernel(p[:, 0], p[:, 1]) - kernel(q[:, 0], q[:, 1]))
    rhs = alpha * np.abs(p - q).sum(axis=1)
    return int(np.count_nonzero(lhs > rhs + 1e-12))


def midpoints(m: int) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


def evaluate_graphon(kernel: Callable, m: int) -> np.ndarray:
    """``m x m`` matrix ``W(u_i, u_j)`` at the midpoints ``u_i = (i - 1/2) / m``."""
    if m < 1:
        raise ConfigError("resolution m must be at least 1")
    u = midpoints(m)
    a = np.asarray(kernel(u[:, None], u[None, :]), dtype=float)
    return 0.5 * (a + a.T)


def sample_covariance_from_graphon(kernel: Callable, m: int) -> CovarianceModel:
    """Covariance realization at resolution m, normalized to unit top eigenvalue."""
    return normalize_spectrum(CovarianceModel.from_matrix(evaluate_graphon(kernel, m)))


def graphon_signal(func: Callable, m: int) -> np.ndarray:
    """Discretize a signal on [0, 1] at the midpoints of resolution m."""
    return np.asarray(func(midpoints(m)), dtype=float)


# --- partitions and step functions ---------------------------------------


@dataclass(frozen=True)
class IntervalPartition:
    """Breakpoints ``0 < rho_1 < ... < rho_m = 1`` of right-closed intervals
    ``U_1 = [0, rho_1]``, ``U_i = (rho_{i-1}, rho_i]``."""

    breakpoints: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 1:
            raise ShapeError("partition needs at least one breakpoint")
        if b[-1] != 1.0 or b[0] <= 0.0 or np.any(np.diff(b) <= 0):
            raise InvalidDataError("breakpoints must be strictly increasing in (0, 1] and end at 1")
        b.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)

    @property
    def m(self) -> int:
        return self.breakpoints.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints, prepend=0.0)

    @property
    def left(self) -> np.ndarray:
        return np.concatenate([[0.0], self.breakpoints[:-1]])

    def locate(self, u) -> np.ndarray:
        """Index of the interval containing each point ``u``."""
        u = np.asarray(u, dtype=float)
        return np.minimum(np.searchsorted(self.breakpoints, u, side="left"), self.m - 1)

    @classmethod
    def uniform(cls, m: int) -> "IntervalPartition":
        b = np.arange(1, m + 1) / m
        b[-1] = 1.0
        return cls(b)


def _compensated_cumsum(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    s = 0.0
    comp = 0.0
    for i, v in enumerate(values):
        y = v - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[i] = s
    return out


def interval_partition(cov) -> IntervalPartition:
    """Trace-weighted partition: ``rho_i = sum_{j<=i} C_jj / tr(C)``."""
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)
    d = np.diag(c).astype(float)
    if np.any(d < 0):
        raise InvalidDataError("covariance has a negative diagonal entry")
    tr = math.fsum(d)
    if tr <= 0:
        raise ZeroSpectrumError("covariance trace is zero")
    if np.any(d == 0):
        raise InvalidDataError("zero-variance feature gives an empty interval")
    rho = _compensated_cumsum(d) / tr
    rho[-1] = 1.0
    return IntervalPartition(rho)


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function taking ``values[i]`` on interval ``U_i``."""

    partition: IntervalPartition
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.partition.m:
            raise ShapeError(f"{v.size} values for a partition with {self.partition.m} intervals")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, u):
        return self.values[self.partition.locate(u)]

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.values**2 * self.partition.widths)))


def step_function_l2_distance(f: StepFunction, g: StepFunction) -> float:
    """Exact ``||f - g||_2`` on [0, 1] via the common refinement of both partitions."""
    pts = np.union1d(f.partition.breakpoints, g.partition.breakpoints)
    left = np.concatenate([[0.0], pts[:-1]])
    widths = pts - left
    keep = widths > 0
    mid = 0.5 * (left + pts)[keep]
    diff = f(mid) - g(mid)
    return math.sqrt(float(np.sum(diff * diff * widths[keep])))


@dataclass(frozen=True)
class StepKernel:
    """Piecewise-constant kernel ``W_C(u, v) = C_ij`` for ``u in U_i, v in U_j``."""

    partition: IntervalPartition
    matrix: np.ndarray

    def __call__(self, u, v):
        return self.matrix[self.partition.locate(u), self.partition.locate(v)]

    def l2_distance(self, kernel: Callable, grid: int = 2000) -> float:
        """Midpoint-rule estimate of ``||W_C - W||_2`` over [0, 1]^2."""
        u = midpoints(grid)
        iu = self.partition.locate(u)
        diff = self.matrix[np.ix_(iu, iu)] - kernel(u[:, None], u[None, :])
        return math.sqrt(float(np.mean(diff * diff)))


def graphon_approximation(cov) -> StepKernel:
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)
    return StepKernel(interval_partition(c), np.array(c, dtype=float))


def dominance_check(cov, zeta: float) -> float:
    """Smallest ``Omega`` with ``max_j C_jj / tr(C) <= Omega / m^zeta``."""
    if not 2.0 / 3.0 < zeta <= 1.0:
        raise ConfigError(f"zeta must lie in (2/3, 1], got {zeta}")
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)
    d = np.diag(c)
    tr = float(np.sum(d))
    if tr <= 0:
        raise ZeroSpectrumError("covariance trace is zero")
    return float(c.shape[0] ** zeta * d.max() / tr)


# --- cut norm ------------------------------------------------------------


def _cut_objective_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w = np.diag(a)
    tr = float(np.sum(w))
    if tr <= 0:
        raise ZeroSpectrumError("cut distance needs a positive trace")
    return (w[:, None] * w[None, :]) * (a - b) / (tr * tr)


def _exact_cut(mat: np.ndarray) -> float:
    m = mat.shape[0]
    best = 0.0
    codes = np.arange(2**m, dtype=np.int64)
    # rows of `sel` enumerate every subset S in blocks, to bound memory
    block = 1 << min(m, 14)
    for start in range(0, codes.size, block):
        sel = ((codes[start:start + block, None] >> np.arange(m)) & 1).astype(float)
        rows = sel @ mat  # row sums of M restricted to S, per subset
        # best T for a given S takes all positive (or all negative) columns
        pos = np.clip(rows, 0, None).sum(axis=1)
        neg = -np.clip(rows, None, 0).sum(axis=1)
        best = max(best, float(pos.max()), float(neg.max()))
    return best


def _heuristic_cut(mat: np.ndarray, restarts: int, seed: int, max_iter: int = 100) -> float:
    n = mat.shape[0]
    rng = make_rng(seed, "cut-heuristic")
    best = 0.0
    for sign in (1.0, -1.0):
        sm = sign * mat
        s = (rng.uniform(size=(restarts, n)) < 0.5).astype(float)
        # seed one restart from the dominant singular direction
        try:
            u = np.linalg.svd(sm, hermitian=True)[0][:, 0] if n <= 512 else None
        except np.linalg.LinAlgError:
            u = None
        if u is not None:
            s[0] = (u > 0).astype(float)
            if restarts > 1:
                s[1] = (u < 0).astype(float)
        val = np.full(restarts, -np.inf)
        for _ in range(max_iter):
            t = ((s @ sm) > 0).astype(float)
            s_new = ((t @ sm.T) > 0).astype(float)
            new_val = np.einsum("ri,ij,rj->r", s_new, sm, t)
            if np.array_equal(s_new, s) and np.all(new_val <= val):
                break
            s, val = s_new, np.maximum(val, new_val)
        t = ((s @ sm) > 0).astype(float)
        val = np.einsum("ri,ij,rj->r", s, sm, t)
        best = max(best, float(val.max()))
    return best


def cut_norm_distance(a, b, exact_max_m: int = EXACT_CUT_MAX_M, restarts: int = 32,
                      seed: int = 0, force_heuristic: bool = False) -> tuple[float, bool]:
    """Cut distance between equal-size matrices sharing the same diagonal.

    ``max_{S,T} |e_A(S,T) - e_B(S,T)| / tr(A)^2`` with
    ``e_A(S,T) = sum_{i in S, j in T} A_ii A_jj A_ij``.  Exact enumeration up
    to ``exact_max_m`` nodes; above that a randomized alternating local
    search gives a lower bound.  Returns ``(value, exact)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cut distance needs equal square matrices, got {a.shape} and {b.shape}")
    if not np.allclose(np.diag(a), np.diag(b), rtol=0, atol=1e-9):
        raise InvalidDataError("cut distance needs matching diagonals")
    mat = _cut_objective_matrix(a, b)
    if a.shape[0] <= exact_max_m and not force_heuristic:
        return _exact_cut(mat), True
    return _heuristic_cut(mat, restarts, seed), False


def _trace_normalized(c, what: str) -> np.ndarray:
    c = c.matrix if isinstance(c, CovarianceModel) else np.asarray(c, dtype=float)
    if abs(np.trace(c) - 1.0) > 1e-9:
        raise InvalidDataError(f"{what} must be trace-normalized (trace {np.trace(c):.6g})")
    return c


def trace_normalize(c) -> np.ndarray:
    c = c.matrix if isinstance(c, CovarianceModel) else np.asarray(c, dtype=float)
    tr = np.trace(c)
    if tr <= 0:
        raise ZeroSpectrumError("trace is not positive")
    return c / tr


def product_overlay(c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    return np.outer(np.diag(c1), np.diag(c2))


def interval_overlay(c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Overlay from the overlap lengths of the two trace-weighted partitions."""
    p1, p2 = interval_partition(c1), interval_partition(c2)
    lo = np.maximum(p1.left[:, None], p2.left[None, :])
    hi = np.minimum(p1.breakpoints[:, None], p2.breakpoints[None, :])
    return np.clip(hi - lo, 0.0, None)


OVERLAYS = {"product": product_overlay, "interval": interval_overlay}


def blow_up(c1: np.ndarray, c2: np.ndarray, overlay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matrices ``C1[K]`` and ``C2[K^T]`` on the pair set ``[m1] x [m2]``."""
    m1, m2 = c1.shape[0], c2.shape[0]
    a = np.kron(c1, np.ones((m2, m2)))
    b = np.kron(np.ones((m1, m1)), c2)
    k = overlay.ravel()
    np.fill_diagonal(a, k)
    np.fill_diagonal(b, k)
    return a, b


EDGE_SCALES = ("mean-diagonal", "trace")


def cut_distance_overlay(c1, c2, overlay: str = "product", edge_scale: str = "mean-diagonal",
                         **cut_kwargs) -> tuple[float, bool]:
    """Upper bound on the cut distance between trace-normalized matrices of
    possibly different sizes, using one fixed fractional overlay.

    Node weights are the diagonals (summing to 1).  With
    ``edge_scale="mean-diagonal"`` the off-diagonal edge weights are
    ``m * C_ij``, i.e. entries relative to the mean variance, which keeps
    matrices sampled from one graphon on a common scale across sizes;
    ``"trace"`` uses the trace-normalized entries as they are, which shrinks
    every distance roughly like ``1/m``.  The minimization over overlays is
    not performed: ``overlay`` selects the product coupling
    ``K_ij = C1_ii C2_jj`` or the coupling induced by the trace-weighted
    interval partitions.
    """
    a1 = _trace_normalized(c1, "first matrix")
    a2 = _trace_normalized(c2, "second matrix")
    try:
        kfun = OVERLAYS[overlay]
    except KeyError:
        raise ConfigError(f"unknown overlay {overlay!r}; choose from {sorted(OVERLAYS)}") from None
    if edge_scale not in EDGE_SCALES:
        raise ConfigError(f"unknown edge scale {edge_scale!r}; choose from {EDGE_SCALES}")
    k = kfun(a1, a2)
    e1, e2 = (a1 * a1.shape[0], a2 * a2.shape[0]) if edge_scale == "mean-diagonal" else (a1, a2)
    a, b = blow_up(e1, e2, k)
    return cut_norm_distance(a, b, **cut_kwargs)


def transport_grid(r: np.ndarray, c: np.ndarray, steps: int = 5) -> list[np.ndarray]:
    """2x2 couplings with marginals ``r`` and ``c`` on a ``steps``-point grid."""
    if r.size != 2 or c.size != 2:
        raise ShapeError("grid enumeration is only implemented for 2x2 couplings")
    lo = max(0.0, r[0] - c[1])
    hi = min(r[0], c[0])
    out = []
    for t in np.linspace(lo, hi, steps):
        out.append(np.array([[t, r[0] - t], [c[0] - t, r[1] - c[0] + t]]))
    return out


def subsets(m: int) -> Sequence[tuple[int, ...]]:
    return [s for k in range(m + 1) for s in itertools.combinations(range(m), k)]
