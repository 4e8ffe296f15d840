"""Polynomial coVariance filters ``H(C) = sum_k h_k C^k``."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .covariance import CovarianceModel
from .errors import DegenerateSpectrumError, InvalidDataError, ShapeError

SPECTRAL_GAP_TOL = 1e-9


def as_taps(taps) -> np.ndarray:
    h = np.atleast_1d(np.asarray(taps, dtype=float))
    if h.ndim != 1 or h.size < 1:
        raise ShapeError("filter taps must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(h)):
        raise InvalidDataError("filter taps must be finite")
    return h


def _matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)


def apply_filter(taps, cov, x) -> np.ndarray:
    """Filter output ``z = sum_k h_k C^k x``.

    Evaluated by Horner's rule, so only K matrix-vector products are
    needed and no matrix power is ever formed.  ``x`` may carry trailing
    axes (e.g. ``m x F``), each column is filtered independently.
    """
    h = as_taps(taps)
    c = _matrix(cov)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != c.shape[0]:
        raise ShapeError(f"signal has {x.shape[0]} entries, covariance is {c.shape[0]}x{c.shape[1]}")
    z = h[-1] * x
    for hk in h[-2::-1]:
        z = c @ z + hk * x
    return z


def frequency_response(taps, lam):
    """Spectral response ``h(lambda) = sum_k h_k lambda^k`` (vectorized in lambda)."""
    h = as_taps(taps)
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam) + h[-1]
    for hk in h[-2::-1]:
        out = out * lam + hk
    return out if out.ndim else float(out)


def vandermonde_system(eigenvalues) -> tuple[np.ndarray, np.ndarray]:
    """Row-equilibrated Vandermonde matrix ``A[j, k] = lambda_j^k / s_j``.

    Returns the scaled matrix and the row scales ``s``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    a = np.vander(lam, N=lam.size, increasing=True)
    s = np.abs(a).max(axis=1)
    s[s == 0] = 1.0
    return a / s[:, None], s


def pca_recovery_bank(cov: CovarianceModel, weights=None) -> list[np.ndarray]:
    """Filter bank whose i-th filter has response ``omega_i`` at ``lambda_i`` and
    zero at every other eigenvalue.

    With these filters ``v_i^T H_i(C) x = omega_i [V^T x]_i``, i.e. the bank
    reproduces the PCA scores.  The taps solve the Vandermonde interpolation
    system in the eigenvalues, which is badly conditioned for clustered
    spectra; see :func:`recovery_bank_condition`.
    """
    lam = cov.eigenvalues
    m = lam.size
    omega = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if omega.shape != (m,):
        raise ShapeError(f"need {m} weights, got shape {omega.shape}")
    if m > 1 and np.min(np.abs(np.diff(lam))) <= SPECTRAL_GAP_TOL:
        raise DegenerateSpectrumError("eigenvalues are not pairwise distinct; interpolation is ill-posed")
    a, s = vandermonde_system(lam)
    # column i of A^{-1} diag(omega)/s gives the taps of filter i
    rhs = np.diag(omega / s)
    taps = np.linalg.solve(a, rhs)
    return [taps[:, i].copy() for i in range(m)]


def recovery_bank_condition(cov: CovarianceModel) -> float:
    """2-norm condition number of the (equilibrated) interpolation system."""
    a, _ = vandermonde_system(cov.eigenvalues)
    return float(np.linalg.cond(a))


def operator_norm(op: Callable[[np.ndarray], np.ndarray] | np.ndarray, dim: int | None = None,
                  tol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> float:
    """Spectral norm of a symmetric linear operator by power iteration.

    ``op`` is either a symmetric matrix or a callable computing ``A v``.
    Iterates until the Rayleigh estimate changes by less than ``tol``
    relative, or ``max_iter`` products.
    """
    if not callable(op):
        mat = np.asarray(op, dtype=float)
        dim = mat.shape[0]
        op = mat.__matmul__
    if dim is None:
        raise ValueError("dim is required when op is a callable")
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        # iterate with A^2 so that +/- extreme eigenvalues do not alternate
        w = op(op(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(est)


def filter_matrix(taps: Sequence[float], cov) -> np.ndarray:
    """Dense ``H(C)``; only meant for diagnostics and small m."""
    c = _matrix(cov)
    return apply_filter(taps, c, np.eye(c.shape[0]))
