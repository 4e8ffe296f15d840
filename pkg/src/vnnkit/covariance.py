"""Sample covariance estimation, spectral normalization and the coVariance
Fourier transform (projection onto the covariance eigenbasis)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateSampleError, InvalidDataError, ShapeError, ZeroSpectrumError

ZERO_SPECTRUM_TOL = 1e-12


@dataclass(frozen=True)
class FeatureMatrix:
    """Subjects x features data with column labels."""

    values: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"feature matrix must be 2-D and non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidDataError("feature matrix contains non-finite entries")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != values.shape[1]:
            raise ShapeError(f"{len(names)} feature names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise InvalidDataError("feature names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_array(cls, values, feature_names: Sequence[str] | None = None) -> "FeatureMatrix":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if feature_names is None:
            feature_names = [f"f{j + 1}" for j in range(values.shape[1])]
        return cls(values, tuple(feature_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    # flip each column so its largest-magnitude entry is positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(frozen=True)
class CovarianceModel:
    """Symmetric covariance matrix together with its eigendecomposition.

    Eigenvalues are sorted in descending order and each eigenvector is
    sign-fixed so that its largest-magnitude entry is positive.  Build
    instances with :meth:`from_matrix`.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    normalized: bool = False
    _digest: str = field(default="", repr=False, compare=False)

    @classmethod
    def from_matrix(cls, matrix, normalized: bool = False) -> "CovarianceModel":
        a = np.array(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ShapeError(f"covariance must be a non-empty square matrix, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidDataError("covariance contains non-finite entries")
        a = 0.5 * (a + a.T)
        w, v = np.linalg.eigh(a)
        order = np.argsort(-w, kind="stable")
        w = w[order]
        v = _canonical_signs(v[:, order])
        for arr in (a, w, v):
            arr.setflags(write=False)
        return cls(a, w, v, normalized)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    @property
    def digest(self) -> str:
        """SHA-256 of the matrix bytes; identifies the training covariance."""
        if not self._digest:
            h = hashlib.sha256(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())
            h.update(str(self.matrix.shape).encode())
            object.__setattr__(self, "_digest", h.hexdigest())
        return self._digest

    def permuted(self, perm) -> "CovarianceModel":
        """Relabel features: returns the model of ``P C P^T`` for ``x -> x[perm]``."""
        perm = np.asarray(perm)
        return CovarianceModel.from_matrix(self.matrix[np.ix_(perm, perm)], self.normalized)


def _column_mean(x: np.ndarray) -> np.ndarray:
    # reduce along a contiguous axis so every column is summed the same way
    return np.ascontiguousarray(x.T).sum(axis=1) / x.shape[0]


def _outer_sum(xc: np.ndarray, block_elems: int = 1 << 22) -> np.ndarray:
    """``xc^T xc`` with every entry reduced by the same routine.

    Relabeling features then permutes the result exactly; a BLAS product
    tiles entries differently and can differ in the last bit.
    """
    xt = np.ascontiguousarray(xc.T)
    m, n = xt.shape
    step = max(1, block_elems // max(1, m * m))
    acc = np.zeros((m, m))
    for start in range(0, n, step):
        blk = xt[:, start:start + step]
        acc += (blk[:, None, :] * blk[None, :, :]).sum(axis=2)
    return acc


def estimate_sample_covariance(data, standardize: bool = False) -> CovarianceModel:
    """Unbiased sample covariance ``1/(n-1) sum (x_i - xbar)(x_i - xbar)^T``.

    ``data`` is a :class:`FeatureMatrix` or an ``n x m`` array.  With
    ``standardize=True`` each feature is scaled to unit variance first
    (giving the correlation matrix); the default uses raw features.
    """
    x = data.values if isinstance(data, FeatureMatrix) else np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"expected an n x m array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidDataError("data contains non-finite entries")
    n = x.shape[0]
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 samples to estimate a covariance, got {n}")
    xc = x - _column_mean(x)
    if standardize:
        sd = np.sqrt((xc**2).sum(axis=0) / (n - 1))
        if np.any(sd == 0):
            raise DegenerateSampleError("cannot standardize a zero-variance feature")
        xc = xc / sd
    return CovarianceModel.from_matrix(_outer_sum(xc) / (n - 1))


def normalize_spectrum(cov: CovarianceModel) -> CovarianceModel:
    """Scale the covariance so that its largest eigenvalue equals 1."""
    lam = float(cov.eigenvalues[0])
    if lam <= ZERO_SPECTRUM_TOL:
        raise ZeroSpectrumError(f"largest eigenvalue {lam:g} is not positive")
    w = cov.eigenvalues / lam
    w[0] = 1.0
    a = cov.matrix / lam
    v = cov.eigenvectors.copy()
    for arr in (a, w, v):
        arr.setflags(write=False)
    return CovarianceModel(a, w, v, True)


def _check_signal(cov: CovarianceModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != cov.m:
        raise ShapeError(f"signal has {x.shape[0]} entries, covariance is {cov.m}x{cov.m}")
    return x


def vft(cov: CovarianceModel, x) -> np.ndarray:
    """coVariance Fourier transform ``V^T x`` (the PCA scores of ``x``)."""
    return cov.eigenvectors.T @ _check_signal(cov, x)


def inverse_vft(cov: CovarianceModel, xt) -> np.ndarray:
    return cov.eigenvectors @ _check_signal(cov, xt)
