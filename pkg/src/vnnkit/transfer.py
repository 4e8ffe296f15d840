"""Transfer a trained VNN across covariance matrices of different sizes and
measure how outputs converge: sample-count stability sweeps, resolution
transfer sweeps and cut-distance convergence series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cohort import CohortTable
from .covariance import CovarianceModel, estimate_sample_covariance, normalize_spectrum
from .errors import ConfigError, InvalidDataError, ShapeError
from .graphon import (GraphonSpec, StepFunction, cut_distance_overlay, graphon_signal,
                      interval_partition, sample_covariance_from_graphon, step_function_l2_distance,
                      trace_normalize)
from .model import VnnArchitecture, VnnParameters, forward, forward_batch, readout_mean, regional_contributions
from .rng import make_rng

SIGNALS: dict[str, Callable] = {
    "constant": lambda u: np.ones_like(np.asarray(u, dtype=float)),
    "cosine": lambda u: 1.0 + 0.5 * np.cos(math.pi * np.asarray(u, dtype=float)),
    "ramp": lambda u: np.asarray(u, dtype=float),
    # midpoint averages of cosines and ramps are exact at every m, so their
    # readouts coincide across resolutions; this one converges like m^-2
    "quadratic": lambda u: 1.0 + 0.5 * np.asarray(u, dtype=float) ** 2,
}


def get_signal(name: str) -> Callable:
    try:
        return SIGNALS[name]
    except KeyError:
        raise ConfigError(f"unknown signal {name!r}; choose from {sorted(SIGNALS)}") from None


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``; nan if any y <= 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class SweepReport:
    """Per-axis-point error statistics of a sweep with a fitted log-log slope."""

    axis_name: str
    axis: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    slope: float
    trials: int
    seed: int
    samples: np.ndarray | None = None  # (points, trials) raw errors
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        if np.any(np.diff(self.axis) <= 0):
            raise ConfigError("sweep axis must be strictly increasing")

    def rows(self) -> list[tuple]:
        return [(a, med, lo, hi) for a, med, lo, hi in zip(self.axis, self.median, self.q25, self.q75)]

    def summary(self) -> dict:
        out = {"axis_name": self.axis_name, "axis": self.axis.tolist(), "median": list(map(float, self.median)),
               "slope": self.slope, "trials": self.trials, "seed": self.seed}
        out.update(self.extras)
        return out


# --- transfer ------------------------------------------------------------


@dataclass
class TransferResult:
    readout: float
    contributions: np.ndarray
    outputs: list[StepFunction]


def _require_normalized(cov: CovarianceModel) -> None:
    if not isinstance(cov, CovarianceModel):
        raise ConfigError("transfer target must be a CovarianceModel")
    if not cov.normalized and abs(float(cov.eigenvalues[0]) - 1.0) > 1e-10:
        raise InvalidDataError("transfer target covariance must be normalized to unit top eigenvalue")


def transfer_model(params: VnnParameters, arch: VnnArchitecture, cov_target: CovarianceModel,
                   x_target) -> TransferResult:
    """Apply unchanged taps on a (possibly different-size) covariance."""
    _require_normalized(cov_target)
    x = np.asarray(x_target, dtype=float)
    if x.shape != (cov_target.m,):
        raise ShapeError(f"input has shape {x.shape}, target covariance is {cov_target.m} x {cov_target.m}")
    out = forward(arch, params, cov_target, x)
    part = interval_partition(cov_target)
    steps = [StepFunction(part, out[:, f]) for f in range(out.shape[1])]
    return TransferResult(readout_mean(out), regional_contributions(out), steps)


def transfer_sweep(spec: GraphonSpec, signal: Callable, arch: VnnArchitecture, params: VnnParameters,
                   sizes: Sequence[int]) -> SweepReport:
    """Outputs on graphon-sampled covariances of increasing size.

    For each consecutive pair ``(m1, m2)`` the step-function L2 distance per
    final-layer output and the readout gap are recorded; the slope is fitted
    to the mean per-output distance against ``m1``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise ConfigError("transfer sweep needs at least three sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("sizes must be strictly increasing")
    results = []
    for m in sizes:
        cov = sample_covariance_from_graphon(spec, m)
        results.append(transfer_model(params, arch, cov, graphon_signal(signal, m)))
    dists = np.array([[step_function_l2_distance(f, g) for f, g in zip(r1.outputs, r2.outputs)]
                      for r1, r2 in zip(results, results[1:])])
    gaps = np.array([abs(r1.readout - r2.readout) for r1, r2 in zip(results, results[1:])])
    mean_d = dists.mean(axis=1)
    return SweepReport(
        "m", np.array(sizes[:-1], dtype=float), mean_d, dists.min(axis=1), dists.max(axis=1),
        loglog_slope(sizes[:-1], mean_d), trials=1, seed=0, samples=dists,
        extras={"sizes": sizes, "readouts": [r.readout for r in results],
                "readout_gaps": gaps.tolist(), "per_output_distances": dists.tolist()})


def transfer_envelope(sizes: Sequence[int], distances: Sequence[float], zeta: float = 1.0) -> np.ndarray:
    """Check ``d <= beta (m1^-r + m2^-r)``, ``r = 3 zeta / 2 - 1``, with beta fit on the first pair."""
    r = 1.5 * zeta - 1.0
    sizes = np.asarray(sizes, dtype=float)
    bound = sizes[:-1] ** -r + sizes[1:] ** -r
    d = np.asarray(distances, dtype=float)
    beta = d[0] / bound[0]
    return d <= beta * bound * (1 + 1e-12)


# --- stability -----------------------------------------------------------


def gaussian_samples(cov: CovarianceModel, n: int, rng: np.random.Generator,
                     exact_moments: bool = False) -> np.ndarray:
    """``n`` zero-mean Gaussian rows with covariance ``cov`` (PSD, possibly singular).

    With ``exact_moments`` the draw is whitened so its sample covariance
    equals ``cov`` to rounding, i.e. no sampling noise.
    """
    lam = np.clip(cov.eigenvalues, 0.0, None)
    keep = lam > 1e-12 * max(lam[0], 1e-300)
    v = cov.eigenvectors[:, keep]
    r = int(keep.sum())
    z = rng.standard_normal((n, r))
    if exact_moments:
        if n <= r:
            raise ConfigError("exact moments need more samples than the covariance rank")
        z = z - z.mean(axis=0)
        q, _ = np.linalg.qr(z)
        z = q * math.sqrt(n - 1)
    return (z * np.sqrt(lam[keep])) @ v.T


def stability_sweep(spec: GraphonSpec | Callable, m: int, arch: VnnArchitecture, params: VnnParameters,
                    sample_counts: Sequence[int], trials: int = 20, seed: int = 0,
                    exact_moments: bool = False, normalize_estimate: bool = True) -> SweepReport:
    """Output error ``||Phi(x; C_hat_n) - Phi(x; C_m)||_F`` against sample count n.

    ``C_m`` is the graphon-sampled (normalized) covariance, used as the
    ground-truth ensemble covariance; each trial draws n Gaussian samples
    from it and one probe input ``x``.
    """
    counts = [int(n) for n in sample_counts]
    if len(counts) < 4:
        raise ConfigError("stability sweep needs at least four sample counts")
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ConfigError("sample counts must be strictly increasing")
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    cov = sample_covariance_from_graphon(spec, m)
    errs = np.empty((len(counts), trials))
    ill = [n for n in counts if n <= m]
    if ill:
        warnings.warn(f"sample counts {ill} do not exceed m={m}; estimates are rank deficient", RuntimeWarning)
    for t in range(trials):
        rng = make_rng(seed, "stability", t)
        x = gaussian_samples(cov, 1, rng)[0]
        ref = forward(arch, params, cov, x)
        for i, n in enumerate(counts):
            data = gaussian_samples(cov, n, make_rng(seed, "stability", t, n), exact_moments)
            est = estimate_sample_covariance(data)
            if normalize_estimate:
                est = normalize_spectrum(est)
            errs[i, t] = float(np.linalg.norm(forward(arch, params, est, x) - ref))
    med = np.median(errs, axis=1)
    q25, q75 = np.percentile(errs, [25, 75], axis=1)
    return SweepReport("n", np.array(counts, dtype=float), med, q25, q75, loglog_slope(counts, med),
                       trials, seed, samples=errs, extras={"m": m, "rank_deficient_counts": ill})


# --- convergence series --------------------------------------------------


@dataclass
class ConvergenceReport:
    sizes: list[int]
    distances: list[float]
    exact: list[bool]
    cross_distances: dict[int, float] = field(default_factory=dict)

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))

    def summary(self) -> dict:
        return {"sizes": self.sizes, "distances": self.distances, "exact": self.exact,
                "strictly_decreasing": self.decreasing,
                "cross_distances": {str(k): v for k, v in self.cross_distances.items()}}


def convergence_series(spec: GraphonSpec | Callable, sizes: Sequence[int], overlay: str = "interval",
                       cross_spec: GraphonSpec | Callable | None = None, cross_sizes: Sequence[int] = (),
                       seed: int = 0, restarts: int = 16) -> ConvergenceReport:
    """Overlay cut distances between consecutive graphon-sampled covariances.

    If ``cross_spec`` is given, the distance from each series member of size
    in ``cross_sizes`` to the equal-size sample of ``cross_spec`` is also
    reported.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise ConfigError("convergence series needs at least three sizes")
    mats = {m: trace_normalize(sample_covariance_from_graphon(spec, m)) for m in sizes}
    dists, exact = [], []
    for a, b in zip(sizes, sizes[1:]):
        d, ex = cut_distance_overlay(mats[a], mats[b], overlay=overlay, seed=seed, restarts=restarts)
        dists.append(d)
        exact.append(ex)
    cross = {}
    if cross_spec is not None:
        for m in cross_sizes:
            other = trace_normalize(sample_covariance_from_graphon(cross_spec, m))
            base = mats[m] if m in mats else trace_normalize(sample_covariance_from_graphon(spec, m))
            cross[int(m)] = cut_distance_overlay(base, other, overlay=overlay, seed=seed, restarts=restarts)[0]
    return ConvergenceReport(sizes, dists, exact, cross)


# --- synthetic training task ---------------------------------------------


def graphon_cohort(spec: GraphonSpec | Callable, m: int, n: int, seed: int, noise: float = 0.1,
                   nugget: float = 0.05, scale: float = 5.0) -> CohortTable:
    """Synthetic linear regression cohort on a graphon-sampled covariance.

    Features are ``1 + N(0, C_m + nugget I)``; the target is
    ``scale * mean(x + C_m x)`` plus Gaussian noise, i.e. ``y = a^T x + e`` with
    ``a`` in the family a two-tap filter with mean readout can represent.  The
    network has no bias term, so the target deliberately has no intercept.
    """
    cov = sample_covariance_from_graphon(spec, m)
    rng = make_rng(seed, "graphon-cohort", m)
    full = CovarianceModel.from_matrix(cov.matrix + nugget * np.eye(m))
    x = gaussian_samples(full, n, rng) + 1.0
    y = scale * (x + x @ cov.matrix).mean(axis=1) + noise * rng.standard_normal(n)
    return CohortTable.from_arrays(x, y)


def transfer_batch(params: VnnParameters, arch: VnnArchitecture, cov_target: CovarianceModel, x) -> np.ndarray:
    """Readouts for a batch of inputs on a target covariance."""
    _require_normalized(cov_target)
    return readout_mean(forward_batch(arch, params, cov_target, x))
