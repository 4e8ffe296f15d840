"""Interpretable brain-age analysis on top of a VNN trained on healthy controls.

Pipeline: regional residuals ``r = p - y_hat`` per subject, age-bias
correction fitted on controls, the brain-age gap (Delta-Age), per-region
group-difference scans, robustness counts over an ensemble, alignment of
residual populations with covariance eigenvectors, and sensitivity of the
significant set to the composition of the covariance sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cohort import CohortTable
from .covariance import CovarianceModel, estimate_sample_covariance, normalize_spectrum
from .errors import ConfigError, DegenerateSampleError, InvalidDataError, ShapeError
from .graphon import get_graphon, sample_covariance_from_graphon
from .model import VnnArchitecture, VnnParameters, forward_batch, readout_mean, regional_contributions
from .rng import make_rng
from .stats import ancova, bonferroni, cohens_d, oneway_anova, pearson
from .training import TrainedEnsemble

ALPHA = 0.05


# --- synthetic cohort ----------------------------------------------------


@dataclass(frozen=True)
class PlantedTruth:
    """Ground truth of a synthetic cohort: where and how atrophy was planted."""

    regions: tuple[int, ...]
    eigen_index: int
    direction: np.ndarray  # unit-free loading on each region (zero off the planted set)
    shift_sd: float


def synthetic_cohort(n_hc: int = 400, n_d: int = 150, m: int = 32, graphon: str = "cosine2",
                     planted: Sequence[int] | None = None, n_planted: int = 10, eigen_index: int = 0,
                     shift_sd: float = 2.0, age_range: tuple[float, float] = (55.0, 85.0),
                     base_thickness: float = 2.5, regional_sd: float = 0.1, nugget: float = 0.8,
                     aging_rate: float = 0.01, planted_aging_boost: float = 20.0,
                     seed: int = 0) -> tuple[CohortTable, PlantedTruth]:
    """Cortical-thickness-like cohort with planted disease atrophy.

    Regional noise has correlation from a graphon-sampled matrix plus a
    nugget.  Thickness thins linearly with age at ``aging_rate`` regional
    SDs per year, faster by a factor ``1 + planted_aging_boost`` in the
    planted regions.  D subjects additionally lose ``shift_sd`` regional SDs
    times a per-subject severity (mean 1) along eigenvector ``eigen_index``
    of the population covariance, restricted to the planted regions and
    oriented so the shift thins tissue.
    """
    if n_hc < 2 or n_d < 2:
        raise ConfigError("each group needs at least two subjects")
    rng = make_rng(seed, "synthetic-cohort")
    g = sample_covariance_from_graphon(get_graphon(graphon), m).matrix
    corr = g / np.sqrt(np.outer(np.diag(g), np.diag(g)))
    noise_cov = regional_sd**2 * ((1 - nugget) * corr + nugget * np.eye(m))
    if planted is None:
        if not 1 <= n_planted <= m:
            raise ConfigError(f"n_planted must lie in [1, {m}], got {n_planted}")
        planted = np.sort(make_rng(seed, "planted").choice(m, size=n_planted, replace=False))
    planted = tuple(int(j) for j in planted)
    if len(set(planted)) != len(planted) or min(planted) < 0 or max(planted) >= m:
        raise ConfigError("planted regions must be distinct indices in [0, m)")
    in_r = np.zeros(m, dtype=bool)
    in_r[list(planted)] = True
    rate = aging_rate * regional_sd * (1.0 + planted_aging_boost * in_r)
    age_var = (age_range[1] - age_range[0]) ** 2 / 12.0
    population = noise_cov + age_var * np.outer(rate, rate)
    vec = CovarianceModel.from_matrix(population).eigenvectors[:, eigen_index].copy()
    vec[~in_r] = 0.0
    if np.allclose(vec, 0):
        raise ConfigError("chosen eigenvector vanishes on the planted regions")
    vec = vec / np.max(np.abs(vec))
    if vec @ rate < 0:  # orient along aging, i.e. thinning
        vec = -vec
    n = n_hc + n_d
    age = rng.uniform(*age_range, size=n)
    sex = np.where(rng.uniform(size=n) < 0.5, "F", "M").astype(object)
    dx = np.array(["HC"] * n_hc + ["D"] * n_d, dtype=object)
    severity = np.full(n, np.nan)
    severity[n_hc:] = rng.gamma(4.0, 0.25, size=n_d)  # mean 1
    noise = rng.standard_normal((n, m)) @ np.linalg.cholesky(noise_cov).T
    mid = 0.5 * (age_range[0] + age_range[1])
    x = base_thickness - np.outer(age - mid, rate) + noise
    x[n_hc:] -= severity[n_hc:, None] * (shift_sd * regional_sd * vec)[None, :]
    cohort = CohortTable(tuple(f"sub-{i:04d}" for i in range(n)), x,
                         tuple(f"region_{j + 1}" for j in range(m)), age, sex, dx, severity)
    return cohort, PlantedTruth(planted, eigen_index, vec, shift_sd)


# --- residuals and Delta-Age ---------------------------------------------


def regional_residuals(arch: VnnArchitecture, params: VnnParameters, cov_combined, features) -> np.ndarray:
    """``r[a] = p[a] - y_hat`` for each subject (rows) and region (columns)."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    out = forward_batch(arch, params, cov_combined, x[None, :] if single else x)
    p = regional_contributions(out)
    r = p - p.mean(axis=1, keepdims=True)
    return r[0] if single else r


def age_bias_fit(predictions, ages) -> tuple[float, float]:
    """Least-squares fit ``y_hat - y = a_bias * y + b_bias`` (controls only)."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(ages, dtype=float).ravel()
    if p.shape != y.shape:
        raise ShapeError("predictions and ages differ in length")
    if y.size < 3:
        raise DegenerateSampleError("age-bias fit needs at least three controls")
    yc = y - y.mean()
    sxx = float(yc @ yc)
    if sxx == 0:
        raise DegenerateSampleError("age-bias fit needs age variance")
    gap = p - y
    a = float(yc @ (gap - gap.mean())) / sxx
    return a, float(gap.mean() - a * y.mean())


def corrected_brain_age(predictions, ages, a_bias: float, b_bias: float):
    return np.asarray(predictions, dtype=float) - (a_bias * np.asarray(ages, dtype=float) + b_bias)


def delta_age(predictions, ages, a_bias: float, b_bias: float):
    """``Delta = y_hat_B - y`` with ``y_hat_B = y_hat - (a_bias * y + b_bias)``."""
    d = corrected_brain_age(predictions, ages, a_bias, b_bias) - np.asarray(ages, dtype=float)
    return float(d) if np.ndim(d) == 0 else d


@dataclass
class DeltaAgeReport:
    a_bias: float
    b_bias: float
    predictions: np.ndarray
    corrected: np.ndarray
    delta: np.ndarray
    group_means: dict[str, float]
    group_sds: dict[str, float]
    cohens_d: float
    ancova_p: float
    partial_eta_sq: float
    severity_pearson: float | None

    def summary(self) -> dict:
        return {"a_bias": self.a_bias, "b_bias": self.b_bias, "group_means": self.group_means,
                "group_sds": self.group_sds, "cohens_d": self.cohens_d, "ancova_p": self.ancova_p,
                "partial_eta_sq": self.partial_eta_sq, "severity_pearson": self.severity_pearson}


def delta_age_report(predictions, cohort: CohortTable) -> DeltaAgeReport:
    """Bias-corrected Delta-Age with D-vs-HC statistics.

    The bias fit uses controls only.  Group comparison: Cohen's d and an
    ANCOVA on Delta-Age with age and sex as covariates.  The severity
    correlation is computed within the D group.
    """
    pred = np.asarray(predictions, dtype=float)
    if pred.shape != (cohort.n,):
        raise ShapeError("one prediction per subject is required")
    hc, dd = cohort.is_hc, cohort.diagnosis == "D"
    a, b = age_bias_fit(pred[hc], cohort.age[hc])
    corr = corrected_brain_age(pred, cohort.age, a, b)
    delta = corr - cohort.age
    means = {g: float(delta[mask].mean()) for g, mask in (("HC", hc), ("D", dd)) if mask.any()}
    sds = {g: float(delta[mask].std(ddof=1)) for g, mask in (("HC", hc), ("D", dd)) if mask.sum() > 1}
    d = p = eta = float("nan")
    sev_r = None
    if hc.sum() >= 2 and dd.sum() >= 2:
        d = cohens_d(delta[dd], delta[hc])
        _, p, eta = ancova(delta, cohort.diagnosis, np.column_stack([cohort.age, cohort.sex_indicator]))
        sev = cohort.severity[dd]
        ok = np.isfinite(sev)
        if ok.sum() >= 3 and np.std(sev[ok]) > 0:
            sev_r = pearson(delta[dd][ok], sev[ok])
    return DeltaAgeReport(a, b, pred, corr, delta, means, sds, d, p, eta, sev_r)


# --- group-difference scan -----------------------------------------------


@dataclass
class RegionalResidualReport:
    region_names: tuple[str, ...]
    f_stat: np.ndarray
    p_anova: np.ndarray
    p_bonferroni: np.ndarray
    p_ancova: np.ndarray
    elevated: np.ndarray
    mean_hc: np.ndarray
    mean_d: np.ndarray
    sd_hc: np.ndarray
    sd_d: np.ndarray
    alpha: float = ALPHA

    @property
    def significant(self) -> np.ndarray:
        return (self.p_bonferroni < self.alpha) & (self.p_ancova < self.alpha) & self.elevated

    @property
    def significant_set(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.significant).tolist())

    def rows(self) -> list[dict]:
        return [{"region": name, "f_stat": self.f_stat[j], "p_anova": self.p_anova[j],
                 "p_bonferroni": self.p_bonferroni[j], "p_ancova": self.p_ancova[j],
                 "mean_hc": self.mean_hc[j], "mean_d": self.mean_d[j], "sd_hc": self.sd_hc[j],
                 "sd_d": self.sd_d[j], "elevated": int(self.elevated[j]),
                 "significant": int(self.significant[j])}
                for j, name in enumerate(self.region_names)]


def group_difference_scan(r_hc, r_d, ages_hc, ages_d, sex_hc, sex_d,
                          region_names: Sequence[str] | None = None,
                          alpha: float = ALPHA) -> RegionalResidualReport:
    """Per-region ANOVA (Bonferroni over regions) and ANCOVA (age, sex) on residuals.

    ``sex_*`` are 0/1 indicators.  A region is significant when the
    corrected ANOVA p and the uncorrected ANCOVA p are both below ``alpha``
    and the D group mean residual exceeds the HC mean.
    """
    r_hc = np.asarray(r_hc, dtype=float)
    r_d = np.asarray(r_d, dtype=float)
    if r_hc.ndim != 2 or r_d.ndim != 2 or r_hc.shape[1] != r_d.shape[1]:
        raise ShapeError("residual populations must be (subjects, regions) with equal region counts")
    n_hc, m = r_hc.shape
    n_d = r_d.shape[0]
    if n_hc < 2 or n_d < 2:
        raise DegenerateSampleError("each group needs at least two subjects")
    names = tuple(region_names) if region_names is not None else tuple(f"region_{j + 1}" for j in range(m))
    group = np.array(["HC"] * n_hc + ["D"] * n_d)
    covs = np.column_stack([np.concatenate([ages_hc, ages_d]),
                            np.concatenate([sex_hc, sex_d]).astype(float)])
    f = np.empty(m)
    p_an = np.empty(m)
    p_ac = np.empty(m)
    for j in range(m):
        try:
            f[j], p_an[j] = oneway_anova([r_hc[:, j], r_d[:, j]])
            _, p_ac[j], _ = ancova(np.concatenate([r_hc[:, j], r_d[:, j]]), group, covs)
        except DegenerateSampleError:
            # constant residuals (e.g. a dead relu network) carry no evidence
            f[j], p_an[j], p_ac[j] = 0.0, 1.0, 1.0
    mh, md = r_hc.mean(axis=0), r_d.mean(axis=0)
    return RegionalResidualReport(names, f, p_an, bonferroni(p_an, m), p_ac, md > mh, mh, md,
                                  r_hc.std(axis=0, ddof=1), r_d.std(axis=0, ddof=1), alpha)


def combined_covariance(cohort: CohortTable) -> CovarianceModel:
    """Normalized covariance of the pooled HC and D features."""
    return normalize_spectrum(estimate_sample_covariance(cohort.features))


def scan_cohort(arch: VnnArchitecture, params: VnnParameters, cohort: CohortTable,
                cov_combined: CovarianceModel | None = None, alpha: float = ALPHA) -> RegionalResidualReport:
    cov = combined_covariance(cohort) if cov_combined is None else cov_combined
    r = regional_residuals(arch, params, cov, cohort.features)
    hc, dd = cohort.is_hc, cohort.diagnosis == "D"
    sx = cohort.sex_indicator
    return group_difference_scan(r[hc], r[dd], cohort.age[hc], cohort.age[dd], sx[hc], sx[dd],
                                 cohort.feature_names, alpha)


@dataclass
class RobustnessResult:
    counts: np.ndarray
    flags: np.ndarray  # (members, regions) booleans
    reports: list[RegionalResidualReport] = field(default_factory=list)

    def rows(self, names: Sequence[str]) -> list[dict]:
        return [{"region": name, "count": int(c)} for name, c in zip(names, self.counts)]


def robustness_count(ensemble: TrainedEnsemble, cohort: CohortTable,
                     cov_combined: CovarianceModel | None = None, alpha: float = ALPHA) -> RobustnessResult:
    """Number of ensemble members for which each region is significant."""
    if len(ensemble) == 0:
        raise ConfigError("ensemble is empty")
    cov = combined_covariance(cohort) if cov_combined is None else cov_combined
    reports = [scan_cohort(ensemble.arch, mem.params, cohort, cov, alpha) for mem in ensemble.members]
    flags = np.array([rep.significant for rep in reports])
    return RobustnessResult(flags.sum(axis=0), flags, reports)


def ensemble_predictions(ensemble: TrainedEnsemble, features, cov=None) -> np.ndarray:
    """Mean prediction over ensemble members."""
    cov = ensemble.covariance if cov is None else cov
    return np.mean([readout_mean(forward_batch(ensemble.arch, mem.params, cov, features))
                    for mem in ensemble.members], axis=0)


# --- eigenvector alignment -----------------------------------------------


def eigen_alignment(vectors, cov: CovarianceModel, cv_threshold: float = 0.3) -> np.ndarray:
    """Mean ``|<v_bar, v_i>|`` over a population of vectors, per eigenvector.

    Each population vector is scaled to unit norm.  Eigenvectors whose
    population coefficient of variation of ``|<v_bar, v_i>|`` exceeds
    ``cv_threshold`` are set to 0.
    """
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != cov.m:
        raise ShapeError(f"vectors have {v.shape[1]} entries, covariance has {cov.m}")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise InvalidDataError("zero vector in alignment population")
    cosines = np.abs((v / norms[:, None]) @ cov.eigenvectors)  # (population, eigenvectors)
    mean = cosines.mean(axis=0)
    sd = cosines.std(axis=0, ddof=1) if v.shape[0] > 1 else np.zeros(cov.m)
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = np.where(mean > 0, sd / mean, np.inf)
    return np.where(cv > cv_threshold, 0.0, mean)


# --- covariance-composition perturbation ---------------------------------


def jaccard(a: frozenset, b: frozenset) -> float:
    """Overlap of two sets; 1.0 when both are empty."""
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


@dataclass
class CompositionPoint:
    n_hc: int
    n_d: int
    report: RegionalResidualReport
    overlap: float


def composition_perturbation(arch: VnnArchitecture, params: VnnParameters, cohort: CohortTable,
                             schedule: Sequence[tuple[int, int]], seed: int = 0,
                             alpha: float = ALPHA) -> list[CompositionPoint]:
    """Re-run the scan with covariances estimated from subsets of the cohort.

    Schedule entries ``(n_hc, n_d)`` give how many HC and D subjects (a
    seeded random subset) enter the covariance estimate.  Residual scans
    always use the full cohort.  Overlap is the Jaccard index of the
    significant set against the full-composition baseline.
    """
    hc_idx = np.flatnonzero(cohort.is_hc)
    d_idx = np.flatnonzero(cohort.diagnosis == "D")
    rng = make_rng(seed, "composition")
    hc_order, d_order = rng.permutation(hc_idx), rng.permutation(d_idx)
    base = scan_cohort(arch, params, cohort, combined_covariance(cohort), alpha)
    out = []
    for n_hc, n_d in schedule:
        if n_hc < 0 or n_d < 0 or n_hc > hc_idx.size or n_d > d_idx.size:
            raise ConfigError(f"inclusion ({n_hc}, {n_d}) outside the cohort sizes")
        if n_hc + n_d < 2:
            raise ConfigError("covariance estimate needs at least two included subjects")
        rows = np.concatenate([hc_order[:n_hc], d_order[:n_d]])
        cov = normalize_spectrum(estimate_sample_covariance(cohort.features[rows]))
        rep = scan_cohort(arch, params, cohort, cov, alpha)
        out.append(CompositionPoint(int(n_hc), int(n_d), rep, jaccard(rep.significant_set, base.significant_set)))
    return out


def cohort_summary(cohort: CohortTable) -> dict:
    out = {"n": cohort.n, "m": cohort.m}
    for g in ("HC", "D"):
        mask = cohort.diagnosis == g
        if mask.any():
            out[g] = {"n": int(mask.sum()), "age_mean": float(cohort.age[mask].mean()),
                      "male_fraction": float(cohort.sex_indicator[mask].mean())}
    return out


def run_brainage(cohort: CohortTable, arch: VnnArchitecture, config, seed: int | None = None):
    """Train an ensemble on the HC group and run the full analysis.

    Returns ``(ensemble, delta_report, robustness, cov_combined)``.
    """
    from .training import train_ensemble

    ensemble = train_ensemble(cohort.group("HC"), arch, config, seed)
    cov = combined_covariance(cohort)
    pred = ensemble_predictions(ensemble, cohort.features, cov)
    return ensemble, delta_age_report(pred, cohort), robustness_count(ensemble, cohort, cov), cov

