"""Per-subject features plus phenotype (age, sex, diagnosis, severity)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IngestError, InvalidDataError, ShapeError

SEXES = ("F", "M")
DIAGNOSES = ("HC", "D")


@dataclass(frozen=True)
class CohortTable:
    subject_ids: tuple[str, ...]
    features: np.ndarray
    feature_names: tuple[str, ...]
    age: np.ndarray
    sex: np.ndarray
    diagnosis: np.ndarray
    severity: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=float)
        n = len(self.subject_ids)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ShapeError(f"features must be {n} x m, got {feats.shape}")
        if len(set(self.subject_ids)) != n:
            seen, dup = set(), None
            for s in self.subject_ids:
                if s in seen:
                    dup = s
                    break
                seen.add(s)
            raise IngestError(f"duplicate subject_id {dup!r}")
        if len(self.feature_names) != feats.shape[1]:
            raise ShapeError("feature_names length does not match feature count")
        if not np.all(np.isfinite(feats)):
            raise InvalidDataError("features contain non-finite values")
        age = np.array(self.age, dtype=float)
        sex = np.array(self.sex, dtype=object)
        dx = np.array(self.diagnosis, dtype=object)
        sev = np.array(self.severity, dtype=float) if self.severity is not None else np.full(n, np.nan)
        for name, arr in (("age", age), ("sex", sex), ("diagnosis", dx), ("severity", sev)):
            if arr.shape != (n,):
                raise ShapeError(f"{name} must have one entry per subject")
        if not np.all(np.isfinite(age)) or np.any(age <= 0):
            raise InvalidDataError("ages must be positive and finite")
        if not set(sex.tolist()) <= set(SEXES):
            raise InvalidDataError(f"sex values must be in {SEXES}")
        if not set(dx.tolist()) <= set(DIAGNOSES):
            raise InvalidDataError(f"diagnosis values must be in {DIAGNOSES}")
        for arr in (feats, age, sev):
            arr.setflags(write=False)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "feature_names", tuple(str(s) for s in self.feature_names))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "age", age)
        object.__setattr__(self, "sex", sex)
        object.__setattr__(self, "diagnosis", dx)
        object.__setattr__(self, "severity", sev)

    @classmethod
    def from_arrays(cls, features, targets, sex=None, diagnosis=None, severity=None,
                    subject_ids: Sequence[str] | None = None,
                    feature_names: Sequence[str] | None = None) -> "CohortTable":
        """Cohort from bare arrays; ``targets`` play the role of age."""
        features = np.asarray(features, dtype=float)
        n, m = features.shape
        return cls(
            tuple(subject_ids) if subject_ids is not None else tuple(f"s{i:05d}" for i in range(n)),
            features,
            tuple(feature_names) if feature_names is not None else tuple(f"region_{j + 1}" for j in range(m)),
            np.asarray(targets, dtype=float),
            np.asarray(sex if sex is not None else ["F"] * n, dtype=object),
            np.asarray(diagnosis if diagnosis is not None else ["HC"] * n, dtype=object),
            np.asarray(severity, dtype=float) if severity is not None else np.full(n, np.nan),
        )

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "CohortTable":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return CohortTable(
            tuple(self.subject_ids[i] for i in idx), self.features[idx], self.feature_names,
            self.age[idx], self.sex[idx], self.diagnosis[idx], self.severity[idx])

    def group(self, label: str) -> "CohortTable":
        return self.subset(self.diagnosis == label)

    @property
    def is_hc(self) -> np.ndarray:
        return self.diagnosis == "HC"

    @property
    def sex_indicator(self) -> np.ndarray:
        """0/1 coding with ``M`` = 1."""
        return (self.sex == "M").astype(float)
