"""Multi-layer MIMO coVariance neural network.

Layer ``l`` maps ``F_in`` graph signals to ``F_out`` signals through a bank
of ``F_out x F_in`` polynomial filters followed by a pointwise
nonlinearity::

    x_l[f] = sigma( sum_g H_fg(C) x_{l-1}[g] )

Taps for a layer are stored as an array of shape ``(F_out, F_in, K+1)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .covariance import CovarianceModel
from .errors import ConfigError, ModelFormatError, NumericError, ShapeError, VersionError
from .rng import make_rng

FORMAT_VERSION = 1
FORMAT_NAME = "vnnkit-model"
NONLINEARITIES = ("relu", "tanh", "identity")
ARCH_PRESETS = {
    "small": "1,4,2;4,4,2;4,1,2",
    "ftdc100": "1,26,2;26,26,2;26,1,2",
    "ftdc500": "1,27,4;27,27,2;27,1,2",
}


@dataclass(frozen=True)
class VnnArchitecture:
    """Layer chain ``(f_in, f_out, num_taps)``; the first layer takes one signal.

    The nonlinearity follows every layer unless ``final_activation`` is
    off, in which case the last layer is linear.
    """

    layers: tuple[tuple[int, int, int], ...]
    nonlinearity: str = "relu"
    final_activation: bool = True

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.layers)
        if not layers:
            raise ConfigError("architecture needs at least one layer")
        for i, layer in enumerate(layers):
            if len(layer) != 3 or min(layer) < 1:
                raise ConfigError(f"layer {i} must be (f_in, f_out, num_taps) with counts >= 1, got {layer}")
        if layers[0][0] != 1:
            raise ConfigError("first layer must take a single input signal (f_in = 1)")
        for i in range(len(layers) - 1):
            if layers[i][1] != layers[i + 1][0]:
                raise ConfigError(f"layer {i} outputs {layers[i][1]} signals but layer {i + 1} expects {layers[i + 1][0]}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}; choose from {NONLINEARITIES}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def parse(cls, text: str, nonlinearity: str = "relu", final_activation: bool = True) -> "VnnArchitecture":
        """Parse ``"1,26,2;26,26,2;26,1,2"`` style layer strings."""
        try:
            layers = [tuple(int(t) for t in chunk.split(",")) for chunk in text.split(";") if chunk.strip()]
        except ValueError as exc:
            raise ConfigError(f"cannot parse architecture {text!r}") from exc
        return cls(tuple(layers), nonlinearity, final_activation)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def out_features(self) -> int:
        return self.layers[-1][1]

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        return [(fo, fi, k) for fi, fo, k in self.layers]

    def activation(self, layer: int) -> str:
        """Nonlinearity applied after ``layer``."""
        if layer == self.num_layers - 1 and not self.final_activation:
            return "identity"
        return self.nonlinearity

    def describe(self) -> str:
        return ";".join(",".join(str(v) for v in layer) for layer in self.layers)


def parameter_count(arch: VnnArchitecture) -> int:
    """Number of learnable taps, ``sum_l f_in * f_out * num_taps``."""
    return sum(fi * fo * k for fi, fo, k in arch.layers)


@dataclass
class VnnParameters:
    """Tap tensors, one ``(F_out, F_in, K+1)`` array per layer."""

    taps: list[np.ndarray]

    def __post_init__(self):
        self.taps = [np.array(t, dtype=float) for t in self.taps]

    def check(self, arch: VnnArchitecture) -> None:
        shapes = arch.tap_shapes()
        if len(self.taps) != len(shapes):
            raise ShapeError(f"{len(self.taps)} tap tensors for {len(shapes)} layers")
        for i, (t, s) in enumerate(zip(self.taps, shapes)):
            if t.shape != s:
                raise ShapeError(f"layer {i} taps have shape {t.shape}, architecture needs {s}")
            if not np.all(np.isfinite(t)):
                raise NumericError(f"layer {i} taps are not finite")

    def copy(self) -> "VnnParameters":
        return VnnParameters([t.copy() for t in self.taps])

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.taps])

    @classmethod
    def zeros(cls, arch: VnnArchitecture) -> "VnnParameters":
        return cls([np.zeros(s) for s in arch.tap_shapes()])

    def equal(self, other: "VnnParameters") -> bool:
        return len(self.taps) == len(other.taps) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.taps, other.taps))


def init_parameters(arch: VnnArchitecture, seed: int, attempt: int = 0) -> VnnParameters:
    """Uniform taps in ``[-b, b]`` with ``b = 1/sqrt(f_in * num_taps)`` per layer.

    ``attempt`` selects an independent redraw from the same seed.
    """
    rng = make_rng(seed, "init") if attempt == 0 else make_rng(seed, "init", attempt)
    taps = []
    for fi, fo, k in arch.layers:
        bound = 1.0 / math.sqrt(fi * k)
        taps.append(rng.uniform(-bound, bound, size=(fo, fi, k)))
    return VnnParameters(taps)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(float)  # subgradient 0 at z == 0
    if name == "tanh":
        return 1.0 - out * out
    return np.ones_like(z)


@dataclass
class LayerCache:
    powers: np.ndarray  # (K+1, B, m, F_in): C^k applied to the layer input
    pre: np.ndarray  # (B, m, F_out) pre-activation
    out: np.ndarray  # (B, m, F_out)


@dataclass
class LayerActivations:
    """Forward cache for a batch, consumed by backpropagation."""

    layers: list[LayerCache] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.layers[-1].out


def _as_batch(x, m: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m:
        raise ShapeError(f"inputs must have {m} features, got shape {x.shape if not single else x.shape[1:]}")
    return x, single


def forward_batch(arch: VnnArchitecture, params: VnnParameters, cov, x,
                  cache: bool = False):
    """Evaluate the network on a batch ``x`` of shape ``(B, m)``.

    Returns outputs of shape ``(B, m, F_last)``, plus a
    :class:`LayerActivations` cache when ``cache`` is set.
    """
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)
    params.check(arch)
    xb, _ = _as_batch(x, c.shape[0])
    a = xb[:, :, None]
    acts = LayerActivations()
    for li, taps in enumerate(params.taps):
        k = taps.shape[2]
        powers = np.empty((k,) + a.shape)
        powers[0] = a
        for j in range(1, k):
            powers[j] = c @ powers[j - 1]
        pre = np.einsum("kbmg,fgk->bmf", powers, taps, optimize=True)
        out = _activate(arch.activation(li), pre)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite activation in forward pass")
        if cache:
            acts.layers.append(LayerCache(powers, pre, out))
        a = out
    return (a, acts) if cache else a


def forward(arch: VnnArchitecture, params: VnnParameters, cov, x) -> np.ndarray:
    """Network output ``Phi(x; C, H)`` for one m-vector, shape ``(m, F_last)``."""
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("forward takes a single m-vector; use forward_batch for batches")
    return forward_batch(arch, params, c, x[None, :])[0]


def readout_mean(output) -> float | np.ndarray:
    """Unweighted mean over all ``m x F`` final-layer entries.

    Accepts a single ``(m, F)`` output or a batch ``(B, m, F)``.
    """
    out = np.asarray(output, dtype=float)
    if out.ndim < 2 or out.shape[-1] == 0 or out.shape[-2] == 0:
        raise ShapeError(f"readout needs a non-empty m x F output, got shape {out.shape}")
    r = out.mean(axis=(-2, -1))
    return float(r) if r.ndim == 0 else r


def regional_contributions(output) -> np.ndarray:
    """Per-node mean over the F final-layer outputs (one value per region)."""
    out = np.asarray(output, dtype=float)
    if out.ndim < 2 or out.shape[-1] == 0 or out.shape[-2] == 0:
        raise ShapeError(f"contributions need a non-empty m x F output, got shape {out.shape}")
    return out.mean(axis=-1)


def predict(arch: VnnArchitecture, params: VnnParameters, cov, x) -> np.ndarray:
    """Scalar predictions for a batch of inputs."""
    return readout_mean(forward_batch(arch, params, cov, x))


# --- model documents -----------------------------------------------------


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def serialize(arch: VnnArchitecture, params: VnnParameters, meta: dict[str, Any] | None = None,
              covariance: CovarianceModel | None = None) -> str:
    """Versioned JSON model document.

    Taps are written with Python's shortest round-trip float repr, so a
    load reproduces them bit for bit.  When ``covariance`` is given its
    digest (and, for self-contained prediction, the matrix itself) is
    stored too.
    """
    params.check(arch)
    meta = dict(meta or {})
    payload = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "nonlinearity": arch.nonlinearity,
        "final_activation": arch.final_activation,
        "layers": [list(layer) for layer in arch.layers],
        "taps": [t.tolist() for t in params.taps],
        "covariance_digest": covariance.digest if covariance is not None else meta.pop("covariance_digest", None),
        "metadata": meta,
    }
    if covariance is not None:
        payload["covariance"] = {"normalized": covariance.normalized, "matrix": covariance.matrix.tolist()}
    doc = {"checksum": _checksum(payload), **payload}
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


@dataclass
class ModelDocument:
    arch: VnnArchitecture
    params: VnnParameters
    meta: dict
    covariance_digest: str | None
    covariance: CovarianceModel | None


def deserialize(text: str) -> ModelDocument:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ModelFormatError(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a vnnkit model document")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format version {version!r} (this build reads {FORMAT_VERSION})")
    checksum = doc.pop("checksum", None)
    if checksum is None or checksum != _checksum(doc):
        raise ModelFormatError("model document checksum mismatch")
    try:
        arch = VnnArchitecture(tuple(tuple(layer) for layer in doc["layers"]), doc["nonlinearity"],
                               bool(doc.get("final_activation", True)))
        params = VnnParameters([np.array(t, dtype=float) for t in doc["taps"]])
        params.check(arch)
        cov = None
        if "covariance" in doc:
            cov = CovarianceModel.from_matrix(doc["covariance"]["matrix"], doc["covariance"]["normalized"])
            if doc.get("covariance_digest") and cov.digest != doc["covariance_digest"]:
                raise ModelFormatError("stored covariance does not match its digest")
        return ModelDocument(arch, params, doc.get("metadata", {}), doc.get("covariance_digest"), cov)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from exc


def same_architecture(a: VnnArchitecture, b: VnnArchitecture) -> bool:
    return a == b

