"""MSE regression training for VNNs with hand-derived gradients and Adam."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortTable
from .covariance import CovarianceModel, estimate_sample_covariance, normalize_spectrum
from .errors import ConfigError, DegenerateSampleError, NumericError, ShapeError
from .model import (
    LayerActivations,
    VnnArchitecture,
    VnnParameters,
    _activation_grad,
    forward_batch,
    init_parameters,
    readout_mean,
)
from .rng import derive_seed, make_rng
from .stats import pearson

log = logging.getLogger(__name__)


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ in shape")
    if p.size == 0:
        raise ShapeError("mse of an empty batch is undefined")
    return float(np.mean((p - t) ** 2))


def backward(arch: VnnArchitecture, params: VnnParameters, cov, x, y,
             cache: LayerActivations | None = None) -> tuple[float, list[np.ndarray]]:
    """Batch MSE and its exact gradient with respect to every tap.

    Reverse accumulation through the layer recursion: for a layer with
    input powers ``P_k = C^k A`` and pre-activation ``Z``,
    ``dL/dh[f,g,k] = <dZ[:, :, f], P_k[:, :, :, g]>`` and the input
    adjoint is ``sum_k C^k (dZ h_k)`` (C is symmetric), evaluated by
    Horner's rule.
    """
    c = cov.matrix if isinstance(cov, CovarianceModel) else np.asarray(cov, dtype=float)
    y = np.asarray(y, dtype=float)
    if cache is None:
        _, cache = forward_batch(arch, params, c, x, cache=True)
    if len(cache.layers) != arch.num_layers:
        raise ShapeError("forward cache does not match the architecture")
    out = cache.output
    b, m, f_last = out.shape
    if y.shape != (b,):
        raise ShapeError(f"expected {b} targets, got shape {y.shape}")
    yhat = out.mean(axis=(1, 2))
    resid = yhat - y
    loss = float(np.mean(resid**2))
    d_out = np.broadcast_to((2.0 * resid / (b * m * f_last))[:, None, None], out.shape)

    grads: list[np.ndarray] = [None] * arch.num_layers  # type: ignore[list-item]
    for li in range(arch.num_layers - 1, -1, -1):
        lc = cache.layers[li]
        taps = params.taps[li]
        dz = d_out * _activation_grad(arch.activation(li), lc.pre, lc.out)
        grads[li] = np.einsum("bmf,kbmg->fgk", dz, lc.powers, optimize=True)
        if li == 0:
            break
        dp = np.einsum("bmf,fgk->kbmg", dz, taps, optimize=True)
        da = dp[-1]
        for k in range(dp.shape[0] - 2, -1, -1):
            da = c @ da + dp[k]
        d_out = da
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    return loss, grads


@dataclass
class AdamState:
    step: int
    first: list[np.ndarray]
    second: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: VnnParameters) -> "AdamState":
        return cls(0, [np.zeros_like(t) for t in params.taps], [np.zeros_like(t) for t in params.taps])


@dataclass(frozen=True)
class TrainConfig:
    test_fraction: float = 0.1
    val_fraction: float = 0.12  # carved from the training rows, per member
    batch_size: int = 16
    max_epochs: int = 100
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 10.0
    ensemble_size: int = 1
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.test_fraction + self.val_fraction > 1.0:
            raise ConfigError("split fractions sum to more than 1")
        if self.batch_size < 1 or self.ensemble_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, ensemble_size and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def adam_step(params: VnnParameters, grads, state: AdamState, config: TrainConfig) -> tuple[VnnParameters, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if len(grads) != len(params.taps) or any(g.shape != t.shape for g, t in zip(grads, params.taps)):
        raise ShapeError("gradient shapes do not match the parameters")
    b1, b2 = config.beta1, config.beta2
    t = state.step + 1
    first = [b1 * mo + (1 - b1) * g for mo, g in zip(state.first, grads)]
    second = [b2 * vo + (1 - b2) * g * g for vo, g in zip(state.second, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [p - config.learning_rate * (mo / c1) / (np.sqrt(vo / c2) + config.eps)
           for p, mo, vo in zip(params.taps, first, second)]
    return VnnParameters(new), AdamState(t, first, second)


def clip_gradients(grads, max_norm: float | None):
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return grads
    return [g * (max_norm / total) for g in grads]


@dataclass
class MemberResult:
    params: VnnParameters
    member_id: int
    seed: int
    epochs_run: int
    best_epoch: int
    train_mae: float
    val_mse: float
    test_mae: float = float("nan")
    test_pearson: float = float("nan")
    history: list[tuple[float, float]] = field(default_factory=list)  # (train_mse, val_mse)

    def metrics_row(self) -> dict:
        return {
            "member_id": self.member_id, "seed": self.seed, "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch, "train_mae": self.train_mae, "val_mse": self.val_mse,
            "test_mae": self.test_mae, "test_pearson": self.test_pearson,
        }


@dataclass
class TrainedEnsemble:
    arch: VnnArchitecture
    covariance: CovarianceModel
    members: list[MemberResult]
    train_index: np.ndarray
    test_index: np.ndarray

    @property
    def covariance_digest(self) -> str:
        return self.covariance.digest

    def __len__(self) -> int:
        return len(self.members)


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test split of ``n`` rows (sorted index arrays)."""
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n - n_test < 2:
        raise DegenerateSampleError(f"cannot split {n} rows with test fraction {test_fraction}")
    perm = make_rng(seed, "split").permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


MAX_INIT_ATTEMPTS = 20


def _live_init(arch: VnnArchitecture, cov, x, seed: int) -> VnnParameters:
    """First initialization whose outputs are not identically zero on ``x``.

    A relu network that outputs zero everywhere has zero gradient and can
    never train, so such draws are replaced by the next redraw.
    """
    for attempt in range(MAX_INIT_ATTEMPTS):
        params = init_parameters(arch, seed, attempt)
        if np.any(forward_batch(arch, params, cov, x) != 0.0):
            return params
    raise NumericError(f"no live initialization in {MAX_INIT_ATTEMPTS} attempts")


def fit_member(arch: VnnArchitecture, cov: CovarianceModel, x, y, config: TrainConfig,
               member_seed: int, member_id: int = 0) -> MemberResult:
    """Train one model on the rows ``x, y`` (the full training split).

    The rows are permuted with the member's stream, the last
    ``val_fraction`` of them held out for validation, and the taps from
    the epoch with the lowest validation MSE are returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = make_rng(member_seed, "member")
    n = x.shape[0]
    n_val = max(1, int(round(config.val_fraction * n)))
    if n - n_val < 1:
        raise DegenerateSampleError("no rows left for training after the validation split")
    perm = rng.permutation(n)
    tr, va = perm[:-n_val], perm[-n_val:]
    params = _live_init(arch, cov, x[tr], member_seed)
    state = AdamState.zeros_like(params)
    best, best_val, best_epoch = params.copy(), np.inf, 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = tr[rng.permutation(tr.size)]
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = backward(arch, params, cov, x[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"loss became {loss} at epoch {epoch}, batch starting {start}")
            params, state = adam_step(params, clip_gradients(grads, config.clip_norm), state, config)
        train_mse = mse_loss(readout_mean(forward_batch(arch, params, cov, x[tr])), y[tr])
        val_mse = mse_loss(readout_mean(forward_batch(arch, params, cov, x[va])), y[va])
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise NumericError(f"non-finite loss at epoch {epoch}: train={train_mse}, val={val_mse}")
        history.append((train_mse, val_mse))
        if val_mse < best_val:
            best, best_val, best_epoch = params.copy(), val_mse, epoch
    train_mae = float(np.mean(np.abs(readout_mean(forward_batch(arch, best, cov, x[tr])) - y[tr])))
    return MemberResult(best, member_id, member_seed, config.max_epochs, best_epoch, train_mae,
                        float(best_val), history=history)


def _prepare(cohort: CohortTable, config: TrainConfig, seed: int):
    min_rows = 3 * config.batch_size
    train_idx, test_idx = split_indices(cohort.n, config.test_fraction, seed)
    if train_idx.size < min_rows:
        raise DegenerateSampleError(
            f"training split has {train_idx.size} rows; need at least 3 x batch_size = {min_rows}")
    cov = normalize_spectrum(estimate_sample_covariance(cohort.features[train_idx]))
    return train_idx, test_idx, cov


def _score_test(arch, cov, member: MemberResult, x_test, y_test) -> None:
    pred = readout_mean(forward_batch(arch, member.params, cov, x_test))
    member.test_mae = float(np.mean(np.abs(pred - y_test)))
    varied = y_test.size > 2 and np.std(pred) > 0 and np.std(y_test) > 0
    member.test_pearson = pearson(pred, y_test) if varied else float("nan")


def _member_job(args):
    arch, cov, x, y, config, member_seed, member_id = args
    return fit_member(arch, cov, x, y, config, member_seed, member_id)


def train_ensemble(cohort: CohortTable, arch: VnnArchitecture, config: TrainConfig,
                   seed: int | None = None) -> TrainedEnsemble:
    """Train ``config.ensemble_size`` models over permutations of one training split.

    The train/test split and the (normalized) covariance come from the
    master seed and the training rows only; member ``i`` uses the stream
    ``(seed, "member", i)`` for its permutation, validation hold-out,
    initialization and batch order.
    """
    seed = config.seed if seed is None else seed
    train_idx, test_idx, cov = _prepare(cohort, config, seed)
    x_tr, y_tr = cohort.features[train_idx], cohort.age[train_idx]
    jobs = [(arch, cov, x_tr, y_tr, config, derive_seed(seed, "member", i), i)
            for i in range(config.ensemble_size)]
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            members = list(pool.map(_member_job, jobs))
    else:
        members = [_member_job(j) for j in jobs]
    for mem in members:
        _score_test(arch, cov, mem, cohort.features[test_idx], cohort.age[test_idx])
        log.info("member %d: best epoch %d, val mse %.4g, test mae %.4g",
                 mem.member_id, mem.best_epoch, mem.val_mse, mem.test_mae)
    return TrainedEnsemble(arch, cov, members, train_idx, test_idx)


def train_model(cohort: CohortTable, arch: VnnArchitecture, config: TrainConfig,
                seed: int | None = None) -> tuple[VnnParameters, dict]:
    """Train a single model; equivalent to a one-member ensemble."""
    one = TrainConfig(**{**config.__dict__, "ensemble_size": 1})
    ens = train_ensemble(cohort, arch, one, seed)
    mem = ens.members[0]
    metrics = mem.metrics_row()
    metrics["covariance_digest"] = ens.covariance_digest
    metrics["covariance"] = ens.covariance
    metrics["train_index"] = ens.train_index
    metrics["test_index"] = ens.test_index
    return mem.params, metrics
