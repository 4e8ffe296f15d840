from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def random_spd(rng: np.random.Generator, m: int, gap: float = 0.05) -> np.ndarray:
    """SPD matrix with eigenvalues spread in [gap, 1] and separated by at least ``gap / m``."""
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    lam = np.sort(rng.uniform(gap, 1.0, size=m))[::-1]
    lam = np.maximum.accumulate((lam + np.arange(m)[::-1] * gap / m)[::-1])[::-1]
    return (q * lam) @ q.T


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def finite_difference_error(arch, params, cov, x, y, step: float = 1e-5) -> float:
    """Max elementwise relative error of ``backward`` against central differences."""
    from vnnkit.model import VnnParameters, forward_batch, readout_mean
    from vnnkit.training import backward, mse_loss

    def loss(p):
        return mse_loss(readout_mean(forward_batch(arch, p, cov, x)), y)

    _, grads = backward(arch, params, cov, x, y)
    worst = 0.0
    for li, t in enumerate(params.taps):
        for idx in np.ndindex(t.shape):
            up = [a.copy() for a in params.taps]
            dn = [a.copy() for a in params.taps]
            up[li][idx] += step
            dn[li][idx] -= step
            fd = (loss(VnnParameters(up)) - loss(VnnParameters(dn))) / (2 * step)
            an = grads[li][idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


@pytest.fixture(scope="session")
def transfer_setup():
    """A model trained at m=32 on a cosine2 graphon cohort: ``(spec, arch, params)``."""
    from vnnkit.graphon import get_graphon
    from vnnkit.model import VnnArchitecture
    from vnnkit.training import TrainConfig, train_model
    from vnnkit.transfer import graphon_cohort

    spec = get_graphon("cosine2")
    cohort = graphon_cohort(spec, 32, 400, seed=1)
    arch = VnnArchitecture.parse("1,4,2;4,2,2")
    params, _ = train_model(cohort, arch, TrainConfig(max_epochs=30, learning_rate=0.02), seed=1)
    return spec, arch, params


@pytest.fixture(scope="session")
def stability_report(transfer_setup):
    """The m=40 stability sweep over n in {100, 400, 1600, 6400} with 20 trials."""
    from vnnkit.transfer import stability_sweep

    spec, arch, params = transfer_setup
    return stability_sweep(spec, 40, arch, params, [100, 400, 1600, 6400], trials=20, seed=3)


BRAINAGE_ARCH = "1,4,2;4,4,2;4,1,2"


@pytest.fixture(scope="session")
def brainage_run():
    """Default synthetic cohort and a 20-member identity VNN ensemble trained on its controls.

    Returns ``(cohort, truth, ensemble, delta_report, robustness, cov)``.
    """
    from vnnkit.brainage import run_brainage, synthetic_cohort
    from vnnkit.model import VnnArchitecture
    from vnnkit.training import TrainConfig

    cohort, truth = synthetic_cohort()
    arch = VnnArchitecture.parse(BRAINAGE_ARCH, "identity")
    config = TrainConfig(max_epochs=60, learning_rate=0.1, ensemble_size=20)
    ensemble, report, robust, cov = run_brainage(cohort, arch, config, seed=0)
    return cohort, truth, ensemble, report, robust, cov
