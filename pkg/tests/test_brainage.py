import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vnnkit.brainage import (age_bias_fit, composition_perturbation, delta_age, delta_age_report, eigen_alignment,
                             ensemble_predictions, group_difference_scan, jaccard, regional_residuals,
                             robustness_count, scan_cohort, synthetic_cohort)
from vnnkit.cohort import CohortTable
from vnnkit.covariance import CovarianceModel
from vnnkit.errors import ConfigError, DegenerateSampleError, InvalidDataError, ShapeError
from vnnkit.model import VnnArchitecture, VnnParameters
from vnnkit.training import TrainConfig, TrainedEnsemble, train_ensemble, train_model

from conftest import BRAINAGE_ARCH, random_spd

IDENTITY = VnnArchitecture.parse(BRAINAGE_ARCH, "identity")


def scalar_model(h0):
    return VnnArchitecture.parse("1,1,1", "identity"), VnnParameters([[[[h0]]]])


class TestRegionalResiduals:
    def test_rows_sum_to_zero(self, brainage_run):
        cohort, _, ensemble, _, _, cov = brainage_run
        r = regional_residuals(ensemble.arch, ensemble.members[0].params, cov, cohort.features[:20])
        np.testing.assert_allclose(r.sum(axis=1), 0.0, atol=1e-12)

    def test_uniform_contributions(self):
        arch, params = scalar_model(0.7)
        cov = CovarianceModel.from_matrix(random_spd(np.random.default_rng(0), 5))
        np.testing.assert_allclose(regional_residuals(arch, params, cov, np.full((3, 5), 2.0)), 0.0, atol=1e-15)

    def test_scalar_filter(self):
        # a zero-order filter scales the input, so r = h0 * (x - mean(x))
        arch, params = scalar_model(1.5)
        cov = CovarianceModel.from_matrix(random_spd(np.random.default_rng(1), 4))
        x = np.array([1.0, 2.0, 4.0, 9.0])
        np.testing.assert_allclose(regional_residuals(arch, params, cov, x), [-4.5, -3.0, 0.0, 7.5])


class TestAgeBias:
    def test_perfect_predictions(self):
        y = np.array([55.0, 60.0, 71.0, 80.0])
        assert age_bias_fit(y, y) == (0.0, 0.0)

    def test_shrunk_predictions(self):
        y = np.array([55.0, 60.0, 71.0, 80.0])
        a, b = age_bias_fit(0.5 * y + 10.0, y)
        assert a == pytest.approx(-0.5, abs=1e-12) and b == pytest.approx(10.0, abs=1e-10)

    def test_normal_equations(self):
        # exact rational least-squares solution: a = 1/25, b = -8/5
        a, b = age_bias_fit([62.0, 64.0, 73.0, 74.0, 83.0], [60.0, 65.0, 70.0, 75.0, 80.0])
        assert a == pytest.approx(0.04, abs=1e-12) and b == pytest.approx(-1.6, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            age_bias_fit([1.0, 2.0, 3.0], [70.0, 70.0, 70.0])
        with pytest.raises(DegenerateSampleError):
            age_bias_fit([1.0, 2.0], [60.0, 70.0])
        with pytest.raises(ShapeError):
            age_bias_fit([1.0, 2.0, 3.0], [60.0, 70.0])

    def test_delta_age_worked_case(self):
        assert delta_age(70.0, 65.0, -0.2, 5.0) == pytest.approx(13.0)

    @given(st.floats(40, 90), st.floats(-20, 20), st.floats(-0.5, 0.5), st.floats(-10, 10))
    def test_group_gap_at_equal_age(self, age, gap, a, b):
        # at equal chronological age the Delta-Age gap equals the raw prediction gap
        d_hc = delta_age(age, age, a, b)
        d_d = delta_age(age + gap, age, a, b)
        assert d_d - d_hc == pytest.approx(gap, abs=1e-9)

    def test_control_deltas_unbiased(self, brainage_run):
        cohort, _, _, rep, _, _ = brainage_run
        hc = cohort.is_hc
        d, y = rep.delta[hc], cohort.age[hc]
        slope = np.polyfit(y, d, 1)[0]
        assert abs(slope) < 1e-8 and abs(d.mean()) < 1e-8


class TestDeltaAgeReport:
    def test_fields(self, brainage_run):
        cohort, _, _, rep, _, _ = brainage_run
        assert set(rep.group_means) == {"HC", "D"}
        assert rep.cohens_d > 0 and 0 <= rep.ancova_p <= 1 and 0 <= rep.partial_eta_sq <= 1
        assert rep.severity_pearson is not None
        np.testing.assert_allclose(rep.corrected - cohort.age, rep.delta)

    def test_wrong_length(self, brainage_run):
        cohort = brainage_run[0]
        with pytest.raises(ShapeError):
            delta_age_report(np.zeros(3), cohort)


class TestGroupScan:
    def test_identical_groups(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(40, 6))
        ages = rng.uniform(50, 80, 40)
        sex = rng.integers(0, 2, 40)
        rep = group_difference_scan(r, r.copy(), ages, ages, sex, sex)
        assert not rep.significant.any()
        np.testing.assert_allclose(rep.f_stat, 0.0, atol=1e-20)

    def test_shifted_region_found(self):
        rng = np.random.default_rng(1)
        r_hc, r_d = rng.normal(size=(60, 5)), rng.normal(size=(60, 5))
        r_d[:, 2] += 2.0
        sex = rng.integers(0, 2, 60)
        rep = group_difference_scan(r_hc, r_d, rng.uniform(50, 80, 60), rng.uniform(50, 80, 60), sex, sex)
        assert rep.significant_set == frozenset({2})
        assert rep.rows()[2]["significant"] == 1

    def test_lower_d_mean_not_flagged(self):
        rng = np.random.default_rng(2)
        r_hc, r_d = rng.normal(size=(60, 3)), rng.normal(size=(60, 3))
        r_d[:, 0] -= 2.0
        sex = rng.integers(0, 2, 60)
        rep = group_difference_scan(r_hc, r_d, rng.uniform(50, 80, 60), rng.uniform(50, 80, 60), sex, sex)
        assert rep.p_bonferroni[0] < 1e-6 and not rep.significant[0]

    def test_bonferroni_monotone_in_alpha(self, brainage_run):
        cohort, _, ensemble, _, _, cov = brainage_run
        params = ensemble.members[0].params
        sets = [scan_cohort(ensemble.arch, params, cohort, cov, alpha).significant_set
                for alpha in (0.001, 0.01, 0.05, 0.2)]
        assert all(a <= b for a, b in zip(sets, sets[1:]))

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            group_difference_scan(np.zeros((5, 3)), np.zeros((5, 4)), np.ones(5), np.ones(5), np.zeros(5),
                                  np.zeros(5))
        with pytest.raises(DegenerateSampleError):
            group_difference_scan(np.zeros((1, 3)), np.zeros((5, 3)), np.ones(1), np.ones(5), np.zeros(1),
                                  np.zeros(5))


class TestRobustness:
    def test_single_member_matches_scan(self, brainage_run):
        cohort, _, ensemble, _, _, cov = brainage_run
        single = TrainedEnsemble(ensemble.arch, ensemble.covariance, ensemble.members[:1], ensemble.train_index,
                                 ensemble.test_index)
        counts = robustness_count(single, cohort, cov).counts
        flags = scan_cohort(ensemble.arch, ensemble.members[0].params, cohort, cov).significant
        np.testing.assert_array_equal(counts, flags.astype(int))

    def test_counts_bounded(self, brainage_run):
        robust = brainage_run[4]
        assert robust.flags.shape == (20, 32)
        assert robust.counts.min() >= 0 and robust.counts.max() <= 20

    def test_empty_ensemble(self, brainage_run):
        cohort, _, ensemble, _, _, _ = brainage_run
        empty = TrainedEnsemble(ensemble.arch, ensemble.covariance, [], ensemble.train_index, ensemble.test_index)
        with pytest.raises(ConfigError):
            robustness_count(empty, cohort)

    def test_null_cohort_flags_nothing(self):
        cohort, _ = synthetic_cohort(n_hc=200, n_d=80, shift_sd=0.0, seed=5)
        config = TrainConfig(max_epochs=40, learning_rate=0.1, ensemble_size=3)
        ensemble = train_ensemble(cohort.group("HC"), IDENTITY, config, seed=0)
        assert robustness_count(ensemble, cohort).counts.sum() == 0

    def test_ensemble_predictions_average(self, brainage_run):
        cohort, _, ensemble, _, _, cov = brainage_run
        x = cohort.features[:5]
        one = ensemble_predictions(TrainedEnsemble(ensemble.arch, cov, ensemble.members[:1], ensemble.train_index,
                                                   ensemble.test_index), x)
        two = ensemble_predictions(TrainedEnsemble(ensemble.arch, cov, ensemble.members[1:2], ensemble.train_index,
                                                   ensemble.test_index), x)
        both = ensemble_predictions(TrainedEnsemble(ensemble.arch, cov, ensemble.members[:2], ensemble.train_index,
                                                    ensemble.test_index), x)
        np.testing.assert_allclose(both, (one + two) / 2, rtol=1e-14)


class TestEigenAlignment:
    def setup_method(self):
        self.cov = CovarianceModel.from_matrix(random_spd(np.random.default_rng(3), 6))

    def test_aligned_population(self):
        v = self.cov.eigenvectors[:, 1]
        out = eigen_alignment(np.array([v, -2 * v, 0.5 * v]), self.cov)
        expected = np.zeros(6)
        expected[1] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_unstable_alignment_suppressed(self):
        v0, v1 = self.cov.eigenvectors[:, 0], self.cov.eigenvectors[:, 1]
        pop = np.array([v0, v1, v0 + 0.1 * v1, v1 + 0.1 * v0])
        out = eigen_alignment(pop, self.cov)
        assert np.all(out[:2] == 0.0)
        np.testing.assert_allclose(out[2:], 0.0, atol=1e-12)
        assert np.all(eigen_alignment(pop, self.cov, cv_threshold=np.inf)[:2] > 0)

    def test_zero_vector(self):
        with pytest.raises(InvalidDataError):
            eigen_alignment(np.zeros((2, 6)), self.cov)

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            eigen_alignment(np.ones((2, 5)), self.cov)


class TestJaccard:
    def test_values(self):
        assert jaccard(frozenset(), frozenset()) == 1.0
        assert jaccard(frozenset({1, 2}), frozenset({2, 3})) == pytest.approx(1 / 3)
        assert jaccard(frozenset({1}), frozenset({1})) == 1.0
        assert jaccard(frozenset({1}), frozenset({2})) == 0.0

    @settings(max_examples=50)
    @given(st.frozensets(st.integers(0, 20)), st.frozensets(st.integers(0, 20)))
    def test_symmetric_and_bounded(self, a, b):
        j = jaccard(a, b)
        assert j == jaccard(b, a) and 0.0 <= j <= 1.0


@pytest.fixture(scope="module")
def composition_models():
    out = {}
    for seed in (0, 1):
        cohort, truth = synthetic_cohort(seed=seed)
        params, _ = train_model(cohort.group("HC"), IDENTITY, TrainConfig(max_epochs=60, learning_rate=0.1), seed=0)
        out[seed] = cohort, truth, params
    return out


class TestComposition:
    def schedule(self, cohort):
        n_hc = int(cohort.is_hc.sum())
        n_d = cohort.n - n_hc
        return [(n_hc, n_d), (n_hc, n_d), (n_hc, int(0.75 * n_d)), (n_hc, 0)]

    def test_full_composition_reproduces_baseline(self, composition_models):
        cohort, _, params = composition_models[0]
        pts = composition_perturbation(IDENTITY, params, cohort, self.schedule(cohort))
        assert pts[0].overlap == 1.0 and pts[1].overlap == 1.0
        assert pts[0].report.significant_set == pts[1].report.significant_set

    def test_dropping_quarter_of_d_is_stable(self, composition_models):
        cohort, _, params = composition_models[0]
        assert composition_perturbation(IDENTITY, params, cohort, self.schedule(cohort))[2].overlap >= 0.7

    def test_dropping_all_d_weakens_planted_signal(self, composition_models):
        # seed 1: fewer planted regions survive; seed 0 stays saturated but the evidence shrinks
        cohort, truth, params = composition_models[1]
        pts = composition_perturbation(IDENTITY, params, cohort, self.schedule(cohort))
        planted = set(truth.regions)
        assert len(pts[-1].report.significant_set & planted) < len(pts[0].report.significant_set & planted)
        cohort, truth, params = composition_models[0]
        pts = composition_perturbation(IDENTITY, params, cohort, self.schedule(cohort))
        idx = list(truth.regions)
        assert pts[-1].report.f_stat[idx].sum() < pts[0].report.f_stat[idx].sum()

    def test_bad_schedule(self, composition_models):
        cohort, _, params = composition_models[0]
        with pytest.raises(ConfigError):
            composition_perturbation(IDENTITY, params, cohort, [(1000, 0)])
        with pytest.raises(ConfigError):
            composition_perturbation(IDENTITY, params, cohort, [(1, 0)])


class TestSyntheticCohort:
    def test_deterministic(self):
        a, ta = synthetic_cohort(n_hc=20, n_d=10, seed=4)
        b, tb = synthetic_cohort(n_hc=20, n_d=10, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        assert ta.regions == tb.regions

    def test_planted_direction(self):
        cohort, truth = synthetic_cohort(n_hc=20, n_d=10, m=16, n_planted=4, seed=2)
        off = np.setdiff1d(np.arange(16), truth.regions)
        assert np.all(truth.direction[off] == 0) and np.max(np.abs(truth.direction)) == 1.0
        assert isinstance(cohort, CohortTable) and cohort.m == 16
        assert np.isnan(cohort.severity[cohort.is_hc]).all()
        assert (cohort.severity[~cohort.is_hc] > 0).all()

    def test_bad_planted(self):
        with pytest.raises(ConfigError):
            synthetic_cohort(m=8, planted=[1, 1])
        with pytest.raises(ConfigError):
            synthetic_cohort(n_d=1)
        with pytest.raises(ConfigError):
            synthetic_cohort(m=8, n_planted=9)
