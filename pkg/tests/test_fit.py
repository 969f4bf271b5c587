import numpy as np
import pytest

from zippca import _kernels
from zippca.errors import NonFiniteError, ValidationError
from zippca.fit import FitOptions, classify_pi, estimate_eta, fit, initialize
from zippca.model import CountMatrix, Hyperparams
from zippca.simulate import ScenarioConfig, generate


@pytest.fixture(scope="module")
def small_data():
    return generate(ScenarioConfig("S2", 20, 25, 2, seed=3))


@pytest.fixture(scope="module")
def small_fit(small_data):
    return fit(small_data.counts, Hyperparams(k=2, alpha1=2.0, alpha2=3.0))


class TestInitialize:
    def test_intercepts(self, small_data):
        x = small_data.counts.x
        _, beta0 = initialize(small_data.counts, Hyperparams(k=2))
        raw = np.log(x.sum(axis=0) + 0.5) - np.log((x.sum(axis=0) + 0.5).sum())
        np.testing.assert_allclose(beta0, raw - raw.mean())
        assert beta0.mean() == pytest.approx(0.0, abs=1e-14)

    def test_zero_bookkeeping(self, small_data):
        x = small_data.counts.x
        delta, _ = initialize(small_data.counts, Hyperparams(k=2, alpha1=2.0, alpha2=3.0))
        np.testing.assert_array_equal(delta.pi, np.where(x == 0, 0.5, 0.0))
        np.testing.assert_array_equal(delta.gamma1, 2.0 + (x == 0).sum(axis=0))
        np.testing.assert_array_equal(delta.gamma2, 3.0 + (x > 0).sum(axis=0))
        assert np.all(delta.lambda2 == 0.5) and np.all(delta.sigma2 == 0.5)

    def test_spectral_factors(self, small_data):
        k = 2
        delta, _ = initialize(small_data.counts, Hyperparams(k=k))
        y = np.log1p(small_data.counts.x)
        y -= y.mean(axis=0)
        U, S, Vt = np.linalg.svd(y)
        np.testing.assert_allclose(delta.m @ delta.r.T, (U[:, :k] * S[:k]) @ Vt[:k], atol=1e-10)
        np.testing.assert_allclose(delta.m.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(delta.m.var(axis=0), 1.0)
        # the largest loading of each component is positive
        assert np.all(delta.r[np.argmax(np.abs(delta.r), axis=0), [0, 1]] > 0)

    def test_rank_deficient_components_are_zero(self):
        x = np.array([[1, 2, 3, 4], [2, 4, 6, 8], [1, 2, 3, 4]])
        delta, _ = initialize(CountMatrix(x), Hyperparams(k=3))
        assert np.all(delta.r[:, 1:] == 0) and np.all(delta.m[:, 1:] == 0)

    def test_deterministic(self, small_data):
        a, b0a = initialize(small_data.counts, Hyperparams(k=2), seed=1)
        b, b0b = initialize(small_data.counts, Hyperparams(k=2), seed=99)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(b0a, b0b)

    def test_k_too_large(self):
        with pytest.raises(ValidationError):
            initialize(CountMatrix([[1, 2], [3, 4]]), Hyperparams(k=2))


class TestClassify:
    def test_threshold_inclusive(self):
        np.testing.assert_array_equal(classify_pi([[0.2, 0.5, 0.9]], 0.5), [[0, 1, 1]])

    def test_positive_cells_forced_to_zero(self):
        mask = np.array([[True, False, True]])
        np.testing.assert_array_equal(classify_pi([[0.9, 0.9, 0.1]], 0.5, mask), [[1, 0, 0]])

    @pytest.mark.parametrize("pi0", [0.0, 1.0, -0.1])
    def test_invalid_threshold(self, pi0):
        with pytest.raises(ValidationError):
            classify_pi([[0.5]], pi0)


def test_estimate_eta():
    np.testing.assert_allclose(estimate_eta([1, 3], [3, 1]), [0.25, 0.75])


class TestFit:
    def test_outputs(self, small_data, small_fit):
        n, p = small_data.counts.x.shape
        assert small_fit.converged
        assert small_fit.F_hat.shape == (n, 2) and small_fit.theta_hat.B.shape == (p, 2)
        np.testing.assert_allclose(small_fit.rho_hat.sum(axis=1), 1.0)
        assert np.all((small_fit.eta_hat > 0) & (small_fit.eta_hat < 1))
        assert small_fit.theta_hat.beta0.mean() == pytest.approx(0.0, abs=1e-10)
        assert len(small_fit.elbo_trace) == small_fit.iterations
        assert len(small_fit.elbo_after_classification) == small_fit.iterations

    def test_trace_non_decreasing(self, small_fit):
        assert np.all(np.diff(small_fit.elbo_trace) >= -1e-8)

    def test_sweeps_do_not_decrease_elbo(self, small_fit):
        # after each classification the continuous updates only go up
        assert np.all(small_fit.elbo_trace - small_fit.elbo_after_classification >= -1e-8)

    def test_pi_is_hard_and_respects_counts(self, small_data, small_fit):
        pi = small_fit.delta_hat.pi
        assert set(np.unique(pi)) <= {0.0, 1.0}
        assert np.all(pi[small_data.counts.x > 0] == 0)

    def test_gamma_near_closed_form(self, small_fit):
        # one Gauss-Seidel pass per sweep on a flat objective: agreement is to
        # the inner tolerance divided by the small curvature, not to 1e-6
        d = small_fit.delta_hat
        np.testing.assert_allclose(d.gamma1, 2.0 + d.pi.sum(axis=0), rtol=1e-4)
        np.testing.assert_allclose(d.gamma2, 3.0 + (1 - d.pi).sum(axis=0), rtol=1e-4)

    def test_variances_interior(self, small_fit):
        for v in (small_fit.delta_hat.lambda2, small_fit.delta_hat.sigma2):
            assert np.all((v > 0) & (v < 1))

    def test_all_blocks_converged(self, small_fit):
        for name, counts in small_fit.block_status.items():
            assert counts[3] == 0, name
            assert counts[0] > 0, name

    def test_deterministic(self, small_data, small_fit):
        again = fit(small_data.counts, Hyperparams(k=2, alpha1=2.0, alpha2=3.0))
        np.testing.assert_array_equal(again.elbo_trace, small_fit.elbo_trace)
        np.testing.assert_array_equal(again.theta_hat.B, small_fit.theta_hat.B)

    def test_iteration_cap(self, small_data):
        res = fit(small_data.counts, Hyperparams(k=2), FitOptions(max_outer_iter=2))
        assert res.iterations == 2 and not res.converged

    def test_jacobi_mode_runs(self, small_data):
        res = fit(small_data.counts, Hyperparams(k=2), FitOptions(max_outer_iter=5, jacobi=True))
        assert np.all(np.isfinite(res.elbo_trace))

    def test_nonfinite_aborts_with_snapshot(self, small_data, monkeypatch):
        def poisoned(X, M, pi, beta0, r, *rest):
            r[0, 0] = np.nan

        monkeypatch.setattr(_kernels, "sweep", poisoned)
        with pytest.raises(NonFiniteError) as info:
            fit(small_data.counts, Hyperparams(k=2))
        assert np.isnan(info.value.snapshot["r"][0, 0])

    @pytest.mark.parametrize("kwargs", [dict(max_outer_iter=0), dict(tol=0.0), dict(inner_tol=-1.0)])
    def test_invalid_options(self, kwargs):
        with pytest.raises(ValidationError):
            FitOptions(**kwargs)
