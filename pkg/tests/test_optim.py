import numpy as np
import pytest

from oracles import coordinate_golden_ascent, random_state
from zippca._kernels import GAMMA_LO, VAR_HI, VAR_LO
from zippca.checks import flip_first_sign, random_instance, run_gradcheck
from zippca.elbo import elbo_lpnm
from zippca.errors import NonFiniteError, ValidationError
from zippca.model import Hyperparams
from zippca.optim import (
    BLOCK_NAMES,
    BlockProblem,
    all_blocks,
    beta0_block,
    bounded_quasi_newton,
    gamma1_block,
    gamma2_block,
    grad_check,
    m_block,
)

# how a block's variable sits inside the full state: (field, row index kind)
LAYOUT = {
    "gamma1": ("gamma1", "j"), "gamma2": ("gamma2", "j"), "r": ("r", "j"),
    "lambda2": ("lambda2", "j"), "m": ("m", "i"), "sigma2": ("sigma2", "i"), "beta0": ("beta0", None),
}


def instance(seed, n=6, p=8, k=2):
    counts, delta, beta0, hyper, i, j = random_instance(seed, n, p, k)
    return counts, delta, beta0, hyper, i, j


def full_elbo(counts, delta, beta0, hyper, name, value, i, j):
    field, idx = LAYOUT[name]
    if name == "beta0":
        return elbo_lpnm(counts, delta, value, hyper).total
    arr = np.array(getattr(delta, field))
    if arr.ndim == 1:
        arr[j] = value[0]
    else:
        arr[i if idx == "i" else j] = value
    return elbo_lpnm(counts, delta.replace(**{field: arr}), beta0, hyper).total


class TestBlockObjectives:
    @pytest.mark.parametrize("name", BLOCK_NAMES)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_differences_match_full_elbo(self, name, seed):
        """Moving one block changes the block objective exactly as it changes the ELBO."""
        counts, delta, beta0, hyper, i, j = instance(seed)
        prob = all_blocks(counts, delta, beta0, hyper, j=j, i=i)[name]
        rng = np.random.default_rng(seed)
        x0 = prob.x0
        lo, hi = prob.bounds()
        x1 = np.clip(x0 + rng.normal(0, 0.05, prob.dim), lo + 1e-6, hi - 1e-6)
        d_block = prob.objective(x1) - prob.objective(x0)
        d_full = (full_elbo(counts, delta, beta0, hyper, name, x1, i, j)
                  - full_elbo(counts, delta, beta0, hyper, name, x0, i, j))
        assert d_block == pytest.approx(d_full, rel=1e-8, abs=1e-8)

    @pytest.mark.parametrize("name", BLOCK_NAMES)
    def test_gradient_matches_finite_differences(self, name):
        counts, delta, beta0, hyper, i, j = instance(7, n=10, p=15, k=3)
        prob = all_blocks(counts, delta, beta0, hyper, j=j, i=i)[name]
        assert grad_check(prob, prob.x0, 1e-5) < 1e-6

    def test_value_and_grad_consistent(self):
        counts, delta, beta0, hyper, i, j = instance(3)
        prob = m_block(i, counts, delta, beta0, hyper)
        f, g = prob.value_and_grad(prob.x0)
        assert f == pytest.approx(prob.objective(prob.x0))
        np.testing.assert_allclose(g, prob.gradient(prob.x0))

    def test_beta0_shift_invariance(self):
        counts, delta, beta0, hyper, i, j = instance(4)
        prob = beta0_block(counts, delta, beta0)
        assert prob.objective(beta0 + 2.5) == pytest.approx(prob.objective(beta0), rel=1e-12)
        assert prob.gradient(beta0).sum() == pytest.approx(0.0, abs=1e-8)


class TestSolver:
    @pytest.mark.parametrize("name", BLOCK_NAMES)
    @pytest.mark.parametrize("seed", [0, 5])
    def test_converges_and_beats_golden_section(self, name, seed):
        counts, delta, beta0, hyper, i, j = instance(seed)
        prob = all_blocks(counts, delta, beta0, hyper, j=j, i=i)[name]
        rep = bounded_quasi_newton(prob, tol=1e-6, max_iter=200)
        assert rep.converged
        assert rep.final_grad_norm < 1e-6
        lo, hi = prob.bounds()
        assert np.all(rep.solution >= lo) and np.all(rep.solution <= hi)
        ref = coordinate_golden_ascent(prob.objective, prob.x0, lo, hi, sweeps=40)
        assert rep.objective_value >= prob.objective(ref) - 1e-6 * max(1.0, abs(rep.objective_value))
        assert rep.objective_value >= prob.objective(prob.x0)

    def test_gamma_blocks_reach_closed_form(self):
        counts, delta, beta0, hyper, i, j = instance(9)
        s = delta.pi[:, j].sum()
        # with gamma2 at its optimum the gamma1 optimum is alpha1 + sum pi
        g2_star = hyper.alpha2 + counts.n - s
        d2 = delta.replace(gamma2=np.where(np.arange(counts.p) == j, g2_star, delta.gamma2))
        g1 = bounded_quasi_newton(gamma1_block(j, counts, d2, hyper), tol=1e-10).solution[0]
        assert g1 == pytest.approx(hyper.alpha1 + s, rel=1e-6)
        d1 = delta.replace(gamma1=np.where(np.arange(counts.p) == j, hyper.alpha1 + s, delta.gamma1))
        g2 = bounded_quasi_newton(gamma2_block(j, counts, d1, hyper), tol=1e-10).solution[0]
        assert g2 == pytest.approx(g2_star, rel=1e-6)

    def test_active_bound(self):
        # concave quadratic whose unconstrained peak lies outside the box
        peak = np.array([2.0, -1.0, 0.3])
        prob = BlockProblem(dim=3, objective=lambda x: -np.sum((x - peak) ** 2),
                            gradient=lambda x: -2 * (x - peak),
                            lower=np.zeros(3), upper=np.ones(3))
        rep = bounded_quasi_newton(prob, np.full(3, 0.5))
        np.testing.assert_allclose(rep.solution, [1.0, 0.0, 0.3], atol=1e-8)
        assert rep.converged

    def test_unbounded_rosenbrock(self):
        f = lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        g = lambda x: -np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        rep = bounded_quasi_newton(BlockProblem(2, f, g), [-1.2, 1.0], tol=1e-8, max_iter=500)
        np.testing.assert_allclose(rep.solution, [1.0, 1.0], atol=1e-5)

    def test_iteration_cap_reports_not_converged(self):
        f = lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        g = lambda x: -np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        rep = bounded_quasi_newton(BlockProblem(2, f, g), [-1.2, 1.0], max_iter=3)
        assert not rep.converged and rep.iterations == 3

    def test_nonfinite_start(self):
        prob = BlockProblem(1, lambda x: np.nan if x[0] <= 0 else np.log(x[0]), lambda x: 1 / x)
        with pytest.raises(NonFiniteError):
            bounded_quasi_newton(prob, [-1.0])

    def test_infeasible_start(self):
        prob = BlockProblem(1, lambda x: -x[0] ** 2, lambda x: -2 * x, lower=np.zeros(1), upper=np.ones(1))
        with pytest.raises(ValidationError):
            bounded_quasi_newton(prob, [2.0])

    def test_block_bounds(self):
        counts, delta, beta0, hyper, i, j = instance(1)
        blocks = all_blocks(counts, delta, beta0, hyper, j=j, i=i)
        assert blocks["gamma1"].lower[0] == GAMMA_LO and blocks["gamma1"].upper is None
        for name in ("lambda2", "sigma2"):
            assert np.all(blocks[name].lower == VAR_LO) and np.all(blocks[name].upper == VAR_HI)
        assert not blocks["r"].bounded and not blocks["beta0"].bounded


class TestGradCheck:
    def test_detects_sign_flip(self):
        counts, delta, beta0, hyper, i, j = instance(2)
        for prob in all_blocks(counts, delta, beta0, hyper, j=j, i=i).values():
            assert grad_check(flip_first_sign(prob), prob.x0, 1e-5) > 1e-4

    @pytest.mark.parametrize("step", [1e-8, 1e-2])
    def test_step_range(self, step):
        prob = BlockProblem(1, lambda x: -x[0] ** 2, lambda x: -2 * x)
        with pytest.raises(ValidationError):
            grad_check(prob, [0.0], step)

    def test_point_must_be_strictly_feasible(self):
        prob = BlockProblem(1, lambda x: -x[0] ** 2, lambda x: -2 * x, lower=np.zeros(1), upper=np.ones(1))
        with pytest.raises(ValidationError):
            grad_check(prob, [0.0], 1e-5)

    def test_relative_error_denominator(self):
        # analytic gradient 1e-3 off everywhere; denominators floor at 1
        prob = BlockProblem(1, lambda x: 5e3 * x[0], lambda x: np.array([5e3 + 1e-3]))
        assert grad_check(prob, [0.0], 1e-5) == pytest.approx(1e-3 / 5e3, rel=1e-3)
        prob = BlockProblem(1, lambda x: 0.5 * x[0], lambda x: np.array([0.5 + 1e-3]))
        assert grad_check(prob, [0.0], 1e-5) == pytest.approx(1e-3, rel=1e-3)

    def test_run_gradcheck_clean_and_corrupted(self):
        assert run_gradcheck(points=5).passed
        bad = run_gradcheck(points=2, corrupt=True)
        assert not bad.passed
        assert {f[0] for f in bad.failures} == set(BLOCK_NAMES)
