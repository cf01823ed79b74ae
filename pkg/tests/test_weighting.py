import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blendkit import NumericalError, ValidationError, mle_stacking, pseudo_bma, pseudo_bma_plus, stacking_objective
from blendkit.weighting import WeightMatrix
from oracles import central_difference, grid_search_stacking, max_rel_error, pseudo_bma_plus_loop


def elpd_map(rows):
    return {f"m{j}": np.asarray(r, dtype=float) for j, r in enumerate(rows)}


class TestWeightMatrix:
    def test_rejects_bad_columns(self):
        with pytest.raises(ValidationError):
            WeightMatrix(["a", "b"], [[0.5], [0.6]])
        with pytest.raises(ValidationError):
            WeightMatrix(["a", "b"], [[1.2], [-0.2]])
        with pytest.raises(ValidationError):
            WeightMatrix(["a"], [[0.5], [0.5]])

    def test_broadcast(self):
        w = WeightMatrix(["a", "b"], [[0.25], [0.75]])
        assert w.broadcast(3).shape == (2, 3)
        with pytest.raises(ValidationError):
            WeightMatrix(["a", "b"], [[0.5, 0.5], [0.5, 0.5]]).broadcast(3)


class TestPseudoBma:
    @pytest.mark.parametrize("c", [-1e4, -3.0, 0.0, 12.5])
    def test_equal_totals_uniform(self, c):
        w = pseudo_bma(elpd_map([[c], [c], [c]]))
        np.testing.assert_allclose(w.weights[:, 0], 1 / 3, atol=1e-15)

    def test_softmax_algebra(self):
        w = pseudo_bma(elpd_map([[math.log(3)], [0.0]]))
        np.testing.assert_allclose(w.weights[:, 0], [0.75, 0.25], atol=1e-15)

    def test_extreme_gap(self):
        with np.errstate(over="raise", invalid="raise"):
            w = pseudo_bma(elpd_map([[0.0], [-1000.0]]))
        assert w.weights[1, 0] < 1e-300
        assert w.weights[0, 0] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            pseudo_bma(elpd_map([[0.0, 1.0], [0.0]]))


class TestPseudoBmaPlus:
    @pytest.mark.parametrize("seed", [0, 1, 99])
    @pytest.mark.parametrize("b", [1, 7, 200])
    def test_identical_models_exactly_uniform(self, seed, b):
        row = np.random.default_rng(seed).normal(size=13)
        w = pseudo_bma_plus(elpd_map([row, row, row]), replications=b, seed=seed)
        assert np.all(w.weights[:, 0] == w.weights[0, 0])
        assert abs(w.weights[0, 0] - 1 / 3) < 1e-15

    def test_single_datapoint_equals_pseudo_bma(self):
        m = elpd_map([[-1.0], [-1.7], [-0.4]])
        np.testing.assert_allclose(
            pseudo_bma_plus(m, 50, 3).weights, pseudo_bma(m).weights, atol=1e-15
        )

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2024)
        base = rng.normal(-1.0, 0.5, size=50)
        rows = [base + 0.1, base]
        w = pseudo_bma_plus(elpd_map(rows), replications=300, seed=17)
        expected = pseudo_bma_plus_loop([r.tolist() for r in rows], 300, 17)
        np.testing.assert_allclose(w.weights[:, 0], expected, rtol=0, atol=1e-12)

    def test_deterministic(self):
        m = elpd_map(np.random.default_rng(1).normal(size=(3, 20)))
        a = pseudo_bma_plus(m, 100, 5).weights
        b = pseudo_bma_plus(m, 100, 5).weights
        np.testing.assert_array_equal(a, b)

    def test_replications_validated(self):
        with pytest.raises(ValidationError):
            pseudo_bma_plus(elpd_map([[0.0], [0.0]]), replications=0)


class TestStackingObjective:
    def test_hand_arithmetic(self):
        lpd = np.log([[0.8], [0.2]])
        obj, grad = stacking_objective([0.5, 0.5], lpd)
        assert obj == pytest.approx(math.log(0.5), abs=1e-15)
        np.testing.assert_allclose(grad, [1.6, 0.4], atol=1e-14)

    def test_identical_rows(self):
        row = np.random.default_rng(0).normal(size=7)
        lpd = np.vstack([row, row, row])
        o1, g1 = stacking_objective([0.2, 0.3, 0.5], lpd)
        o2, _ = stacking_objective([0.6, 0.3, 0.1], lpd)
        assert o1 == pytest.approx(o2, abs=1e-12)
        np.testing.assert_allclose(g1, 7.0, atol=1e-12)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        lpd = rng.normal(-1, 1, size=(3, 20))
        w = rng.dirichlet(np.ones(3))
        _, grad = stacking_objective(w, lpd)
        # directional derivatives along simplex-tangent directions e_j - e_k
        for j, k in [(0, 1), (1, 2), (0, 2)]:
            d = np.zeros(3)
            d[j], d[k] = 1.0, -1.0
            num = central_difference(lambda t: stacking_objective(w + t[0] * d, lpd)[0], np.zeros(1))[0]
            assert max_rel_error(grad @ d, num) < 1e-6

    def test_all_neg_inf_datapoint(self):
        lpd = np.array([[0.0, -np.inf], [0.0, -np.inf]])
        with pytest.raises(NumericalError) as exc:
            stacking_objective([0.5, 0.5], lpd)
        assert exc.value.index == 1


class TestMleStacking:
    def test_symmetric_optimum(self):
        lpd = np.log([[0.8, 0.2], [0.2, 0.8]])
        w, rep = mle_stacking(lpd, ["a", "b"])
        np.testing.assert_allclose(w.weights[:, 0], [0.5, 0.5], atol=1e-12)
        assert rep.final_objective == pytest.approx(2 * math.log(0.5), abs=1e-12)
        assert rep.converged and not rep.flat

    def test_identical_models_flat(self):
        row = np.random.default_rng(3).normal(size=10)
        w, rep = mle_stacking(np.vstack([row, row, row]))
        assert rep.flat and rep.converged
        assert np.all(w.weights == 1 / 3)

    def test_grid_oracle(self):
        lpd = np.log([[0.9, 0.1, 0.5], [0.3, 0.7, 0.5]])
        w, rep = mle_stacking(lpd)
        w_grid, f_grid = grid_search_stacking(lpd, step=1e-4, fine=1e-6)
        assert abs(w.weights[0, 0] - w_grid[0]) < 1e-4
        assert abs(rep.final_objective - f_grid) < 1e-8
        assert rep.final_objective >= f_grid - 1e-12

    def test_boundary_optimum(self):
        # model 1 dominates everywhere: optimum puts all weight on it
        lpd = np.log([[0.9, 0.8, 0.7], [0.1, 0.2, 0.3]])
        w, rep = mle_stacking(lpd)
        assert w.weights[0, 0] > 1 - 1e-6
        assert rep.converged

    def test_ascent_property(self):
        rng = np.random.default_rng(8)
        lpd = rng.normal(-1, 1, size=(4, 30))
        _, rep = mle_stacking(lpd)
        assert rep.final_objective >= stacking_objective(np.full(4, 0.25), lpd)[0]

    def test_name_count_mismatch(self):
        with pytest.raises(ValidationError):
            mle_stacking(np.zeros((2, 3)), ["only_one"])

    def test_max_iter_reports_not_converged(self):
        lpd = np.log([[0.9, 0.1, 0.5], [0.3, 0.7, 0.5]])
        w, rep = mle_stacking(lpd, max_iter=1)
        assert not rep.converged
        assert abs(w.weights.sum() - 1) < 1e-12

    def test_boundary_optimum_from_skewed_start(self):
        # optimum puts zero weight on the middle model; starts near other
        # corners must still find it
        lpd = np.random.default_rng(1001).normal(-1.0, 1.0, size=(3, 5))
        _, ref = mle_stacking(lpd)
        for init in ([0.44, 0.40, 0.16], [0.27, 0.68, 0.05], [0.01, 0.01, 0.98]):
            w, rep = mle_stacking(lpd, init_weights=init)
            assert abs(rep.final_objective - ref.final_objective) < 1e-10
            assert w.weights[1, 0] == 0.0
            assert rep.grad_inf_norm <= 1e-10

    def test_residual_reported(self):
        lpd = np.random.default_rng(8).normal(-1, 1, size=(4, 30))
        _, rep = mle_stacking(lpd)
        assert rep.converged and rep.grad_inf_norm <= 1e-10

    def test_restarts_agree(self):
        rng = np.random.default_rng(12)
        lpd = rng.normal(-1, 1, size=(3, 25))
        _, ref = mle_stacking(lpd)
        for _ in range(10):
            _, rep = mle_stacking(lpd, init_weights=rng.dirichlet(np.ones(3)))
            assert abs(rep.final_objective - ref.final_objective) < 1e-8


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(1, 12)), elements=st.floats(-8, 2)),
    st.floats(-50, 50),
)
def test_pseudo_bma_shift_invariant_and_simplex(mat, c):
    rows = {f"m{j}": r for j, r in enumerate(mat)}
    shifted = {k: v + c for k, v in rows.items()}
    a, b = pseudo_bma(rows).weights, pseudo_bma(shifted).weights
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert abs(a.sum() - 1) <= 1e-12 and a.min() >= 0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(1, 12)), elements=st.floats(-8, 2)))
def test_mle_weights_on_simplex(mat):
    w, rep = mle_stacking(mat)
    assert abs(w.weights.sum() - 1) <= 1e-12 and w.weights.min() >= 0
    assert rep.final_objective >= stacking_objective(np.full(mat.shape[0], 1 / mat.shape[0]), mat)[0] - 1e-12
