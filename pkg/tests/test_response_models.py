import math

import numpy as np
import pytest

from src import response_models as rm
from src.response_models import ModelDomainError, ModelKind
from tests.conftest import GRID, QP, QP_TRUTH, econ

MIT = ModelKind.MITSCHERLICH
MIT_TRUTH = (120.0, 0.015, 80.0)
LOGISTIC_TRUTH = (120.0, 0.05, 125.0, 70.0)
MM_TRUTH = (150.0, 100.0, 60.0)


class TestEvaluate:
    def test_plateau_value_past_knot(self):
        assert rm.evaluate(QP, QP_TRUTH, 250) == pytest.approx(198.8)

    def test_mitscherlich_at_zero_is_baseline(self):
        assert rm.evaluate(MIT, MIT_TRUTH, 0) == pytest.approx(80.0)

    def test_logistic_midpoint(self):
        assert rm.evaluate(ModelKind.LOGISTIC, LOGISTIC_TRUTH, 125) == pytest.approx(130.0)

    def test_michaelis_menten(self):
        assert rm.evaluate(ModelKind.MICHAELIS_MENTEN, MM_TRUTH, 100) == pytest.approx(135.0)

    def test_array_input_gives_array(self):
        values = rm.evaluate(QP, QP_TRUTH, GRID.values)
        assert isinstance(values, np.ndarray)
        assert values.shape == (6,)
        assert values[3] == pytest.approx(192.5)

    def test_scalar_input_gives_float(self):
        assert isinstance(rm.evaluate(QP, QP_TRUTH, 100), float)

    def test_negative_dose_rejected(self):
        with pytest.raises(ModelDomainError):
            rm.evaluate(QP, QP_TRUTH, -1)

    def test_wrong_parameter_count_rejected(self):
        with pytest.raises(ModelDomainError):
            rm.evaluate(QP, (80, 1.2, -0.003), 100)

    def test_sign_constraint_rejected(self):
        with pytest.raises(ModelDomainError):
            rm.evaluate(QP, (80, 1.2, 0.003, 180), 100)
        with pytest.raises(ModelDomainError):
            rm.evaluate(MIT, (120, -0.015, 80), 100)

    def test_parse_kind(self):
        assert ModelKind.parse("Quadratic-Plateau") is QP
        with pytest.raises(ModelDomainError):
            ModelKind.parse("cubic")


class TestDerivatives:
    def test_plateau_knot_uses_left_branch(self):
        grad = rm.grad_params(QP, QP_TRUTH, 180.0)
        assert grad.tolist() == pytest.approx([1.0, 180.0, 180.0 ** 2, 0.0])

    def test_plateau_gradient_right_of_knot(self):
        grad = rm.grad_params(QP, QP_TRUTH, 200.0)
        assert grad.tolist() == pytest.approx([1.0, 180.0, 180.0 ** 2, 1.2 - 0.006 * 180])

    def test_mitscherlich_gradient(self):
        assert rm.grad_params(MIT, MIT_TRUTH, 0)[0] == pytest.approx(0.0)
        assert rm.grad_params(MIT, MIT_TRUTH, 37.0)[2] == pytest.approx(1.0)
        assert rm.grad_params(MIT, MIT_TRUTH, 100)[1] == pytest.approx(2677.6, abs=0.1)

    def test_plateau_x_derivatives(self):
        assert rm.grad_x(QP, QP_TRUTH, 100) == pytest.approx(0.6)
        assert rm.hessian_x(QP, QP_TRUTH, 100) == pytest.approx(-0.006)
        assert rm.grad_x(QP, QP_TRUTH, 250) == 0.0
        assert rm.hessian_x(QP, QP_TRUTH, 250) == 0.0

    def test_logistic_slope_at_midpoint(self):
        assert rm.grad_x(ModelKind.LOGISTIC, LOGISTIC_TRUTH, 125) == pytest.approx(1.5)


def _random_points(kind, rng, count=100):
    truth = np.array(rm.TRUE_PARAMETERS[kind])
    points = []
    while len(points) < count:
        theta = truth * rng.uniform(0.8, 1.2, truth.size)
        x = rng.uniform(1.0, 249.0)
        if kind is QP and abs(x - theta[3]) < 1.0:
            continue
        points.append((theta, x))
    return points


def _fd_theta(fn, theta, x):
    out = []
    for i in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[i]))
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        out.append((fn(up, x) - fn(down, x)) / (2.0 * h))
    return np.array(out)


def _fd_x(fn, theta, x, h=1e-4):
    return (fn(theta, x + h) - fn(theta, x - h)) / (2.0 * h)


@pytest.mark.parametrize("kind", list(ModelKind))
class TestFiniteDifferences:
    """Analytic derivatives against central differences at random points."""

    def test_grad_params(self, kind):
        rng = np.random.default_rng(1)
        for theta, x in _random_points(kind, rng):
            numeric = _fd_theta(lambda t, v: rm.evaluate(kind, t, v), theta, x)
            np.testing.assert_allclose(rm.grad_params(kind, theta, x), numeric, rtol=1e-5, atol=1e-6)

    def test_grad_x_and_hessian_x(self, kind):
        rng = np.random.default_rng(2)
        for theta, x in _random_points(kind, rng):
            slope = _fd_x(lambda t, v: rm.evaluate(kind, t, v), theta, x)
            curvature = _fd_x(lambda t, v: rm.grad_x(kind, t, v), theta, x)
            assert rm.grad_x(kind, theta, x) == pytest.approx(slope, rel=1e-5, abs=1e-6)
            assert rm.hessian_x(kind, theta, x) == pytest.approx(curvature, rel=1e-5, abs=1e-6)

    def test_mixed_derivatives(self, kind):
        rng = np.random.default_rng(3)
        for theta, x in _random_points(kind, rng):
            dfx = _fd_theta(lambda t, v: rm.grad_x(kind, t, v), theta, x)
            dfxx = _fd_theta(lambda t, v: rm.hessian_x(kind, t, v), theta, x)
            np.testing.assert_allclose(rm.grad_params_dx(kind, theta, x), dfx, rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(rm.grad_params_dxx(kind, theta, x), dfxx, rtol=1e-5, atol=1e-6)


class TestProfit:
    def test_plateau_profits(self):
        assert rm.profit(QP, QP_TRUTH, econ(0.7), 150) == pytest.approx(857.5)
        assert rm.profit(QP, QP_TRUTH, econ(0.7), 200) == pytest.approx(854.0)

    def test_free_fertilizer(self):
        assert rm.profit(MIT, MIT_TRUTH, econ(0.0), 0) == pytest.approx(5.0 * 80.0)

    def test_economic_params_validated(self):
        with pytest.raises(ModelDomainError):
            rm.EconomicParams(0.0, 0.5)
        with pytest.raises(ModelDomainError):
            rm.EconomicParams(5.0, -0.1)

    @pytest.mark.parametrize("kind", [MIT, ModelKind.MICHAELIS_MENTEN, QP, ModelKind.LOGISTIC])
    def test_baseline_shift_invariance(self, kind):
        theta = np.array(rm.TRUE_PARAMETERS[kind])
        shifted = theta.copy()
        shifted[rm.BASELINE_INDEX[kind]] += 7.5
        e = econ(0.5)
        diff = rm.profit(kind, shifted, e, GRID.values) - rm.profit(kind, theta, e, GRID.values)
        np.testing.assert_allclose(diff, 5.0 * 7.5)
        assert rm.closed_form_optimum(kind, shifted, e, GRID.domain) == pytest.approx(
            rm.closed_form_optimum(kind, theta, e, GRID.domain))
        assert rm.best_grid_arm(kind, shifted, e, GRID) == rm.best_grid_arm(kind, theta, e, GRID)


class TestClosedFormOptimum:
    def test_plateau_clamped_to_knot(self):
        assert rm.closed_form_optimum(QP, QP_TRUTH, econ(0.5), (0, 250)) == pytest.approx(180.0)

    def test_plateau_interior(self):
        assert rm.closed_form_optimum(QP, QP_TRUTH, econ(0.7), (0, 250)) == pytest.approx(176.6667, abs=1e-3)

    def test_mitscherlich(self):
        assert rm.closed_form_optimum(MIT, MIT_TRUTH, econ(0.5), (0, 250)) == pytest.approx(192.7, abs=0.1)

    def test_mitscherlich_unprofitable(self):
        assert rm.closed_form_optimum(MIT, MIT_TRUTH, econ(50.0), (0, 250)) == 0.0

    def test_logistic(self):
        x = rm.closed_form_optimum(ModelKind.LOGISTIC, LOGISTIC_TRUTH, econ(0.5), (0, 250))
        assert x == pytest.approx(206.2, abs=0.1)

    def test_michaelis_menten_clamped(self):
        x = rm.closed_form_optimum(ModelKind.MICHAELIS_MENTEN, MM_TRUTH, econ(0.5), (0, 250))
        assert x == 250.0

    def test_zero_price_goes_to_top(self):
        assert rm.closed_form_optimum(ModelKind.MICHAELIS_MENTEN, MM_TRUTH, econ(0.0), (0, 250)) == 250.0

    @pytest.mark.parametrize("kind", list(ModelKind))
    @pytest.mark.parametrize("p_x", [0.3, 0.5, 0.7])
    def test_matches_dense_search(self, kind, p_x):
        theta = rm.TRUE_PARAMETERS[kind]
        e = econ(p_x)
        xs = np.linspace(0.0, 250.0, 25001)
        profits = rm.profit(kind, theta, e, xs)
        x_dense = xs[int(np.argmax(profits))]
        x_star = rm.closed_form_optimum(kind, theta, e, (0.0, 250.0))
        assert abs(x_star - x_dense) <= 0.01 + 1e-9
        assert rm.profit(kind, theta, e, x_star) >= profits.max() - 1e-6


class TestGrid:
    @pytest.mark.parametrize("p_x, arm", [(0.3, 200.0), (0.5, 200.0), (0.7, 150.0)])
    def test_price_shift_moves_oracle_arm(self, p_x, arm):
        assert GRID[rm.best_grid_arm(QP, QP_TRUTH, econ(p_x), GRID)] == arm

    def test_nearest_breaks_ties_low(self):
        assert GRID.nearest(25.0) == 0
        assert GRID.nearest(176.67) == 4

    def test_regular(self):
        assert rm.ArmGrid.regular(0, 250, 50) == GRID

    def test_invalid_grids(self):
        with pytest.raises(ModelDomainError):
            rm.ArmGrid(())
        with pytest.raises(ModelDomainError):
            rm.ArmGrid((0, 50, 50))
        with pytest.raises(ModelDomainError):
            rm.ArmGrid((-50, 0))

    def test_index_of(self):
        assert GRID.index_of(150) == 3
        with pytest.raises(ModelDomainError):
            GRID.index_of(125)

    def test_single_arm(self):
        single = rm.ArmGrid((120,))
        assert rm.best_grid_arm(QP, QP_TRUTH, econ(0.7), single) == 0
        assert math.isclose(single.domain[0], single.domain[1])


class TestParameterBox:
    def test_projection_lands_inside_the_bounds(self):
        lower, upper = rm.theta_bounds(QP)
        projected = rm.project_theta(QP, (80.0, 1.2, 0.5, -3.0))
        assert np.all(projected >= lower) and np.all(projected <= upper)
        assert projected[:2].tolist() == [80.0, 1.2]

    def test_unconstrained_entries_are_open(self):
        lower, upper = rm.theta_bounds(ModelKind.LOGISTIC)
        assert lower[2] == -np.inf and upper[2] == np.inf
        assert lower[0] > 0 and upper[0] == np.inf


class TestPlateauKnot:
    def test_unseen_knot_moves_to_the_vertex(self):
        theta = rm.settle_plateau_knot(QP, (80.0, 1.2, -0.003, 160.0), [150.0, 145.0, 155.0])
        assert theta[3] == pytest.approx(200.0)
        assert rm.evaluate(QP, theta, 150.0) == pytest.approx(rm.evaluate(QP, QP_TRUTH, 150.0))

    def test_knot_below_a_support_rate_stays(self):
        theta = rm.settle_plateau_knot(QP, (80.0, 1.2, -0.003, 160.0), [100.0, 200.0])
        assert theta[3] == 160.0

    def test_vertex_inside_the_support_leaves_the_knot(self):
        theta = rm.settle_plateau_knot(QP, (80.0, 0.6, -0.003, 160.0), [150.0])
        assert theta[3] == 160.0

    def test_other_families_pass_through(self):
        truth = rm.TRUE_PARAMETERS[ModelKind.LOGISTIC]
        theta = rm.settle_plateau_knot(ModelKind.LOGISTIC, truth, [0.0])
        assert theta.tolist() == list(truth)


DENSE = np.linspace(0.0, 400.0, 801)


class TestShape:
    @pytest.mark.parametrize("kind", [ModelKind.MITSCHERLICH, ModelKind.MICHAELIS_MENTEN,
                                      ModelKind.MITSCHERLICH_SHIFTED])
    @pytest.mark.parametrize("table", [rm.TRUE_PARAMETERS, rm.INITIAL_PARAMETERS])
    def test_saturating_families_strictly_increase(self, kind, table):
        assert np.all(np.diff(rm.evaluate(kind, table[kind], DENSE)) > 0)

    @pytest.mark.parametrize("theta", [QP_TRUTH, rm.INITIAL_PARAMETERS[QP]])
    def test_plateau_is_constant_past_the_knot(self, theta):
        past = DENSE[DENSE >= theta[3]]
        values = rm.evaluate(QP, theta, past)
        assert np.all(values == values[0])
        assert np.all(rm.grad_x(QP, theta, past[past > theta[3]]) == 0.0)

    @pytest.mark.parametrize("table", [rm.TRUE_PARAMETERS, rm.INITIAL_PARAMETERS])
    def test_logistic_stays_between_its_asymptotes(self, table):
        A, _, _, d = table[ModelKind.LOGISTIC]
        values = rm.evaluate(ModelKind.LOGISTIC, table[ModelKind.LOGISTIC], DENSE)
        assert np.all(values > d) and np.all(values < d + A)
        assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("kind", [ModelKind.MITSCHERLICH, ModelKind.MICHAELIS_MENTEN, QP,
                                  ModelKind.LOGISTIC, ModelKind.MITSCHERLICH_SHIFTED])
def test_costlier_fertilizer_never_raises_the_best_arm(kind):
    theta = rm.TRUE_PARAMETERS[kind]
    arms = [GRID[rm.best_grid_arm(kind, theta, econ(p_x), GRID)] for p_x in np.linspace(0.0, 3.0, 61)]
    assert all(later <= earlier for earlier, later in zip(arms, arms[1:]))
