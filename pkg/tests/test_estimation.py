import math

import numpy as np
import pytest

from src import estimation
from src import response_models as rm
from src.estimation import (STATUS_CONVERGED, STATUS_UNDERDETERMINED, CurvatureTargets,
                            FitResult, estimate_curvature, fit_curvature_matched, fit_nls,
                            prediction_stderr)
from src.response_models import ModelKind
from tests.conftest import GRID, QP, QP_TRUTH

CANONICAL = [ModelKind.MITSCHERLICH, ModelKind.MICHAELIS_MENTEN, QP, ModelKind.LOGISTIC]


def noiseless_history(kind, theta, arms=GRID):
    return [(x, rm.evaluate(kind, theta, x)) for x in arms]


def exact_targets(kind, theta, arms=GRID):
    return [CurvatureTargets(rm.grad_x(kind, theta, x), rm.hessian_x(kind, theta, x), x) for x in arms]


def noiseless_probe(kind, theta):
    return lambda x, m: rm.evaluate(kind, theta, x)


class TestFitNls:
    @pytest.mark.parametrize("kind", CANONICAL)
    def test_noiseless_recovery(self, kind):
        truth = rm.TRUE_PARAMETERS[kind]
        fit = fit_nls(kind, noiseless_history(kind, truth), rm.INITIAL_PARAMETERS[kind])
        assert fit.usable
        assert fit.theta_hat.tolist() == pytest.approx(list(truth), rel=1e-6, abs=1e-6)

    def test_already_at_minimum(self):
        init = rm.INITIAL_PARAMETERS[QP]
        fit = fit_nls(QP, noiseless_history(QP, init), init)
        assert fit.status == STATUS_CONVERGED
        assert fit.theta_hat.tolist() == pytest.approx(list(init))
        assert fit.residual_variance == pytest.approx(0.0, abs=1e-20)

    def test_single_observation_is_underdetermined(self):
        init = rm.INITIAL_PARAMETERS[QP]
        fit = fit_nls(QP, [(100.0, 170.0)], init)
        assert fit.status == STATUS_UNDERDETERMINED
        assert not fit.converged
        assert fit.residual_variance == 1.0
        assert fit.theta_hat.tolist() == list(init)
        jac = rm.grad_params(QP, init, np.array([100.0]))
        expected = np.linalg.inv(jac.T @ jac + 1e-8 * np.eye(4))
        np.testing.assert_allclose(fit.covariance, expected, rtol=1e-6)

    def test_repeated_arm_counts_once(self):
        history = [(100.0, 170.0), (100.0, 171.0), (100.0, 169.0), (100.0, 170.5), (150.0, 192.0)]
        fit = fit_nls(QP, history, rm.INITIAL_PARAMETERS[QP])
        assert fit.status == STATUS_UNDERDETERMINED

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            fit_nls(QP, [], rm.INITIAL_PARAMETERS[QP])

    def test_noisy_fit_has_positive_variance(self):
        rng = np.random.default_rng(5)
        history = [(x, rm.evaluate(QP, QP_TRUTH, x) + rng.normal(0, 0.5)) for x in list(GRID) * 3]
        fit = fit_nls(QP, history, rm.INITIAL_PARAMETERS[QP])
        assert fit.usable
        assert fit.residual_variance > 0
        assert np.all(np.linalg.eigvalsh(fit.covariance) >= -1e-12)
        assert fit.theta_hat[0] == pytest.approx(80.0, abs=2.0)

    def test_objective_never_increases_with_more_evaluations(self, monkeypatch):
        rng = np.random.default_rng(8)
        history = [(x, rm.evaluate(QP, QP_TRUTH, x) + rng.normal(0, 0.5)) for x in list(GRID) * 2]
        init = rm.INITIAL_PARAMETERS[QP]
        start = noiseless_history(QP, init, [x for x, _ in history])
        objectives = [sum((y - y0) ** 2 for (_, y), (_, y0) in zip(history, start))]
        for cap in (1, 2, 3, 5, 8, 13, 200):
            monkeypatch.setattr(estimation, "MAX_ITERATIONS", cap)
            objectives.append(fit_nls(QP, history, init).objective)
        assert objectives[1] == pytest.approx(objectives[0])
        assert all(b <= a * (1 + 1e-12) for a, b in zip(objectives, objectives[1:]))
        assert objectives[-1] < objectives[0]


class TestPredictionStderr:
    def test_zero_covariance(self):
        fit = FitResult(np.array(QP_TRUTH), np.zeros((4, 4)), 0.0, True, 0)
        assert prediction_stderr(fit, QP, 100.0) == 0.0

    def test_identity_covariance(self):
        theta = (120.0, 0.015, 80.0)
        x = math.log(2.0) / 0.015
        fit = FitResult(np.array(theta), np.eye(3), 1.0, True, 0)
        g = rm.grad_params(ModelKind.MITSCHERLICH, theta, x)
        assert g[0] == pytest.approx(0.5)
        assert prediction_stderr(fit, ModelKind.MITSCHERLICH, x) == pytest.approx(math.sqrt(g @ g))

    def test_array_input(self):
        fit = FitResult(np.array(QP_TRUTH), np.eye(4) * 1e-4, 1.0, True, 0)
        values = prediction_stderr(fit, QP, GRID.values)
        assert values.shape == (6,)
        assert np.all(values >= 0)
        assert values[2] == pytest.approx(prediction_stderr(fit, QP, 100.0))

    def test_history_order_does_not_matter(self):
        rng = np.random.default_rng(11)
        history = [(x, rm.evaluate(QP, QP_TRUTH, x) + rng.normal(0, 0.5)) for x in list(GRID) * 2]
        shuffled = [history[i] for i in rng.permutation(len(history))]
        init = rm.INITIAL_PARAMETERS[QP]
        a = prediction_stderr(fit_nls(QP, history, init), QP, GRID.values)
        b = prediction_stderr(fit_nls(QP, shuffled, init), QP, GRID.values)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-9)


class TestEstimateCurvature:
    def test_exact_on_quadratic_branch(self):
        targets = estimate_curvature(noiseless_probe(QP, QP_TRUTH), 100.0, h=5.0, m=1)
        assert targets.grad_target == pytest.approx(0.6, abs=1e-9)
        assert targets.hess_target == pytest.approx(-0.006, abs=1e-9)
        assert targets.at_arm == 100.0

    def test_flat_plateau(self):
        targets = estimate_curvature(noiseless_probe(QP, QP_TRUTH), 230.0, h=5.0, m=1)
        assert targets.grad_target == pytest.approx(0.0, abs=1e-12)
        assert targets.hess_target == pytest.approx(0.0, abs=1e-12)

    def test_mitscherlich_within_step_error(self):
        theta = (120.0, 0.015, 80.0)
        targets = estimate_curvature(noiseless_probe(ModelKind.MITSCHERLICH, theta), 100.0)
        assert targets.grad_target == pytest.approx(120 * 0.015 * math.exp(-1.5), abs=1e-3)

    def test_probe_order_and_repeats(self):
        calls = []

        def probe(x, m):
            calls.append((x, m))
            return rm.evaluate(QP, QP_TRUTH, x)

        estimate_curvature(probe, 100.0, h=5.0, m=3)
        assert calls == [(95.0, 3), (100.0, 3), (105.0, 3)]

    def test_forward_stencil_near_zero(self):
        targets = estimate_curvature(noiseless_probe(QP, QP_TRUTH), 0.0, h=5.0, m=1, stencil="forward")
        assert targets.grad_target == pytest.approx(1.2, abs=1e-9)
        assert targets.hess_target == pytest.approx(-0.006, abs=1e-9)

    def test_central_stencil_needs_room(self):
        with pytest.raises(ValueError):
            estimate_curvature(noiseless_probe(QP, QP_TRUTH), 2.0, h=5.0)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            estimate_curvature(noiseless_probe(QP, QP_TRUTH), 100.0, h=0.0)
        with pytest.raises(ValueError):
            estimate_curvature(noiseless_probe(QP, QP_TRUTH), 100.0, m=0)
        with pytest.raises(ValueError):
            estimate_curvature(noiseless_probe(QP, QP_TRUTH), 100.0, stencil="backward")


class TestFitCurvatureMatched:
    def test_zero_penalties_equal_plain_fit(self):
        rng = np.random.default_rng(3)
        history = [(x, rm.evaluate(QP, QP_TRUTH, x) + rng.normal(0, 0.5)) for x in GRID]
        targets = [CurvatureTargets(rng.normal(), rng.normal(), x) for x in GRID]
        init = rm.INITIAL_PARAMETERS[QP]
        plain = fit_nls(QP, history, init)
        matched = fit_curvature_matched(QP, history, targets, 0.0, 0.0, init)
        assert np.array_equal(plain.theta_hat, matched.theta_hat)
        assert np.array_equal(plain.covariance, matched.covariance)
        assert plain.status == matched.status

    @pytest.mark.parametrize("kind", CANONICAL)
    def test_noiseless_recovery(self, kind):
        truth = rm.TRUE_PARAMETERS[kind]
        fit = fit_curvature_matched(kind, noiseless_history(kind, truth), exact_targets(kind, truth),
                                    2.0, 640.0, rm.INITIAL_PARAMETERS[kind])
        assert fit.usable
        assert fit.theta_hat.tolist() == pytest.approx(list(truth), rel=1e-6, abs=1e-6)

    def test_dominant_curvature_penalty(self):
        arms = (0.0, 50.0, 100.0, 150.0)
        history = noiseless_history(QP, QP_TRUTH, arms)
        targets = [CurvatureTargets(rm.grad_x(QP, QP_TRUTH, x), -0.01, x) for x in arms]
        fit = fit_curvature_matched(QP, history, targets, 0.0, 1e12, rm.INITIAL_PARAMETERS[QP])
        assert fit.usable
        assert rm.hessian_x(QP, fit.theta_hat, 100.0) == pytest.approx(-0.01, abs=1e-4)

    def test_targets_make_single_arm_identifiable(self):
        theta = rm.TRUE_PARAMETERS[ModelKind.MITSCHERLICH]
        kind = ModelKind.MITSCHERLICH
        history = noiseless_history(kind, theta, (100.0,))
        fit = fit_curvature_matched(kind, history, exact_targets(kind, theta, (100.0,)),
                                    2.0, 640.0, rm.INITIAL_PARAMETERS[kind])
        assert fit.status != STATUS_UNDERDETERMINED

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            fit_curvature_matched(QP, [(100.0, 170.0)], [], -1.0, 0.0, rm.INITIAL_PARAMETERS[QP])

    def test_non_finite_targets_rejected(self):
        with pytest.raises(ValueError):
            CurvatureTargets(float("nan"), 0.0, 100.0)

    def test_targets_let_one_arm_fit_the_plateau(self):
        history = noiseless_history(QP, QP_TRUTH, (150.0,))
        fit = fit_curvature_matched(QP, history, exact_targets(QP, QP_TRUTH, (150.0,)),
                                    2.0, 640.0, rm.INITIAL_PARAMETERS[QP])
        assert fit.usable
        assert fit.theta_hat[:3].tolist() == pytest.approx(list(QP_TRUTH[:3]), rel=1e-6, abs=1e-6)
        # nothing lies past the knot, so it sits at the vertex of the quadratic
        assert fit.theta_hat[3] == pytest.approx(200.0, rel=1e-4)

    def test_one_arm_with_targets_moves_four_parameters(self):
        kind = ModelKind.LOGISTIC
        truth = rm.TRUE_PARAMETERS[kind]
        init = rm.INITIAL_PARAMETERS[kind]
        fit = fit_curvature_matched(kind, noiseless_history(kind, truth, (100.0,)),
                                    exact_targets(kind, truth, (100.0,)), 2.0, 640.0, init)
        assert fit.usable
        assert fit.status != STATUS_UNDERDETERMINED
        assert fit.theta_hat.tolist() != list(init)
