"""
Nonlinear least-squares estimation for the yield-response families.

One bounded trust-region solve (scipy.optimize.least_squares) serves both the
plain fit and the curvature-matched fit; the two only differ in the stacked
residual vector. MAX_ITERATIONS caps residual evaluations.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from src import response_models as rm

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
RELATIVE_TOLERANCE = 1e-10
COVARIANCE_RIDGE = 1e-8

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_UNDERDETERMINED = "underdetermined"
STATUS_FAILED = "failed"


@dataclass
class FitResult:
    theta_hat: np.ndarray
    covariance: np.ndarray
    residual_variance: float
    converged: bool
    iterations: int
    status: str = STATUS_CONVERGED
    objective: float = float("nan")

    @property
    def usable(self):
        """True when theta_hat comes from an actual minimization."""
        return self.status in (STATUS_CONVERGED, STATUS_MAX_ITERATIONS)


@dataclass(frozen=True)
class CurvatureTargets:
    grad_target: float
    hess_target: float
    at_arm: float

    def __post_init__(self):
        if not (math.isfinite(self.grad_target) and math.isfinite(self.hess_target)):
            raise ValueError(f"Curvature targets must be finite: {self}")


def _history_arrays(history):
    """Accepts (x, y, ...) tuples, including policy Observations."""
    if len(history) == 0:
        raise ValueError("Cannot fit an empty history")
    xs = np.array([float(item[0]) for item in history])
    ys = np.array([float(item[1]) for item in history])
    return xs, ys


@dataclass
class _ResidualSystem:
    kind: rm.ModelKind
    xs: np.ndarray
    ys: np.ndarray
    target_xs: np.ndarray = field(default_factory=lambda: np.empty(0))
    grad_targets: np.ndarray = field(default_factory=lambda: np.empty(0))
    hess_targets: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha1: float = 0.0
    alpha2: float = 0.0

    def __call__(self, theta):
        residuals = [rm.evaluate(self.kind, theta, self.xs) - self.ys]
        jacobians = [rm.grad_params(self.kind, theta, self.xs)]
        if self.alpha1 > 0 and self.target_xs.size:
            w = math.sqrt(self.alpha1)
            residuals.append(w * (rm.grad_x(self.kind, theta, self.target_xs) - self.grad_targets))
            jacobians.append(w * rm.grad_params_dx(self.kind, theta, self.target_xs))
        if self.alpha2 > 0 and self.target_xs.size:
            w = math.sqrt(self.alpha2)
            residuals.append(w * (rm.hessian_x(self.kind, theta, self.target_xs) - self.hess_targets))
            jacobians.append(w * rm.grad_params_dxx(self.kind, theta, self.target_xs))
        return np.concatenate(residuals), np.vstack(jacobians)

    @property
    def penalized(self):
        return self.target_xs.size > 0 and (self.alpha1 > 0 or self.alpha2 > 0)

    @property
    def support(self):
        return np.concatenate([self.xs, self.target_xs])

    def distinct_arms(self):
        return np.unique(self.xs).size


def _covariance(kind, theta, xs, residual_variance):
    p = theta.size
    jac = rm.grad_params(kind, theta, xs)
    info = jac.T @ jac + COVARIANCE_RIDGE * np.eye(p)
    cov = residual_variance * np.linalg.inv(info)
    return 0.5 * (cov + cov.T)


def _residual_variance(rss, n, p):
    return float(rss / max(1, n - p)) if n > p else 1.0


def _least_squares(kind, system, theta0):
    """
    Minimizes ||r(theta)||^2 inside the parameter sign box.

    Returns:
        tuple: (theta, objective, evaluations, status)
    """
    try:
        r0, jac0 = system(theta0)
    except (FloatingPointError, rm.ModelDomainError) as e:
        logger.warning(f"Fit aborted at the initial point: {e}")
        return theta0, float("nan"), 0, STATUS_FAILED
    objective = float(r0 @ r0)
    if not (math.isfinite(objective) and np.all(np.isfinite(jac0))):
        return theta0, objective, 0, STATUS_FAILED
    if objective == 0.0:
        return theta0, objective, 0, STATUS_CONVERGED

    lower, upper = rm.theta_bounds(kind)
    last = {}

    def residuals(theta):
        r, jac = system(theta)
        last["theta"], last["jac"] = theta.copy(), jac
        return r

    def jacobian(theta):
        if "theta" in last and np.array_equal(last["theta"], theta):
            return last["jac"]
        return system(theta)[1]

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            result = least_squares(
                residuals, rm.project_theta(kind, theta0), jac=jacobian,
                bounds=(lower, upper), method="trf", x_scale="jac",
                ftol=RELATIVE_TOLERANCE, xtol=RELATIVE_TOLERANCE, gtol=RELATIVE_TOLERANCE,
                max_nfev=MAX_ITERATIONS,
            )
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.warning(f"{kind.value}: solver failed: {e}")
        return theta0, objective, 0, STATUS_FAILED

    theta = rm.project_theta(kind, result.x)
    final = 2.0 * float(result.cost)
    if result.status < 0 or not math.isfinite(final):
        return theta0, final, result.nfev, STATUS_FAILED
    status = STATUS_MAX_ITERATIONS if result.status == 0 else STATUS_CONVERGED
    return theta, final, result.nfev, status


def _fit(kind, system, theta_init):
    kind = rm.ModelKind.parse(kind)
    theta0 = rm.as_theta(kind, theta_init)
    p = theta0.size

    # Penalized fits run from the first target on; directions nothing constrains stay at the start
    if not system.penalized and system.distinct_arms() < p:
        logger.debug(f"{kind.value}: {system.distinct_arms()} distinct arms for {p} parameters, skipping fit")
        cov = _covariance(kind, theta0, system.xs, 1.0)
        return FitResult(theta0, cov, 1.0, False, 0, STATUS_UNDERDETERMINED)

    theta, objective, iterations, status = _least_squares(kind, system, theta0)
    if status == STATUS_FAILED:
        logger.warning(f"{kind.value}: non-finite objective, falling back to the initial parameters")
        return FitResult(theta0, np.zeros((p, p)), 1.0, False, iterations, STATUS_FAILED, objective)
    theta = rm.settle_plateau_knot(kind, theta, system.support)

    data_residuals = rm.evaluate(kind, theta, system.xs) - system.ys
    rss = float(data_residuals @ data_residuals)
    variance = _residual_variance(rss, system.xs.size, p)
    cov = _covariance(kind, theta, system.xs, variance)
    if status == STATUS_MAX_ITERATIONS:
        logger.info(f"{kind.value}: stopped after {iterations} iterations without meeting tolerance")
    return FitResult(theta, cov, variance, status == STATUS_CONVERGED, iterations, status, objective)


def fit_nls(kind, history, theta_init):
    """
    Least-squares fit of ``kind`` to ``history`` starting at ``theta_init``.

    Args:
        kind: ModelKind to fit.
        history: sequence of (x, y, ...) observations.
        theta_init: starting parameter vector.

    Returns:
        FitResult
    """
    xs, ys = _history_arrays(history)
    return _fit(kind, _ResidualSystem(rm.ModelKind.parse(kind), xs, ys), theta_init)


def fit_curvature_matched(kind, history, targets, alpha1, alpha2, theta_init):
    """Least-squares fit with penalties matching estimated x-derivatives at played arms."""
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError(f"Penalty weights must be >= 0, got {alpha1}, {alpha2}")
    xs, ys = _history_arrays(history)
    targets = list(targets)
    system = _ResidualSystem(
        rm.ModelKind.parse(kind), xs, ys,
        target_xs=np.array([t.at_arm for t in targets], dtype=float),
        grad_targets=np.array([t.grad_target for t in targets], dtype=float),
        hess_targets=np.array([t.hess_target for t in targets], dtype=float),
        alpha1=float(alpha1),
        alpha2=float(alpha2),
    )
    return _fit(kind, system, theta_init)


def prediction_stderr(fit, kind, x):
    """Delta-method standard error sqrt(g' Cov g) of the fitted mean yield at ``x``."""
    g = rm.grad_params(kind, fit.theta_hat, x)
    if g.ndim == 1:
        return math.sqrt(max(float(g @ fit.covariance @ g), 0.0))
    quad = np.einsum("ij,jk,ik->i", g, fit.covariance, g)
    return np.sqrt(np.maximum(quad, 0.0))


def estimate_curvature(probe, x, h=5.0, m=3, stencil="central"):
    """
    Finite-difference estimates of f'(x) and f''(x) from noisy probes.

    ``probe(x, m)`` must return the mean of ``m`` yield draws at ``x``. The
    forward stencil samples x, x + h, x + 2h and is meant for arms closer
    than ``h`` to zero.
    """
    if h <= 0:
        raise ValueError(f"Probe step must be > 0, got {h}")
    if m < 1:
        raise ValueError(f"Probe repeats must be >= 1, got {m}")
    x = float(x)
    if stencil == "central":
        if x - h < 0:
            raise ValueError(f"Central stencil needs x - h >= 0, got x={x}, h={h}")
        y_minus = probe(x - h, m)
        y_mid = probe(x, m)
        y_plus = probe(x + h, m)
        grad = (y_plus - y_minus) / (2.0 * h)
        hess = (y_plus - 2.0 * y_mid + y_minus) / (h * h)
    elif stencil == "forward":
        y0 = probe(x, m)
        y1 = probe(x + h, m)
        y2 = probe(x + 2.0 * h, m)
        grad = (-3.0 * y0 + 4.0 * y1 - y2) / (2.0 * h)
        hess = (y0 - 2.0 * y1 + y2) / (h * h)
    else:
        raise ValueError(f"Unknown stencil: {stencil!r}")
    return CurvatureTargets(float(grad), float(hess), x)
