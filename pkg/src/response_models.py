"""
Mechanistic yield-response families and the economics built on them.

Every family is evaluated through a small set of module functions that take
``(kind, theta, x)``. ``x`` may be a scalar or a numpy array; scalar input
gives scalar output. Parameter layouts:

    Mitscherlich          (A, b, d)      d + A(1 - exp(-b x))
    MichaelisMenten       (a, b, d)      d + a x / (b + x)
    QuadraticPlateau      (a, b, c, x0)  a + b x + c x^2, constant past x0
    Logistic              (A, B, C, d)   d + A / (1 + exp(-B (x - C)))
    MitscherlichShifted   (A, b, d)      A(1 - exp(-b (x - d)))

MitscherlichShifted only generates truth for the misspecified experiment.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

# Step of the dense search used when no closed form applies
DENSE_STEP = 0.01


class ModelDomainError(ValueError):
    """Raised when parameters or inputs violate a model's domain."""


class ModelKind(str, Enum):
    MITSCHERLICH = "mitscherlich"
    MICHAELIS_MENTEN = "michaelis_menten"
    QUADRATIC_PLATEAU = "quadratic_plateau"
    LOGISTIC = "logistic"
    MITSCHERLICH_SHIFTED = "mitscherlich_shifted"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key or kind.name.lower() == key:
                return kind
        raise ModelDomainError(f"Unknown model kind: {value!r}")


PARAM_NAMES = {
    ModelKind.MITSCHERLICH: ("A", "b", "d"),
    ModelKind.MICHAELIS_MENTEN: ("a", "b", "d"),
    ModelKind.QUADRATIC_PLATEAU: ("a", "b", "c", "x0"),
    ModelKind.LOGISTIC: ("A", "B", "C", "d"),
    ModelKind.MITSCHERLICH_SHIFTED: ("A", "b", "d"),
}

# Truth and initial values used by the simulation presets
TRUE_PARAMETERS = {
    ModelKind.MITSCHERLICH: (120.0, 0.015, 80.0),
    ModelKind.MICHAELIS_MENTEN: (150.0, 100.0, 60.0),
    ModelKind.QUADRATIC_PLATEAU: (80.0, 1.2, -0.003, 180.0),
    ModelKind.LOGISTIC: (120.0, 0.05, 125.0, 70.0),
    ModelKind.MITSCHERLICH_SHIFTED: (120.0, 0.015, 80.0),
}

INITIAL_PARAMETERS = {
    ModelKind.MITSCHERLICH: (100.0, 0.01, 75.0),
    ModelKind.MICHAELIS_MENTEN: (120.0, 80.0, 50.0),
    ModelKind.QUADRATIC_PLATEAU: (75.0, 1.0, -0.002, 160.0),
    ModelKind.LOGISTIC: (100.0, 0.03, 100.0, 65.0),
    ModelKind.MITSCHERLICH_SHIFTED: (100.0, 0.01, 75.0),
}

# Index of the additive baseline parameter (None when the family has none)
BASELINE_INDEX = {
    ModelKind.MITSCHERLICH: 2,
    ModelKind.MICHAELIS_MENTEN: 2,
    ModelKind.QUADRATIC_PLATEAU: 0,
    ModelKind.LOGISTIC: 3,
    ModelKind.MITSCHERLICH_SHIFTED: None,
}

# (index, sign) pairs: sign +1 means the parameter must be > 0, -1 means < 0
_SIGN_CONSTRAINTS = {
    ModelKind.MITSCHERLICH: ((0, 1), (1, 1)),
    ModelKind.MICHAELIS_MENTEN: ((0, 1), (1, 1)),
    ModelKind.QUADRATIC_PLATEAU: ((2, -1), (3, 1)),
    ModelKind.LOGISTIC: ((0, 1), (1, 1)),
    ModelKind.MITSCHERLICH_SHIFTED: ((0, 1), (1, 1)),
}

_PROJECTION_FLOOR = 1e-10


@dataclass(frozen=True)
class EconomicParams:
    """Grain price p_y ($/bu) and fertilizer price p_x ($/lb N)."""
    p_y: float
    p_x: float

    def __post_init__(self):
        if not (math.isfinite(self.p_y) and self.p_y > 0):
            raise ModelDomainError(f"p_y must be > 0, got {self.p_y}")
        if not (math.isfinite(self.p_x) and self.p_x >= 0):
            raise ModelDomainError(f"p_x must be >= 0, got {self.p_x}")


@dataclass(frozen=True)
class ArmGrid:
    """The discrete feasible set of fertilizer rates (lb N/ac)."""
    arms: tuple

    def __post_init__(self):
        arms = tuple(float(a) for a in self.arms)
        object.__setattr__(self, "arms", arms)
        if not arms:
            raise ModelDomainError("Arm grid must be nonempty")
        if any(not math.isfinite(a) or a < 0 for a in arms):
            raise ModelDomainError("Arm grid values must be finite and >= 0")
        if any(b <= a for a, b in zip(arms, arms[1:])):
            raise ModelDomainError("Arm grid must be strictly increasing")

    @classmethod
    def regular(cls, start, stop, step):
        count = int(round((stop - start) / step)) + 1
        return cls(tuple(start + i * step for i in range(count)))

    def __len__(self):
        return len(self.arms)

    def __getitem__(self, index):
        return self.arms[index]

    def __iter__(self):
        return iter(self.arms)

    @property
    def values(self):
        return np.asarray(self.arms, dtype=float)

    @property
    def domain(self):
        return (self.arms[0], self.arms[-1])

    def index_of(self, arm):
        for i, a in enumerate(self.arms):
            if a == float(arm):
                return i
        raise ModelDomainError(f"{arm} is not an arm of the grid")

    def nearest(self, x):
        """Index of the arm closest to ``x``; ties go to the lower arm."""
        distances = np.abs(self.values - float(x))
        return int(np.argmin(distances))


def as_theta(kind, theta):
    """Validates ``theta`` for ``kind`` and returns it as a float array."""
    kind = ModelKind.parse(kind)
    values = np.asarray(theta, dtype=float).reshape(-1)
    names = PARAM_NAMES[kind]
    if values.size != len(names):
        raise ModelDomainError(
            f"{kind.value} expects {len(names)} parameters {names}, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ModelDomainError(f"{kind.value} parameters must be finite: {values.tolist()}")
    for index, sign in _SIGN_CONSTRAINTS[kind]:
        value = values[index]
        if sign > 0 and not value > 0:
            raise ModelDomainError(f"{kind.value}: {names[index]} must be > 0, got {value}")
        if sign < 0 and not value < 0:
            raise ModelDomainError(f"{kind.value}: {names[index]} must be < 0, got {value}")
    return values


def project_theta(kind, theta):
    """Clips ``theta`` onto the invariant-respecting box (used by the fitters)."""
    kind = ModelKind.parse(kind)
    values = np.array(theta, dtype=float)
    for index, sign in _SIGN_CONSTRAINTS[kind]:
        if sign > 0:
            values[index] = max(values[index], _PROJECTION_FLOOR)
        else:
            values[index] = min(values[index], -_PROJECTION_FLOOR)
    return values


def theta_bounds(kind):
    """(lower, upper) arrays of the same box, in the form scipy's solvers take."""
    kind = ModelKind.parse(kind)
    p = len(PARAM_NAMES[kind])
    lower = np.full(p, -np.inf)
    upper = np.full(p, np.inf)
    for index, sign in _SIGN_CONSTRAINTS[kind]:
        if sign > 0:
            lower[index] = _PROJECTION_FLOOR
        else:
            upper[index] = -_PROJECTION_FLOOR
    return lower, upper


def settle_plateau_knot(kind, theta, support):
    """
    Moves a quadratic-plateau knot that no support rate lies beyond to the
    vertex -b/(2c) of the quadratic.

    The data cannot see x0 while every support rate sits on the left branch,
    so f is unchanged at those rates. The knot moves only when the vertex is
    past every support rate. Other families are returned as they are.
    """
    kind = ModelKind.parse(kind)
    values = np.array(as_theta(kind, theta))
    support = np.asarray(support, dtype=float)
    if kind is not ModelKind.QUADRATIC_PLATEAU or support.size == 0:
        return values
    _, b, c, x0 = values
    reach = float(support.max())
    vertex = -b / (2.0 * c)
    if reach <= x0 and vertex > reach and math.isfinite(vertex):
        values[3] = vertex
    return values


def _as_input(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ModelDomainError(f"Input rate must be finite and >= 0, got {x}")
    return arr


def _output(arr, scalar):
    if scalar:
        return float(arr)
    return arr


# --- family kernels -------------------------------------------------------
# Each kernel returns (f, grad_theta, fx, fxx, dfx_dtheta, dfxx_dtheta) for an
# array of inputs; gradients are stacked on the last axis.

def _mitscherlich(theta, x):
    A, b, _ = theta
    e = np.exp(-b * x)
    f = theta[2] + A * (1.0 - e)
    grad = np.stack([1.0 - e, A * x * e, np.ones_like(x)], axis=-1)
    fx = A * b * e
    fxx = -A * b * b * e
    dfx = np.stack([b * e, A * e * (1.0 - b * x), np.zeros_like(x)], axis=-1)
    dfxx = np.stack([-b * b * e, -A * b * e * (2.0 - b * x), np.zeros_like(x)], axis=-1)
    return f, grad, fx, fxx, dfx, dfxx


def _mitscherlich_shifted(theta, x):
    A, b, d = theta
    u = x - d
    e = np.exp(-b * u)
    f = A * (1.0 - e)
    grad = np.stack([1.0 - e, A * u * e, -A * b * e], axis=-1)
    fx = A * b * e
    fxx = -A * b * b * e
    dfx = np.stack([b * e, A * e * (1.0 - b * u), A * b * b * e], axis=-1)
    dfxx = np.stack([-b * b * e, -A * b * e * (2.0 - b * u), -A * b ** 3 * e], axis=-1)
    return f, grad, fx, fxx, dfx, dfxx


def _michaelis_menten(theta, x):
    a, b, d = theta
    s = b + x
    f = d + a * x / s
    grad = np.stack([x / s, -a * x / s ** 2, np.ones_like(x)], axis=-1)
    fx = a * b / s ** 2
    fxx = -2.0 * a * b / s ** 3
    dfx = np.stack([b / s ** 2, a * (x - b) / s ** 3, np.zeros_like(x)], axis=-1)
    dfxx = np.stack([-2.0 * b / s ** 3, -2.0 * a * (x - 2.0 * b) / s ** 4, np.zeros_like(x)], axis=-1)
    return f, grad, fx, fxx, dfx, dfxx


def _quadratic_plateau(theta, x):
    a, b, c, x0 = theta
    right = x > x0  # the knot itself uses the left branch
    plateau = a + b * x0 + c * x0 * x0
    zeros = np.zeros_like(x)
    ones = np.ones_like(x)
    f = np.where(right, plateau, a + b * x + c * x * x)
    grad = np.stack([
        ones,
        np.where(right, x0, x),
        np.where(right, x0 * x0, x * x),
        np.where(right, b + 2.0 * c * x0, 0.0),
    ], axis=-1)
    fx = np.where(right, 0.0, b + 2.0 * c * x)
    fxx = np.where(right, 0.0, 2.0 * c * ones)
    dfx = np.stack([zeros, np.where(right, 0.0, 1.0), np.where(right, 0.0, 2.0 * x), zeros], axis=-1)
    dfxx = np.stack([zeros, zeros, np.where(right, 0.0, 2.0), zeros], axis=-1)
    return f, grad, fx, fxx, dfx, dfxx


def _logistic(theta, x):
    A, B, C, d = theta
    u = x - C
    s = 1.0 / (1.0 + np.exp(-B * u))
    q = s * (1.0 - s)                    # ds/dz with z = B (x - C)
    r = q * (1.0 - 2.0 * s)              # dq/dz
    r1 = r * (1.0 - 2.0 * s) - 2.0 * q * q  # dr/dz
    f = d + A * s
    grad = np.stack([s, A * q * u, -A * B * q, np.ones_like(x)], axis=-1)
    fx = A * B * q
    fxx = A * B * B * r
    dfx = np.stack([B * q, A * q + A * B * r * u, -A * B * B * r, np.zeros_like(x)], axis=-1)
    dfxx = np.stack([
        B * B * r,
        2.0 * A * B * r + A * B * B * r1 * u,
        -A * B ** 3 * r1,
        np.zeros_like(x),
    ], axis=-1)
    return f, grad, fx, fxx, dfx, dfxx


_KERNELS = {
    ModelKind.MITSCHERLICH: _mitscherlich,
    ModelKind.MICHAELIS_MENTEN: _michaelis_menten,
    ModelKind.QUADRATIC_PLATEAU: _quadratic_plateau,
    ModelKind.LOGISTIC: _logistic,
    ModelKind.MITSCHERLICH_SHIFTED: _mitscherlich_shifted,
}


def _kernel(kind, theta, x):
    kind = ModelKind.parse(kind)
    values = as_theta(kind, theta)
    arr = _as_input(x)
    return _KERNELS[kind](values, arr), arr.ndim == 0


def evaluate(kind, theta, x):
    """Expected yield f(x; theta)."""
    parts, scalar = _kernel(kind, theta, x)
    return _output(parts[0], scalar)


def grad_params(kind, theta, x):
    """Analytic gradient of f with respect to theta (same layout as theta)."""
    parts, _ = _kernel(kind, theta, x)
    return np.asarray(parts[1], dtype=float)


def grad_x(kind, theta, x):
    """First derivative of f in x (left branch at the plateau knot)."""
    parts, scalar = _kernel(kind, theta, x)
    return _output(parts[2], scalar)


def hessian_x(kind, theta, x):
    """Second derivative of f in x (left branch at the plateau knot)."""
    parts, scalar = _kernel(kind, theta, x)
    return _output(parts[3], scalar)


def grad_params_dx(kind, theta, x):
    """Gradient with respect to theta of the first x-derivative."""
    parts, _ = _kernel(kind, theta, x)
    return np.asarray(parts[4], dtype=float)


def grad_params_dxx(kind, theta, x):
    """Gradient with respect to theta of the second x-derivative."""
    parts, _ = _kernel(kind, theta, x)
    return np.asarray(parts[5], dtype=float)


def profit(kind, theta, econ, x):
    """Profit p_y f(x; theta) - p_x x in dollars per acre."""
    parts, scalar = _kernel(kind, theta, x)
    return _output(econ.p_y * parts[0] - econ.p_x * np.asarray(x, dtype=float), scalar)


def _clamp(x, domain):
    lo, hi = domain
    return float(min(max(x, lo), hi))


def _dense_argmax(kind, theta, econ, domain):
    lo, hi = domain
    count = int(math.floor((hi - lo) / DENSE_STEP + 1e-9)) + 1
    xs = lo + DENSE_STEP * np.arange(count)
    xs = np.append(xs[xs < hi], hi)
    values = profit(kind, theta, econ, xs)
    return float(xs[int(np.argmax(values))])


def _best_of(kind, theta, econ, candidates):
    candidates = sorted(set(candidates))
    values = [profit(kind, theta, econ, c) for c in candidates]
    return candidates[int(np.argmax(values))]


def closed_form_optimum(kind, theta, econ, domain):
    """
    Continuous profit-maximizing dose, clamped to ``domain``.

    Args:
        kind: ModelKind of the response.
        theta: parameter vector valid for ``kind``.
        econ: EconomicParams.
        domain: (x_min, x_max) feasible interval.

    Returns:
        float: the optimal dose inside the domain.
    """
    kind = ModelKind.parse(kind)
    values = as_theta(kind, theta)
    x_min, x_max = float(domain[0]), float(domain[1])
    if not x_min <= x_max:
        raise ModelDomainError(f"Invalid domain [{x_min}, {x_max}]")
    p_y, p_x = econ.p_y, econ.p_x
    bounds = (x_min, x_max)

    if kind in (ModelKind.MITSCHERLICH, ModelKind.MITSCHERLICH_SHIFTED):
        A, b, d = values
        shift = d if kind is ModelKind.MITSCHERLICH_SHIFTED else 0.0
        if p_x == 0:
            return x_max
        ratio = p_x / (p_y * A * b)
        if ratio >= 1 and kind is ModelKind.MITSCHERLICH:
            return _clamp(0.0, bounds)
        return _clamp(shift - math.log(ratio) / b, bounds)

    if kind is ModelKind.QUADRATIC_PLATEAU:
        _, b, c, x0 = values
        x_star = min(x0, max(0.0, (p_x / p_y - b) / (2.0 * c)))
        return _clamp(x_star, bounds)

    if kind is ModelKind.MICHAELIS_MENTEN:
        a, b, _ = values
        if p_x == 0:
            return x_max
        x_star = max(0.0, math.sqrt(a * b * p_y / p_x) - b)
        return _clamp(x_star, bounds)

    # Logistic: stationary points solve u^2 + (2 - gamma) u + 1 = 0, u = exp(-B (x - C))
    A, B, C, _ = values
    if p_x == 0:
        return x_max
    gamma = B * p_y * A / p_x
    disc = (gamma - 2.0) ** 2 - 4.0
    if disc < 0:
        logger.debug(f"Logistic optimum: negative discriminant (gamma={gamma:.4g}), dense search")
        return _dense_argmax(kind, values, econ, bounds)
    u_star = (gamma - 2.0 - math.sqrt(disc)) / 2.0
    if u_star <= 0:
        logger.debug(f"Logistic optimum: u*={u_star:.4g} <= 0, dense search")
        return _dense_argmax(kind, values, econ, bounds)
    x_star = _clamp(C - math.log(u_star) / B, bounds)
    # The local maximum competes with the lower end of the domain
    return _best_of(kind, values, econ, (x_star, x_min))


def best_grid_arm(kind, theta, econ, grid):
    """Index of the grid arm with the highest profit; ties go to the lower arm."""
    values = profit(kind, theta, econ, grid.values)
    return int(np.argmax(values))
