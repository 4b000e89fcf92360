"""
Arm-selection strategies.

Every strategy is a ``select_*(state, config, grid, econ) -> Decision``
function; :class:`Policy` wraps one of them with its mutable state and the
post-observation update.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from src import response_models as rm
from src.estimation import (FitResult, fit_curvature_matched, fit_nls,
                            prediction_stderr)

logger = logging.getLogger(__name__)

LINUCB_RIDGE = 1e-8


class PolicyKind(str, Enum):
    EPS_GREEDY = "eps_greedy"
    MODEL_UCB = "model_ucb"
    VIOLIN = "violin"
    LINUCB = "linucb"
    KNN_UCB = "knn_ucb"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"epsilon_greedy": "eps_greedy", "ucb": "model_ucb", "knn": "knn_ucb"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"Unknown policy: {value!r}")


MODEL_BASED = (PolicyKind.EPS_GREEDY, PolicyKind.MODEL_UCB, PolicyKind.VIOLIN)


@dataclass
class PolicyConfig:
    kind: PolicyKind
    fitted_model: rm.ModelKind = rm.ModelKind.QUADRATIC_PLATEAU
    epsilon_exponent: float = 1.5
    epsilon: Optional[float] = None
    alpha: float = 1.0
    alpha1: float = 2.0
    alpha2: float = 640.0
    k: int = 3
    theta_init: Optional[tuple] = None
    burn_in: Optional[int] = None
    refit: bool = True
    name: Optional[str] = None

    def __post_init__(self):
        self.kind = PolicyKind.parse(self.kind)
        self.fitted_model = rm.ModelKind.parse(self.fitted_model)
        if self.name is None:
            self.name = self.kind.value
        if self.theta_init is None:
            self.theta_init = rm.INITIAL_PARAMETERS[self.fitted_model]
        if self.kind in MODEL_BASED:
            self.theta_init = tuple(rm.as_theta(self.fitted_model, self.theta_init).tolist())
        else:
            self.theta_init = tuple(float(v) for v in self.theta_init)
        if not self.epsilon_exponent > 0:
            raise ValueError(f"epsilon_exponent must be > 0, got {self.epsilon_exponent}")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for label in ("alpha", "alpha1", "alpha2"):
            if getattr(self, label) < 0:
                raise ValueError(f"{label} must be >= 0, got {getattr(self, label)}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be an integer >= 1, got {self.k}")
        self.k = int(self.k)
        if self.burn_in is not None and (int(self.burn_in) != self.burn_in or self.burn_in < 0):
            raise ValueError(f"burn_in must be an integer >= 0, got {self.burn_in}")


class Observation(NamedTuple):
    arm: float
    yield_: float
    profit: float


@dataclass
class Decision:
    arm_index: int
    arm: float
    explored: bool = False
    fit_failed: bool = False
    theta: Optional[tuple] = None
    scores: dict = field(default_factory=dict)


@dataclass
class PolicyState:
    rng: np.random.Generator
    t: int = 0
    history: list = field(default_factory=list)
    last_fit: Optional[FitResult] = None
    theta_hat: Optional[np.ndarray] = None
    targets: list = field(default_factory=list)
    burn_in_order: list = field(default_factory=list)


def exploration_probability(t, exponent=1.5, epsilon=None):
    """Probability of exploring at global round ``t`` (1-based)."""
    if epsilon is not None:
        return float(epsilon)
    return float(t) ** (-exponent)


def explore_now(rng, t, exponent=1.5, epsilon=None):
    return bool(rng.random() < exploration_probability(t, exponent, epsilon))


def _decision(grid, index, **kwargs):
    return Decision(int(index), grid[int(index)], **kwargs)


def _random_arm(state, grid, **kwargs):
    return _decision(grid, state.rng.integers(len(grid)), explored=True, **kwargs)


def _burn_in_length(config, grid):
    return len(grid) if config.burn_in is None else int(config.burn_in)


def _burn_in_arm(state, grid):
    # One seeded permutation per pass over the grid
    while len(state.burn_in_order) <= state.t:
        state.burn_in_order.extend(int(i) for i in state.rng.permutation(len(grid)))
    return _decision(grid, state.burn_in_order[state.t], explored=True)


def current_fit(state, config):
    """
    Fits the configured model to the history, or pins it in fixed-model mode.

    Each refit starts from the previous usable estimate and falls back to
    ``theta_init`` when that start fails.
    """
    if not config.refit:
        theta = rm.as_theta(config.fitted_model, config.theta_init)
        p = theta.size
        fit = FitResult(theta, np.zeros((p, p)), 0.0, True, 0)
    else:
        warm = state.last_fit is not None and state.last_fit.usable
        start = state.last_fit.theta_hat if warm else config.theta_init
        fit = fit_nls(config.fitted_model, state.history, start)
        if warm and not fit.usable:
            logger.debug(f"Warm start {fit.status}, refitting from the initial parameters")
            fit = fit_nls(config.fitted_model, state.history, config.theta_init)
    state.last_fit = fit
    return fit


def ucb_scores(fit, kind, econ, grid, alpha):
    """Returns (estimated profit, uncertainty, UCB score) arrays over the grid."""
    xs = grid.values
    profit_hat = rm.profit(kind, fit.theta_hat, econ, xs)
    uncertainty = econ.p_y * prediction_stderr(fit, kind, xs)
    return profit_hat, uncertainty, profit_hat + alpha * uncertainty


def select_eps_greedy(state, config, grid, econ):
    if state.t < _burn_in_length(config, grid):
        return _burn_in_arm(state, grid)
    if explore_now(state.rng, state.t + 1, config.epsilon_exponent, config.epsilon):
        return _random_arm(state, grid)

    fit = current_fit(state, config)
    if not fit.usable:
        logger.warning(f"eps-greedy: fit {fit.status} at round {state.t + 1}, exploring instead")
        return _random_arm(state, grid, fit_failed=True)
    x_star = rm.closed_form_optimum(config.fitted_model, fit.theta_hat, econ, grid.domain)
    return _decision(grid, grid.nearest(x_star), theta=tuple(fit.theta_hat.tolist()),
                     scores={"x_star": x_star})


def select_model_ucb(state, config, grid, econ):
    if state.t < _burn_in_length(config, grid):
        return _burn_in_arm(state, grid)

    fit = current_fit(state, config)
    if not fit.usable:
        played = [obs[0] for obs in state.history]
        counts = np.array([played.count(arm) for arm in grid])
        logger.warning(f"model-UCB: fit {fit.status} at round {state.t + 1}, playing least-played arm")
        return _decision(grid, int(np.argmin(counts)), explored=True, fit_failed=True)

    profit_hat, uncertainty, score = ucb_scores(fit, config.fitted_model, econ, grid, config.alpha)
    return _decision(grid, int(np.argmax(score)), theta=tuple(fit.theta_hat.tolist()), scores={
        "profit": profit_hat.tolist(),
        "uncertainty": uncertainty.tolist(),
        "alpha": config.alpha,
        "score": score.tolist(),
    })


def select_violin(state, config, grid, econ):
    theta = state.theta_hat
    if theta is None:
        theta = rm.as_theta(config.fitted_model, config.theta_init)
    profit_hat = rm.profit(config.fitted_model, theta, econ, grid.values)
    return _decision(grid, int(np.argmax(profit_hat)), theta=tuple(theta.tolist()),
                     scores={"profit": profit_hat.tolist()})


def update_violin(state, config, targets):
    """Curvature-matched refit after the round's reward and probes are in."""
    state.targets.append(targets)
    if not config.refit:
        return None
    start = state.theta_hat if state.theta_hat is not None else config.theta_init
    fit = fit_curvature_matched(config.fitted_model, state.history, state.targets,
                                config.alpha1, config.alpha2, start)
    state.last_fit = fit
    if fit.usable:
        state.theta_hat = fit.theta_hat
    else:
        logger.debug(f"ViOlin: fit {fit.status} after round {state.t}, keeping previous estimate")
    return fit


def select_linucb(state, config, grid, econ):
    xs = np.array([obs[0] for obs in state.history], dtype=float)
    if np.unique(xs).size < 2:
        return _random_arm(state, grid)
    ys = np.array([obs[1] for obs in state.history], dtype=float)

    features = np.column_stack([np.ones_like(xs), xs])
    beta = np.linalg.lstsq(features, ys, rcond=None)[0]
    v_inv = np.linalg.inv(features.T @ features + LINUCB_RIDGE * np.eye(2))

    candidates = np.column_stack([np.ones(len(grid)), grid.values])
    profit_hat = econ.p_y * (candidates @ beta) - econ.p_x * grid.values
    width = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", candidates, v_inv, candidates), 0.0))
    score = profit_hat + config.alpha * width
    return _decision(grid, int(np.argmax(score)), theta=tuple(beta.tolist()), scores={
        "profit": profit_hat.tolist(),
        "uncertainty": width.tolist(),
        "alpha": config.alpha,
        "score": score.tolist(),
    })


def knn_estimate(xs, ys, x, k):
    """Mean and sample std of the ``k`` observations nearest to ``x``.

    Distance ties are broken by observation order.
    """
    order = np.argsort(np.abs(xs - x), kind="stable")[:k]
    neighbours = ys[order]
    spread = float(np.std(neighbours, ddof=1)) if neighbours.size > 1 else 0.0
    return float(np.mean(neighbours)), spread


def select_knn_ucb(state, config, grid, econ):
    k = config.k
    if len(state.history) < k:
        return _random_arm(state, grid)
    xs = np.array([obs[0] for obs in state.history], dtype=float)
    ys = np.array([obs[1] for obs in state.history], dtype=float)

    estimates = [knn_estimate(xs, ys, x, k) for x in grid]
    mean = np.array([e[0] for e in estimates])
    spread = np.array([e[1] for e in estimates])
    profit_hat = econ.p_y * mean - econ.p_x * grid.values
    bonus = spread / math.sqrt(k)
    score = profit_hat + config.alpha * bonus
    return _decision(grid, int(np.argmax(score)), scores={
        "profit": profit_hat.tolist(),
        "uncertainty": bonus.tolist(),
        "alpha": config.alpha,
        "score": score.tolist(),
    })


SELECTORS = {
    PolicyKind.EPS_GREEDY: select_eps_greedy,
    PolicyKind.MODEL_UCB: select_model_ucb,
    PolicyKind.VIOLIN: select_violin,
    PolicyKind.LINUCB: select_linucb,
    PolicyKind.KNN_UCB: select_knn_ucb,
}


class Policy:
    """A configured strategy plus its per-replicate state."""

    def __init__(self, config, grid, econ, rng):
        self.config = config
        self.grid = grid
        self.econ = econ
        self.state = PolicyState(rng=rng)
        if config.kind is PolicyKind.VIOLIN:
            self.state.theta_hat = rm.as_theta(config.fitted_model, config.theta_init)

    @property
    def name(self):
        return self.config.name

    @property
    def needs_curvature(self):
        return self.config.kind is PolicyKind.VIOLIN

    def choose(self):
        decision = SELECTORS[self.config.kind](self.state, self.config, self.grid, self.econ)
        logger.debug(f"{self.name} round {self.state.t + 1}: arm {decision.arm} "
                     f"(explored={decision.explored})")
        return decision

    def record(self, observation, targets=None):
        """Appends an observation; ViOlin also refits with the round's curvature targets."""
        self.state.history.append(Observation(*observation))
        self.state.t += 1
        if self.needs_curvature and targets is not None:
            return update_violin(self.state, self.config, targets)
        return None
