"""
Season-by-season advisory sessions persisted as a JSON state file.

A recommendation is a pure function of the stored seed and History: every
command rebuilds the policy and replays the History through it.
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from src import response_models as rm
from src.data_model import atomic_write_text
from src.estimation import fit_nls
from src.policies import MODEL_BASED, Policy, PolicyConfig, PolicyKind
from src.version_checker import STATE_FORMAT_VERSION, check_state_format

logger = logging.getLogger(__name__)


class SessionError(RuntimeError):
    """Raised for missing, incompatible or out-of-sequence advisory state."""


@dataclass
class SessionState:
    model: str
    policy: str
    alpha: float
    theta_init: list
    grid: list
    p_y: float
    p_x: float
    seed: int
    history: list = field(default_factory=list)
    pending: Optional[dict] = None
    format_version: str = STATE_FORMAT_VERSION

    @property
    def kind(self):
        return rm.ModelKind.parse(self.model)

    @property
    def arm_grid(self):
        return rm.ArmGrid(tuple(self.grid))

    @property
    def econ(self):
        return rm.EconomicParams(self.p_y, self.p_x)

    @property
    def round(self):
        return len(self.history)

    def policy_config(self):
        return PolicyConfig(kind=self.policy, fitted_model=self.kind,
                            alpha=self.alpha, theta_init=tuple(self.theta_init))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        ok, message = check_state_format(data.get("format_version", "0"))
        if not ok:
            raise SessionError(message)
        known = cls.__dataclass_fields__
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except TypeError as e:
            raise SessionError(f"Incomplete state: {e}") from e


class SessionStore:
    """Atomic JSON persistence of one SessionState."""

    def __init__(self, state_file):
        self.state_file = state_file

    def exists(self):
        return os.path.exists(self.state_file)

    def load(self):
        if not self.exists():
            raise SessionError(f"No advisory session at {self.state_file}; run 'advise init' first")
        try:
            with open(self.state_file, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            raise SessionError(f"Cannot read state file {self.state_file}: {e}") from e
        return SessionState.from_dict(data)

    def save(self, state):
        directory = os.path.dirname(os.path.abspath(self.state_file))
        os.makedirs(directory, exist_ok=True)
        try:
            atomic_write_text(self.state_file, json.dumps(state.to_dict(), indent=2) + "\n")
        except OSError as e:
            raise OSError(f"Failed to write state file {self.state_file}: {e}") from e
        logger.debug(f"Saved session round {state.round} to {self.state_file}")


def init_session(store, model, p_y, p_x, grid=None, theta=None, policy="model_ucb",
                 alpha=1.0, seed=None, force=False):
    """Creates a fresh state file; refuses to overwrite unless ``force``."""
    if store.exists() and not force:
        raise SessionError(f"{store.state_file} already exists; use --force to replace it")
    kind = rm.ModelKind.parse(model)
    policy_kind = PolicyKind.parse(policy)
    if policy_kind is PolicyKind.VIOLIN:
        raise SessionError("ViOlin needs curvature probes, which a real field cannot provide")
    grid = rm.ArmGrid(tuple(grid if grid is not None else (0, 50, 100, 150, 200, 250)))
    econ = rm.EconomicParams(p_y, p_x)
    theta = rm.as_theta(kind, theta if theta is not None else rm.INITIAL_PARAMETERS[kind])
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 32))

    state = SessionState(
        model=kind.value,
        policy=policy_kind.value,
        alpha=float(alpha),
        theta_init=theta.tolist(),
        grid=list(grid.arms),
        p_y=econ.p_y,
        p_x=econ.p_x,
        seed=int(seed),
    )
    state.policy_config()  # validates alpha and theta_init
    store.save(state)
    logger.info(f"Initialized {policy_kind.value} session for {kind.value} at {store.state_file}")
    return state


def _replay(state):
    """Fresh policy with the History fed back through choose/record."""
    policy = Policy(state.policy_config(), state.arm_grid, state.econ,
                    np.random.default_rng(state.seed))
    for entry in state.history:
        policy.choose()
        policy.record((entry["arm"], entry["yield"], entry["profit"]))
    return policy


def _breakdown(decision):
    scores = decision.scores
    if "score" not in scores:
        return {}
    i = decision.arm_index
    return {
        "profit": scores["profit"][i],
        "uncertainty": scores["uncertainty"][i],
        "alpha": scores["alpha"],
        "score": scores["score"][i],
    }


def next_recommendation(store):
    """Returns the pending recommendation, computing and saving it if needed."""
    state = store.load()
    if state.pending is not None:
        logger.info(f"Recommendation for round {state.round + 1} already pending")
        return state, state.pending

    decision = _replay(state).choose()
    state.pending = {
        "round": state.round + 1,
        "arm": decision.arm,
        "explored": decision.explored,
        "fit_failed": decision.fit_failed,
        "breakdown": _breakdown(decision),
    }
    store.save(state)
    logger.info(f"Recommended {decision.arm:g} for round {state.round + 1}")
    return state, state.pending


def parse_yield(text):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise SessionError(f"Yield must be a number, got {text!r}")
    if not math.isfinite(value):
        raise SessionError(f"Yield must be finite, got {text!r}")
    return value


def observe(store, yield_text):
    """Records the yield observed at the pending recommendation."""
    state = store.load()
    if state.pending is None:
        raise SessionError("No pending recommendation; run 'advise next' first")
    observed = parse_yield(yield_text)
    arm = state.pending["arm"]
    entry = {
        "round": state.round + 1,
        "arm": arm,
        "yield": observed,
        "profit": state.p_y * observed - state.p_x * arm,
    }
    state.history.append(entry)
    state.pending = None
    store.save(state)
    logger.info(f"Round {entry['round']}: observed {observed:g} at {arm:g}")
    return state, entry


def status(store):
    """Current History, parameter estimate and economic optimum."""
    state = store.load()
    kind = state.kind
    report = {"state": state, "theta": None, "fit_status": None, "x_star": None}
    if PolicyKind.parse(state.policy) not in MODEL_BASED:
        return report
    theta = np.asarray(state.theta_init, dtype=float)
    if state.history:
        fit = fit_nls(kind, [(e["arm"], e["yield"]) for e in state.history], state.theta_init)
        report["fit_status"] = fit.status
        if fit.usable:
            theta = fit.theta_hat
    report["theta"] = dict(zip(rm.PARAM_NAMES[kind], theta.tolist()))
    report["x_star"] = rm.closed_form_optimum(kind, theta, state.econ, state.arm_grid.domain)
    return report
