"""
Simulated field: noisy yields from a truth model plus the regret oracle.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src import response_models as rm

logger = logging.getLogger(__name__)


class GaussianNoise:
    """i.i.d. N(0, sigma^2) yield noise."""

    name = "gaussian"

    def __init__(self, sigma):
        self.sigma = float(sigma)

    def draw(self, rng, size=None):
        if self.sigma == 0:
            return np.zeros(size) if size is not None else 0.0
        return rng.normal(0.0, self.sigma, size)


class UniformNoise:
    """Bounded uniform noise with standard deviation ``sigma`` (sub-Gaussian)."""

    name = "uniform"

    def __init__(self, sigma):
        self.sigma = float(sigma)
        self.half_width = self.sigma * math.sqrt(3.0)

    def draw(self, rng, size=None):
        if self.sigma == 0:
            return np.zeros(size) if size is not None else 0.0
        return rng.uniform(-self.half_width, self.half_width, size)


NOISE_MODELS = {
    GaussianNoise.name: GaussianNoise,
    UniformNoise.name: UniformNoise,
}


def make_noise(name, sigma):
    if sigma < 0 or not math.isfinite(sigma):
        raise rm.ModelDomainError(f"Noise standard deviation must be >= 0, got {sigma}")
    try:
        return NOISE_MODELS[name](sigma)
    except KeyError:
        raise ValueError(f"Unknown noise model {name!r}; expected one of {sorted(NOISE_MODELS)}")


@dataclass(frozen=True)
class StepOutcome:
    arm: float
    yield_: float
    profit: float
    expected_profit: float
    instantaneous_regret: float


@dataclass
class Environment:
    truth_kind: rm.ModelKind
    truth_theta: np.ndarray
    noise_sigma: float
    econ: rm.EconomicParams
    grid: rm.ArmGrid
    rng: np.random.Generator
    probe_rng: np.random.Generator
    noise: object = None
    _oracle: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.truth_kind = rm.ModelKind.parse(self.truth_kind)
        self.truth_theta = rm.as_theta(self.truth_kind, self.truth_theta)
        if self.noise is None:
            self.noise = make_noise(GaussianNoise.name, self.noise_sigma)
        elif self.noise.sigma != self.noise_sigma:
            raise ValueError("Noise model sigma does not match noise_sigma")

    @classmethod
    def from_seed(cls, truth_kind, truth_theta, noise_sigma, econ, grid, seed, noise="gaussian"):
        """Builds an environment whose reward and probe streams are independent children of ``seed``.

        ``seed`` is an int or an already spawned ``np.random.SeedSequence``.
        """
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        reward_seed, probe_seed = seed.spawn(2)
        return cls(truth_kind, truth_theta, noise_sigma, econ, grid,
                   np.random.default_rng(reward_seed), np.random.default_rng(probe_seed),
                   make_noise(noise, noise_sigma))

    def expected_yield(self, x):
        return rm.evaluate(self.truth_kind, self.truth_theta, x)

    def expected_profit(self, x):
        return rm.profit(self.truth_kind, self.truth_theta, self.econ, x)

    def oracle(self):
        """(best grid arm, its expected profit) under the truth model."""
        if self._oracle is None:
            index = rm.best_grid_arm(self.truth_kind, self.truth_theta, self.econ, self.grid)
            arm = self.grid[index]
            self._oracle = (arm, self.expected_profit(arm))
        return self._oracle

    def pull(self, arm):
        """Plays ``arm`` for one season; regret is measured on expected profits."""
        arm = float(arm)
        if not math.isfinite(arm) or arm < 0:
            raise rm.ModelDomainError(f"Fertilizer rate must be >= 0, got {arm}")
        mean = self.expected_yield(arm)
        observed = float(mean + self.noise.draw(self.rng))
        expected_profit = self.econ.p_y * mean - self.econ.p_x * arm
        _, best_profit = self.oracle()
        return StepOutcome(
            arm=arm,
            yield_=observed,
            profit=self.econ.p_y * observed - self.econ.p_x * arm,
            expected_profit=expected_profit,
            instantaneous_regret=best_profit - expected_profit,
        )

    def probe(self, x, m=1):
        """Mean of ``m`` noisy yields at ``x`` drawn from the side-channel stream."""
        x = float(x)
        if not math.isfinite(x) or x < 0:
            raise rm.ModelDomainError(f"Probe rate must be >= 0, got {x}")
        if m < 1:
            raise ValueError(f"Probe repeats must be >= 1, got {m}")
        draws = self.noise.draw(self.probe_rng, int(m))
        return float(self.expected_yield(x) + np.mean(draws))
