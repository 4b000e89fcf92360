import numpy as np
import pytest

from src import response_models as rm
from src.environment import Environment, GaussianNoise, UniformNoise, make_noise
from tests.conftest import GRID, QP, QP_TRUTH, econ


def make_env(p_x=0.7, sigma=0.0, seed=0, noise="gaussian", grid=GRID):
    return Environment.from_seed(QP, QP_TRUTH, sigma, econ(p_x), grid, seed, noise=noise)


class TestPull:
    def test_regret_off_the_oracle(self):
        assert make_env().pull(200).instantaneous_regret == pytest.approx(3.5)

    def test_oracle_arm_has_no_regret(self):
        outcome = make_env().pull(150)
        assert outcome.instantaneous_regret == 0.0
        assert outcome.expected_profit == pytest.approx(857.5)

    def test_noiseless_profit(self):
        outcome = make_env().pull(100)
        assert outcome.yield_ == pytest.approx(170.0)
        assert outcome.profit == pytest.approx(780.0)

    def test_regret_is_nonnegative_on_the_grid(self):
        env = make_env(sigma=0.5)
        for arm in GRID:
            assert env.pull(arm).instantaneous_regret >= 0.0

    def test_profit_follows_noisy_yield(self):
        outcome = make_env(sigma=0.5, seed=3).pull(50)
        assert outcome.profit == pytest.approx(5.0 * outcome.yield_ - 0.7 * 50)
        assert outcome.yield_ != rm.evaluate(QP, QP_TRUTH, 50)

    def test_negative_arm_rejected(self):
        with pytest.raises(rm.ModelDomainError):
            make_env().pull(-10)


class TestOracle:
    @pytest.mark.parametrize("p_x, arm, profit", [
        (0.7, 150.0, 857.5),
        (0.5, 200.0, 894.0),
        (0.3, 200.0, 934.0),
    ])
    def test_best_arm(self, p_x, arm, profit):
        best_arm, best_profit = make_env(p_x).oracle()
        assert best_arm == arm
        assert best_profit == pytest.approx(profit)


class TestProbe:
    def test_noiseless(self):
        assert make_env().probe(125.0, 3) == pytest.approx(rm.evaluate(QP, QP_TRUTH, 125.0))

    def test_mean_concentrates(self):
        value = make_env(sigma=0.5, seed=8).probe(100.0, 10_000)
        assert abs(value - 170.0) <= 3 * 0.5 / 100

    def test_probes_do_not_disturb_rewards(self):
        plain = make_env(sigma=0.5, seed=12)
        probed = make_env(sigma=0.5, seed=12)
        a, b = [], []
        for arm in (0, 100, 250, 150):
            a.append(plain.pull(arm).yield_)
            b.append(probed.pull(arm).yield_)
            probed.probe(arm + 5, 3)
        assert a == b

    def test_invalid_repeats(self):
        with pytest.raises(ValueError):
            make_env().probe(100.0, 0)


class TestNoise:
    @pytest.mark.parametrize("noise_cls", [GaussianNoise, UniformNoise])
    def test_moments(self, noise_cls):
        draws = noise_cls(0.5).draw(np.random.default_rng(1), 100_000)
        assert abs(np.mean(draws)) <= 0.01
        assert abs(np.std(draws) - 0.5) <= 0.01

    def test_uniform_is_bounded(self):
        draws = UniformNoise(0.5).draw(np.random.default_rng(2), 10_000)
        assert np.max(np.abs(draws)) <= 0.5 * np.sqrt(3.0)

    def test_unknown_noise(self):
        with pytest.raises(ValueError):
            make_noise("cauchy", 0.5)

    def test_negative_sigma(self):
        with pytest.raises(rm.ModelDomainError):
            make_noise("gaussian", -0.1)


def test_seed_sequence_is_accepted():
    a = make_env(sigma=0.5, seed=np.random.SeedSequence(4))
    b = make_env(sigma=0.5, seed=np.random.SeedSequence(4))
    assert a.pull(100).yield_ == b.pull(100).yield_


def test_same_seed_same_yields():
    a = make_env(sigma=0.5, seed=6)
    b = make_env(sigma=0.5, seed=6)
    assert [a.pull(x).yield_ for x in GRID] == [b.pull(x).yield_ for x in GRID]
