import json
import logging
import os
from dataclasses import dataclass, field

from src import response_models as rm
from src.policies import PolicyConfig, PolicyKind


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a configuration."""


class ConfigManager:
    """
    Singleton class to manage application configuration.
    Loads config.json (or $FERTBANDIT_CONFIG) merged over the defaults.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self.logger = logging.getLogger(__name__)
        self.config_path = os.environ.get("FERTBANDIT_CONFIG", "config.json")
        self.config = self.load_config()

    @classmethod
    def reset(cls):
        """Forget the loaded instance so the next access re-reads the file."""
        cls._instance = None

    def get_default_config(self):
        """Returns the default configuration."""
        return {
            "logging": {
                "log_file": "fertbandit.log",
                "console_level": "WARNING"
            },
            "run": {
                "output_dir": "results",
                "workers": 1
            },
            "advise": {
                "state_file": "advise_state.json",
                "policy": "model_ucb",
                "alpha": 1.0
            }
        }

    def load_config(self):
        """Load configuration from file, falling back to defaults."""
        default = self.get_default_config()
        if not os.path.exists(self.config_path):
            self.logger.debug(f"Config file {self.config_path} not found. Using defaults.")
            return default
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                config = json.load(f)
            self.logger.info(f"Loaded configuration from {self.config_path}")
        except (OSError, json.JSONDecodeError) as e:
            self.logger.error(f"Failed to load config: {e}. Using defaults.")
            return default

        # Merge with defaults to ensure all keys exist
        for section in default:
            if not isinstance(config.get(section), dict):
                config[section] = default[section]
            else:
                for key in default[section]:
                    if key not in config[section]:
                        config[section][key] = default[section][key]
        return config

    def get(self, section, key, default=None):
        return self.config.get(section, {}).get(key, default)

    def get_log_file(self):
        return self.get("logging", "log_file")

    def get_console_level(self):
        return self.get("logging", "console_level", "WARNING")

    def get_output_dir(self):
        return self.get("run", "output_dir", "results")

    def get_workers(self):
        return int(self.get("run", "workers", 1))

    def get_state_file(self):
        return self.get("advise", "state_file", "advise_state.json")

    def get_advise_policy(self):
        return self.get("advise", "policy", "model_ucb")

    def get_advise_alpha(self):
        return float(self.get("advise", "alpha", 1.0))


# --- experiment configuration ---------------------------------------------

SCENARIOS = ("well_specified", "misspecified")

EXPERIMENT_DEFAULTS = {
    "scenario": "well_specified",
    "truth_kind": "quadratic_plateau",
    "truth_theta": None,
    "fitted_kind": None,
    "theta_init": None,
    "grid": [0, 50, 100, 150, 200, 250],
    "p_y": 5.0,
    "prices": [0.3, 0.5, 0.7],
    "sigma": 0.5,
    "noise": "gaussian",
    "T": 30,
    "R": 10,
    "base_seed": 0,
    "policies": ["eps_greedy", "model_ucb", "violin", "linucb", "knn_ucb"],
    "epsilon_exponent": 1.5,
    "epsilon": None,
    "alpha": 1.0,
    "alpha1": 2.0,
    "alpha2": 640.0,
    "k": 3,
    "burn_in": None,
    "refit": True,
    "probe_step": 5.0,
    "probe_repeats": 3,
    "count_probes": False,
    "output_dir": None,
    "workers": None,
}

# Keys that may be set per policy as "<policy>.<key>"
POLICY_KEYS = ("fitted_kind", "theta_init", "epsilon_exponent", "epsilon", "alpha",
               "alpha1", "alpha2", "k", "burn_in", "refit")


@dataclass
class ExperimentConfig:
    scenario: str
    truth_kind: rm.ModelKind
    truth_theta: tuple
    grid: rm.ArmGrid
    p_y: float
    prices: tuple
    sigma: float
    horizon: int
    replicates: int
    base_seed: int
    policies: list
    output_dir: str
    noise: str = "gaussian"
    probe_step: float = 5.0
    probe_repeats: int = 3
    count_probes: bool = False
    workers: int = 1
    source: dict = field(default_factory=dict, repr=False)

    def econ(self, p_x):
        return rm.EconomicParams(self.p_y, p_x)

    def policy(self, name):
        for policy in self.policies:
            if policy.name == name:
                return policy
        raise ConfigError(f"Unknown policy: {name!r}")


def parse_value(text):
    """Parses an override value as JSON, falling back to the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_override(item):
    if "=" not in item:
        raise ConfigError(f"Override must look like key=value, got {item!r}")
    key, _, value = item.partition("=")
    return key.strip(), parse_value(value.strip())


def _check(key, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key!r}: {e}") from e


def _positive_int(value, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"expected an integer >= {minimum}, got {value!r}")
    return int(value)


def _float_list(value):
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError(f"expected a nonempty list, got {value!r}")
    return tuple(float(v) for v in value)


def _validate_keys(raw):
    known_policies = {kind.value for kind in PolicyKind}
    for key in raw:
        if key in EXPERIMENT_DEFAULTS:
            continue
        policy, dot, sub = key.partition(".")
        if dot and sub in POLICY_KEYS:
            try:
                PolicyKind.parse(policy)
            except ValueError:
                raise ConfigError(f"Unknown policy in key {key!r}; expected one of {sorted(known_policies)}")
            continue
        raise ConfigError(f"Unknown configuration key: {key!r}")


def build_experiment_config(raw):
    """Validates a flat key/value mapping and builds an ExperimentConfig."""
    _validate_keys(raw)
    values = dict(EXPERIMENT_DEFAULTS)
    values.update(raw)

    scenario = values["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"Invalid value for 'scenario': {scenario!r}; expected one of {SCENARIOS}")

    truth_kind = _check("truth_kind", rm.ModelKind.parse, values["truth_kind"])
    truth_theta = values["truth_theta"] or rm.TRUE_PARAMETERS[truth_kind]
    truth_theta = tuple(_check("truth_theta", rm.as_theta, truth_kind, truth_theta).tolist())

    default_fitted = values["fitted_kind"]
    if default_fitted is None:
        default_fitted = (rm.ModelKind.QUADRATIC_PLATEAU
                          if truth_kind is rm.ModelKind.MITSCHERLICH_SHIFTED else truth_kind)

    grid = _check("grid", lambda v: rm.ArmGrid(tuple(v)), values["grid"])
    p_y = _check("p_y", float, values["p_y"])
    prices = _check("prices", _float_list, values["prices"])
    for p_x in prices:
        _check("prices", rm.EconomicParams, p_y, p_x)
    sigma = _check("sigma", float, values["sigma"])
    if sigma < 0:
        raise ConfigError(f"Invalid value for 'sigma': must be >= 0, got {sigma}")

    policy_names = values["policies"]
    if isinstance(policy_names, str):
        policy_names = [p.strip() for p in policy_names.split(",") if p.strip()]
    if not policy_names:
        raise ConfigError("Invalid value for 'policies': at least one policy is required")

    policies = []
    for name in policy_names:
        kind = _check("policies", PolicyKind.parse, name)
        if any(p.kind is kind for p in policies):
            raise ConfigError(f"Invalid value for 'policies': {kind.value} listed twice")
        own = {key: raw[f"{kind.value}.{key}"] for key in POLICY_KEYS if f"{kind.value}.{key}" in raw}
        settings = {key: own.get(key, values[key]) for key in POLICY_KEYS}

        fitted_kind = _check(f"{kind.value}.fitted_kind", rm.ModelKind.parse,
                             own.get("fitted_kind", default_fitted))
        theta_init = settings["theta_init"]
        if theta_init is None or ("fitted_kind" in own and "theta_init" not in own):
            theta_init = rm.INITIAL_PARAMETERS[fitted_kind]

        def make_policy():
            epsilon = settings["epsilon"]
            return PolicyConfig(
                kind=kind,
                fitted_model=fitted_kind,
                epsilon_exponent=float(settings["epsilon_exponent"]),
                epsilon=None if epsilon is None else float(epsilon),
                alpha=float(settings["alpha"]),
                alpha1=float(settings["alpha1"]),
                alpha2=float(settings["alpha2"]),
                k=settings["k"],
                theta_init=tuple(theta_init),
                burn_in=settings["burn_in"],
                refit=bool(settings["refit"]),
            )

        policies.append(_check(kind.value, make_policy))

    output_dir = values["output_dir"] or os.path.join(ConfigManager().get_output_dir(), scenario)
    workers = values["workers"] if values["workers"] is not None else ConfigManager().get_workers()

    noise = values["noise"]
    if noise not in ("gaussian", "uniform"):
        raise ConfigError(f"Invalid value for 'noise': {noise!r}")
    probe_step = _check("probe_step", float, values["probe_step"])
    if probe_step <= 0:
        raise ConfigError(f"Invalid value for 'probe_step': must be > 0, got {probe_step}")

    return ExperimentConfig(
        scenario=scenario,
        truth_kind=truth_kind,
        truth_theta=truth_theta,
        grid=grid,
        p_y=p_y,
        prices=prices,
        sigma=sigma,
        horizon=_check("T", _positive_int, values["T"]),
        replicates=_check("R", _positive_int, values["R"]),
        base_seed=_check("base_seed", _positive_int, values["base_seed"], 0),
        policies=policies,
        output_dir=str(output_dir),
        noise=noise,
        probe_step=probe_step,
        probe_repeats=_check("probe_repeats", _positive_int, values["probe_repeats"]),
        count_probes=bool(values["count_probes"]),
        workers=_check("workers", _positive_int, workers),
        source=values,
    )


def load_experiment_config(path, overrides=None):
    """
    Loads a preset file and applies ``key=value`` overrides.

    Args:
        path (str): path of a flat JSON document.
        overrides (dict): already-parsed overrides applied on top.

    Returns:
        ExperimentConfig
    """
    logger = logging.getLogger(__name__)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a flat key/value document")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"Config key {key!r} must be a scalar or a list")
    raw.update(overrides or {})
    config = build_experiment_config(raw)
    logger.info(f"Loaded experiment config {path}: scenario={config.scenario}, "
                f"T={config.horizon}, R={config.replicates}, policies={[p.name for p in config.policies]}")
    return config
