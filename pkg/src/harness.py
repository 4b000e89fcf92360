"""
Replicated bandit experiments: the select/pull/update loop, aggregation of
the per-round logs, and the run table, summary and plot outputs.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from src import response_models as rm
from src import svg_plot
from src.data_model import RunTable, save_summary
from src.environment import Environment
from src.estimation import STATUS_FAILED, estimate_curvature
from src.policies import MODEL_BASED, Policy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundLog:
    t: int
    arm: float
    yield_: float
    profit_realized: float
    profit_expected: float
    regret_inst: float
    regret_cum: float
    theta: Optional[tuple] = None
    explored: bool = False
    fit_failed: bool = False
    probe: bool = False


@dataclass
class RunRecord:
    policy: str
    p_x: float
    replicate: int
    rounds: list = field(default_factory=list)
    param_names: Optional[tuple] = None

    def __len__(self):
        return len(self.rounds)

    @property
    def cumulative_regret(self):
        return np.array([r.regret_cum for r in self.rounds])

    @property
    def average_profit(self):
        """Running mean of realized profit."""
        profits = np.array([r.profit_realized for r in self.rounds])
        return np.cumsum(profits) / np.arange(1, len(profits) + 1)


def _theta_snapshot(policy, decision):
    if policy.needs_curvature:
        return tuple(policy.state.theta_hat.tolist())
    if decision.theta is not None:
        return tuple(decision.theta)
    if policy.config.kind in MODEL_BASED:
        fit = policy.state.last_fit
        if fit is not None and fit.usable:
            return tuple(fit.theta_hat.tolist())
        return tuple(policy.config.theta_init)
    return None


class _RoundBook:
    """Accumulates round logs and cumulative regret up to the horizon."""

    def __init__(self, env, horizon):
        self.env = env
        self.horizon = horizon
        self.rounds = []
        self.regret_cum = 0.0
        _, self.best_profit = env.oracle()

    @property
    def full(self):
        return len(self.rounds) >= self.horizon

    def log(self, arm, yield_, theta, explored, fit_failed=False, probe=False):
        econ = self.env.econ
        expected = float(self.env.expected_profit(arm))
        regret = self.best_profit - expected
        self.regret_cum += regret
        self.rounds.append(RoundLog(
            t=len(self.rounds) + 1,
            arm=float(arm),
            yield_=float(yield_),
            profit_realized=econ.p_y * float(yield_) - econ.p_x * float(arm),
            profit_expected=expected,
            regret_inst=regret,
            regret_cum=self.regret_cum,
            theta=theta,
            explored=explored,
            fit_failed=fit_failed,
            probe=probe,
        ))


def _curvature_targets(env, arm, step, repeats, charged):
    """Probes around ``arm``; when ``charged`` is a list each draw is appended to it."""

    def probe(x, m):
        if charged is None:
            return env.probe(x, m)
        draws = [env.probe(x, 1) for _ in range(m)]
        charged.extend((x, y) for y in draws)
        return float(np.mean(draws))

    stencil = "central" if arm >= step else "forward"
    return estimate_curvature(probe, arm, h=step, m=repeats, stencil=stencil)


def run_replicate(config, policy_config, p_x, replicate_index):
    """
    Plays one policy for ``config.horizon`` rounds against a fresh field.

    The replicate seed is ``base_seed + replicate_index``; the field and the
    policy draw from independent children of it, so every policy sees the
    same yield noise in a given replicate.
    """
    seed = config.base_seed + replicate_index
    env_seed, policy_seed = np.random.SeedSequence(seed).spawn(2)
    econ = config.econ(p_x)
    env = Environment.from_seed(config.truth_kind, config.truth_theta, config.sigma,
                                econ, config.grid, env_seed, noise=config.noise)
    policy = Policy(policy_config, config.grid, econ, np.random.default_rng(policy_seed))
    book = _RoundBook(env, config.horizon)

    while not book.full:
        decision = policy.choose()
        outcome = env.pull(decision.arm)
        observation = (outcome.arm, outcome.yield_, outcome.profit)

        targets = None
        charged = [] if config.count_probes else None
        if policy.needs_curvature:
            targets = _curvature_targets(env, outcome.arm, config.probe_step,
                                         config.probe_repeats, charged)
        fit = policy.record(observation, targets)
        fit_failed = decision.fit_failed or (fit is not None and fit.status == STATUS_FAILED)

        theta = _theta_snapshot(policy, decision)
        book.log(outcome.arm, outcome.yield_, theta, decision.explored, fit_failed)
        for x, y in charged or ():
            if book.full:
                break
            book.log(x, y, theta, True, probe=True)

    param_names = rm.PARAM_NAMES[policy_config.fitted_model] if policy_config.kind in MODEL_BASED else None
    logger.debug(f"{policy.name} p_x={p_x} replicate {replicate_index}: "
                 f"cumulative regret {book.regret_cum:.3f}")
    return RunRecord(policy.name, p_x, replicate_index, book.rounds, param_names)


def run_experiment(config, workers=None):
    """
    Runs every (policy, p_x, replicate) cell; the result order does not
    depend on ``workers``.
    """
    workers = workers or config.workers
    tasks = [(policy, p_x, r)
             for policy in config.policies
             for p_x in config.prices
             for r in range(config.replicates)]
    logger.info(f"Running {len(tasks)} replicates of T={config.horizon} with {workers} worker(s)")

    if workers <= 1:
        return [run_replicate(config, *task) for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda task: run_replicate(config, *task), tasks))


def checkpoint_rounds(horizon):
    """Rounds nearest T/3, 2T/3 and T (10, 20, 30 for T=30)."""
    rounds = {int(math.floor(horizon * k / 3.0 + 0.5)) for k in (1, 2, 3)}
    return sorted(r for r in rounds if r > 0)


def _describe(values):
    stats = pd.Series(values, dtype=float).describe()
    return {
        "mean": float(stats["mean"]),
        "median": float(stats["50%"]),
        "q1": float(stats["25%"]),
        "q3": float(stats["75%"]),
        "min": float(stats["min"]),
        "max": float(stats["max"]),
    }


def _mean_thetas(records, horizon):
    means = []
    for t in range(horizon):
        thetas = [r.rounds[t].theta for r in records if r.rounds[t].theta is not None]
        lengths = {len(theta) for theta in thetas}
        if not thetas or len(lengths) != 1:
            means.append(None)
        else:
            means.append(np.mean(np.array(thetas, dtype=float), axis=0).tolist())
    return means


def _arm_proportions(records, grid, horizon):
    # Probe rows are not selections; they are left out of the running counts
    counts = np.zeros(len(grid))
    plays = 0
    props = []
    for t in range(horizon):
        for record in records:
            entry = record.rounds[t]
            if not entry.probe:
                counts[grid.index_of(entry.arm)] += 1
                plays += 1
        props.append((counts / plays).tolist() if plays else [0.0] * len(grid))
    return props


@dataclass
class CellSummary:
    policy: str
    p_x: float
    checkpoints: list
    arm_props: list
    theta_mean: list
    regret_mean: list
    profit_mean: list
    param_names: Optional[tuple] = None
    regret_at: dict = field(default_factory=dict, repr=False)
    profit_at: dict = field(default_factory=dict, repr=False)

    def to_json_dict(self):
        return {
            "checkpoints": self.checkpoints,
            "arm_props": self.arm_props,
            "theta_mean": self.theta_mean,
            "regret_mean": self.regret_mean,
            "profit_mean": self.profit_mean,
        }


def aggregate(records, grid):
    """
    Reduces the R replicates of one (policy, p_x) cell.

    Raises:
        ValueError: on an empty set or records of different lengths.
    """
    if not records:
        raise ValueError("Cannot aggregate an empty record set")
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ValueError(f"Records have mismatched lengths: {sorted(lengths)}")
    horizon = lengths.pop()

    regret = np.array([r.cumulative_regret for r in records])
    avg_profit = np.array([r.average_profit for r in records])
    checkpoints, regret_at, profit_at = [], {}, {}
    for c in checkpoint_rounds(horizon):
        regret_at[c] = regret[:, c - 1].tolist()
        profit_at[c] = avg_profit[:, c - 1].tolist()
        checkpoints.append({
            "round": c,
            "regret_cum": _describe(regret_at[c]),
            "avg_profit": _describe(profit_at[c]),
        })

    first = records[0]
    return CellSummary(
        policy=first.policy,
        p_x=first.p_x,
        checkpoints=checkpoints,
        arm_props=_arm_proportions(records, grid, horizon),
        theta_mean=_mean_thetas(records, horizon),
        regret_mean=regret.mean(axis=0).tolist(),
        profit_mean=avg_profit.mean(axis=0).tolist(),
        param_names=first.param_names,
        regret_at=regret_at,
        profit_at=profit_at,
    )


@dataclass
class AggregateSummary:
    grid: rm.ArmGrid
    cells: dict = field(default_factory=dict)

    def policies(self):
        return list(dict.fromkeys(policy for policy, _ in self.cells))

    def prices(self):
        return list(dict.fromkeys(p_x for _, p_x in self.cells))

    def cell(self, policy, p_x):
        return self.cells[(policy, p_x)]

    def to_json_dict(self):
        out = {}
        for (policy, p_x), cell in self.cells.items():
            out.setdefault(policy, {})[str(p_x)] = cell.to_json_dict()
        return out

    def final_table(self):
        """Mean cumulative regret and mean average profit at the last round."""
        rows = [{
            "policy": policy,
            "p_x": p_x,
            "regret_cum": cell.regret_mean[-1],
            "avg_profit": cell.profit_mean[-1],
        } for (policy, p_x), cell in self.cells.items()]
        return pd.DataFrame(rows, columns=["policy", "p_x", "regret_cum", "avg_profit"])


def summarize(records, grid):
    """Groups records by (policy, p_x) in run order and aggregates each cell."""
    groups = {}
    for record in records:
        groups.setdefault((record.policy, record.p_x), []).append(record)
    summary = AggregateSummary(grid)
    for key, cell_records in groups.items():
        summary.cells[key] = aggregate(cell_records, grid)
    return summary


def _price_tag(p_x):
    return f"p{p_x:g}"


def _write_svg(path, text, written):
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"Failed to write plot {path}: {e}") from e
    written.append(path)


def _plot_cells(summary, output_dir, written):
    for p_x in summary.prices():
        cells = [summary.cell(policy, p_x) for policy in summary.policies() if (policy, p_x) in summary.cells]
        tag = _price_tag(p_x)
        rounds = list(range(1, len(cells[0].regret_mean) + 1))

        _write_svg(os.path.join(output_dir, f"regret_{tag}.svg"), svg_plot.line_chart(
            f"Mean cumulative regret, p_x={p_x:g}", "round", "cumulative regret ($)",
            [(c.policy, rounds, c.regret_mean) for c in cells]), written)
        _write_svg(os.path.join(output_dir, f"profit_{tag}.svg"), svg_plot.line_chart(
            f"Mean average profit, p_x={p_x:g}", "round", "average profit ($)",
            [(c.policy, rounds, c.profit_mean) for c in cells]), written)

        for metric, attr, label in (("regret", "regret_at", "cumulative regret ($)"),
                                    ("profit", "profit_at", "average profit ($)")):
            groups = [(f"{c.policy} t={t}", values)
                      for c in cells for t, values in getattr(c, attr).items()]
            _write_svg(os.path.join(output_dir, f"box_{metric}_{tag}.svg"), svg_plot.box_chart(
                f"{label} at checkpoints, p_x={p_x:g}", label, groups), written)

        for c in cells:
            props = np.array(c.arm_props)
            layers = [(f"{arm:g}", props[:, i].tolist()) for i, arm in enumerate(summary.grid)]
            _write_svg(os.path.join(output_dir, f"arms_{c.policy}_{tag}.svg"), svg_plot.stacked_chart(
                f"Selected rates, {c.policy}, p_x={p_x:g}", rounds, layers), written)

        # Parameter trajectories of the model-based policies sharing the first one's family
        model_cells = [c for c in cells if c.param_names is not None]
        if model_cells:
            names = model_cells[0].param_names
            model_cells = [c for c in model_cells if c.param_names == names]
            panels = []
            for i, name in enumerate(names):
                series = [(c.policy, rounds, [None if th is None else th[i] for th in c.theta_mean])
                          for c in model_cells]
                panels.append((name, series))
            _write_svg(os.path.join(output_dir, f"theta_{tag}.svg"), svg_plot.panel_chart(
                f"Mean parameter estimates, p_x={p_x:g}", panels), written)


def emit_outputs(summary, records, output_dir, plots=True):
    """
    Writes runs.csv, summary.json and (optionally) the SVG plots.

    Returns:
        list[str]: paths written, in order.
    """
    if not records or not summary.cells:
        raise ValueError("No records to write")
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {output_dir}: {e}") from e

    written = []
    runs_path = os.path.join(output_dir, "runs.csv")
    RunTable.from_records(records).save_data(runs_path)
    written.append(runs_path)

    summary_path = os.path.join(output_dir, "summary.json")
    save_summary(summary.to_json_dict(), summary_path)
    written.append(summary_path)

    if plots:
        _plot_cells(summary, output_dir, written)
    logger.info(f"Wrote {len(written)} files to {output_dir}")
    return written
