"""Scenario ingestion, seeded Monte Carlo experiment runner, and outputs.

A scenario file (YAML) fully determines an experiment: grid geometry,
team/attack setup, communication field, consensus settings, trial count and
master seed. Every trial derives its own seed block from
(master_seed, trial_index), runs the resilient (W-MSR) and non-resilient
(linear) missions on identical environments, initial knowledge, attack
draws and rendezvous selections, and measures learning errors against the
ground-truth field plus resilience/retransmission statistics at the
optimized and at a uniformly random meeting subarea. Aggregates land in two
summary tables: learning errors (resilient R vs non-resilient NR) and
communication statistics (optimized sb* vs random sb^r).
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .consensus import count_retransmissions
from .gp_core import DEFAULT_FIT_BOUNDS, Kernel, posterior, sample_environment
from .mission import (
    AttackSpec,
    InfeasibleBudgetError,
    MissionConfig,
    MissionSeeds,
    execute_mission,
    plan_offline_meetings,
)
from .resilience import (
    CommDescriptor,
    CommField,
    build_prob_graph,
    prob_resilience,
    synth_comm_field,
)
from .world import GridWorld, build_grid, partition, shortest_path

SEED_ENV_VAR = "MIPP_SEED"

COMM_FIELD_NOTE = (
    "communication field is a synthetic stand-in (distance decay with "
    "optional interference zones); pairwise probabilities are treated as "
    "known a priori"
)


class ScenarioError(ValueError):
    """Scenario file missing, malformed, or failing validation."""


class OutputError(RuntimeError):
    """Could not write experiment outputs."""


@dataclass(frozen=True)
class Scenario:
    width: int
    height: int
    base_cost: float
    m_areas: int
    f_subareas: int
    n: int
    n_a: int
    F: int
    r: int
    s: int
    gamma: float | None
    alpha: float
    fit_bounds: tuple
    true_s_range: tuple[float, float]
    true_l_range: tuple[float, float]
    comm: CommDescriptor
    epsilon: tuple[float, float]
    mode: str
    consensus_eps: float
    max_rounds: int
    placements: int
    pr_samples: int
    initial_evidence: int
    # Joint-objective weights; the decoupled solver does not consume them.
    alpha1: float
    alpha2: float
    starts: tuple[int, ...] | None
    goals: tuple[int, ...] | None
    trials: int
    master_seed: int
    warnings: tuple[str, ...]


def _need(section: dict, path: str, key: str):
    if key not in section:
        raise ScenarioError(f"missing required key `{path}{key}`")
    return section[key]


def _num(section, path, key, default=None, minimum=None, integer=False):
    if key not in section:
        if default is None and not isinstance(default, (int, float)):
            raise ScenarioError(f"missing required key `{path}{key}`")
        return default
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"`{path}{key}` must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ScenarioError(f"`{path}{key}` must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ScenarioError(f"`{path}{key}` must be >= {minimum}, got {v!r}")
    return int(v) if integer else float(v)


def _pair(section, path, key, default=None):
    if key not in section:
        if default is None:
            raise ScenarioError(f"missing required key `{path}{key}`")
        return default
    v = section[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioError(f"`{path}{key}` must be a 2-element list")
    return float(v[0]), float(v[1])


def _section(raw: dict, name: str, allowed: set[str], required=False) -> dict:
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ScenarioError(f"missing required section `{name}`")
        return {}
    if not isinstance(sec, dict):
        raise ScenarioError(f"section `{name}` must be a mapping")
    for key in sec:
        if key not in allowed:
            raise ScenarioError(f"unknown key `{name}.{key}`")
    return sec


_TOP_KEYS = {
    "grid", "areas", "team", "budget", "kernel", "comm_field", "attack",
    "consensus", "meeting", "mission", "objective_weights", "starts",
    "goals", "trials", "master_seed",
}


def load_scenario(path) -> Scenario:
    """Parse and strictly validate a scenario file.

    Unknown keys are rejected with their dotted path; missing required keys
    are named. The ``MIPP_SEED`` environment variable, when set, overrides
    the file's master seed.
    """
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ScenarioError(f"unknown key `{key}`")

    warnings: list[str] = []

    grid = _section(raw, "grid", {"width", "height", "base_cost"}, required=True)
    width = _num(grid, "grid.", "width", minimum=1, integer=True)
    height = _num(grid, "grid.", "height", minimum=1, integer=True)
    base_cost = _num(grid, "grid.", "base_cost", default=1.0, minimum=1e-12)

    areas = _section(raw, "areas", {"m", "f"})
    m_areas = _num(areas, "areas.", "m", default=3, minimum=1, integer=True)
    f_subareas = _num(areas, "areas.", "f", default=10, minimum=1, integer=True)

    team = _section(raw, "team", {"n", "n_a", "F", "r", "s"}, required=True)
    n = _num(team, "team.", "n", minimum=1, integer=True)
    n_a = _num(team, "team.", "n_a", minimum=0, integer=True)
    big_f = _num(team, "team.", "F", minimum=0, integer=True)
    r = _num(team, "team.", "r", default=big_f + 1, minimum=1, integer=True)
    s = _num(team, "team.", "s", default=big_f + 1, minimum=1, integer=True)
    if n_a > n:
        raise ScenarioError(f"`team.n_a` cannot exceed `team.n` ({n_a} > {n})")
    if n_a > big_f:
        warnings.append(
            f"outside attack model: n_a={n_a} exceeds F={big_f}; "
            "W-MSR guarantees do not apply"
        )

    budget = _section(raw, "budget", {"gamma", "alpha"})
    gamma = budget.get("gamma")
    if gamma is not None:
        if not isinstance(gamma, (int, float)) or gamma <= 0:
            raise ScenarioError(f"`budget.gamma` must be positive or null, got {gamma!r}")
        gamma = float(gamma)
    alpha = _num(budget, "budget.", "alpha", default=2.0)
    if alpha <= 1:
        raise ScenarioError(f"`budget.alpha` must exceed 1, got {alpha}")

    kernel = _section(raw, "kernel", {"fit_bounds", "true_ranges"}, required=True)
    fit = kernel.get("fit_bounds", {})
    if not isinstance(fit, dict) or set(fit) - {"s", "l"}:
        raise ScenarioError("`kernel.fit_bounds` must map s/l to [lo, hi] pairs")
    fb_s = _pair(fit, "kernel.fit_bounds.", "s", default=DEFAULT_FIT_BOUNDS[0])
    fb_l = _pair(fit, "kernel.fit_bounds.", "l", default=DEFAULT_FIT_BOUNDS[1])
    true = _need(kernel, "kernel.", "true_ranges")
    if not isinstance(true, dict) or set(true) - {"s", "l"}:
        raise ScenarioError("`kernel.true_ranges` must map s/l to [lo, hi] pairs")
    tr_s = _pair(true, "kernel.true_ranges.", "s")
    tr_l = _pair(true, "kernel.true_ranges.", "l")
    for name, (lo, hi) in (("fit_bounds.s", fb_s), ("fit_bounds.l", fb_l),
                           ("true_ranges.s", tr_s), ("true_ranges.l", tr_l)):
        if lo <= 0 or lo > hi:
            raise ScenarioError(f"`kernel.{name}` must satisfy 0 < lo <= hi")

    comm = _section(raw, "comm_field",
                    {"model", "rho", "beta", "zones", "seed", "p_max"}, required=True)
    model = _need(comm, "comm_field.", "model")
    rho = _num(comm, "comm_field.", "rho", minimum=1e-9)
    beta = _num(comm, "comm_field.", "beta", default=0.5)
    p_max = _num(comm, "comm_field.", "p_max", default=1.0, minimum=1e-9)
    zones_raw = comm.get("zones", [])
    if not isinstance(zones_raw, (list, tuple)):
        raise ScenarioError("`comm_field.zones` must be a list of rectangles")
    zones = []
    for z in zones_raw:
        if not isinstance(z, (list, tuple)) or len(z) != 4:
            raise ScenarioError("`comm_field.zones` entries must be [x0, y0, x1, y1]")
        zones.append(tuple(float(v) for v in z))
    comm_seed = _num(comm, "comm_field.", "seed", default=0, integer=True)
    descriptor = CommDescriptor(str(model), rho, beta, tuple(zones), comm_seed, p_max)

    attack = _section(raw, "attack", {"epsilon"}, required=True)
    epsilon = _pair(attack, "attack.", "epsilon")
    if epsilon[0] > epsilon[1]:
        raise ScenarioError("`attack.epsilon` must satisfy lo <= hi")

    cons = _section(raw, "consensus", {"mode", "eps", "max_rounds"})
    mode = cons.get("mode", "both")
    if mode not in ("wmsr", "linear", "both"):
        raise ScenarioError(f"`consensus.mode` must be wmsr|linear|both, got {mode!r}")
    consensus_eps = _num(cons, "consensus.", "eps", default=1e-4, minimum=1e-15)
    max_rounds = _num(cons, "consensus.", "max_rounds", default=100, minimum=1,
                      integer=True)

    meeting = _section(raw, "meeting", {"placements", "pr_samples"})
    placements = _num(meeting, "meeting.", "placements", default=10, minimum=1,
                      integer=True)
    pr_samples = _num(meeting, "meeting.", "pr_samples", default=2000, minimum=1,
                      integer=True)

    mission = _section(raw, "mission", {"initial_evidence"})
    initial_evidence = _num(mission, "mission.", "initial_evidence", default=5,
                            minimum=2, integer=True)

    weights = _section(raw, "objective_weights", {"alpha1", "alpha2"})
    alpha1 = _num(weights, "objective_weights.", "alpha1", default=1.0)
    alpha2 = _num(weights, "objective_weights.", "alpha2", default=1.0)

    def _ids(key):
        v = raw.get(key)
        if v is None:
            return None
        if not isinstance(v, (list, tuple)) or len(v) != n:
            raise ScenarioError(f"`{key}` must list one location id per robot")
        ids = tuple(int(x) for x in v)
        if len(set(ids)) != n:
            raise ScenarioError(f"`{key}` ids must be distinct")
        if any(x < 0 or x >= width * height for x in ids):
            raise ScenarioError(f"`{key}` contains an id outside the grid")
        return ids

    starts = _ids("starts")
    goals = _ids("goals")

    trials = _num(raw, "", "trials", minimum=1, integer=True)
    master_seed = _num(raw, "", "master_seed", minimum=0, integer=True)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            master_seed = int(env_seed)
        except ValueError as exc:
            raise ScenarioError(f"{SEED_ENV_VAR} must be an integer") from exc
        warnings.append(f"master_seed overridden to {master_seed} by {SEED_ENV_VAR}")

    scenario = Scenario(
        width=width, height=height, base_cost=base_cost,
        m_areas=m_areas, f_subareas=f_subareas,
        n=n, n_a=n_a, F=big_f, r=r, s=s,
        gamma=gamma, alpha=alpha,
        fit_bounds=(fb_s, fb_l),
        true_s_range=tr_s, true_l_range=tr_l,
        comm=descriptor, epsilon=epsilon,
        mode=mode, consensus_eps=consensus_eps, max_rounds=max_rounds,
        placements=placements, pr_samples=pr_samples,
        initial_evidence=initial_evidence,
        alpha1=alpha1, alpha2=alpha2,
        starts=starts, goals=goals,
        trials=trials, master_seed=master_seed,
        warnings=tuple(warnings),
    )
    # Surface geometry errors at load time rather than mid-experiment.
    build_world(scenario)
    if initial_evidence > width * height:
        raise ScenarioError("`mission.initial_evidence` exceeds grid size")
    return scenario


def _auto_endpoints(scenario: Scenario, column: int) -> tuple[int, ...]:
    # Contiguous block around the column middle: robots start together and
    # rendezvous at the end of the environment within communication range.
    if scenario.n > scenario.height:
        raise ScenarioError(
            f"cannot auto-place {scenario.n} robots on a height-{scenario.height} grid"
        )
    y0 = min(max(scenario.height // 2 - scenario.n // 2, 0),
             scenario.height - scenario.n)
    return tuple((y0 + k) * scenario.width + column for k in range(scenario.n))


def build_world(scenario: Scenario) -> GridWorld:
    """Grid + partition + start/goal assignment for a scenario."""
    world = build_grid(scenario.width, scenario.height, scenario.base_cost)
    try:
        partition(world, scenario.m_areas, scenario.f_subareas)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    world.start_ids = list(scenario.starts or _auto_endpoints(scenario, 0))
    world.goal_ids = list(scenario.goals or _auto_endpoints(scenario, scenario.width - 1))
    return world


def resolve_gamma(scenario: Scenario, world: GridWorld) -> float:
    """Team budget: explicit value, or 3x the minimum total traversal cost."""
    if scenario.gamma is not None:
        return scenario.gamma
    total = sum(
        shortest_path(world, s, t).cost
        for s, t in zip(world.start_ids, world.goal_ids)
    )
    return 3.0 * total


def comm_field_for(scenario: Scenario, world: GridWorld) -> CommField:
    return synth_comm_field(world, scenario.comm)


def mission_config(scenario: Scenario, world: GridWorld, attack: AttackSpec) -> MissionConfig:
    return MissionConfig(
        width=scenario.width, height=scenario.height, base_cost=scenario.base_cost,
        m_areas=scenario.m_areas, f_subareas=scenario.f_subareas,
        n=scenario.n, F=scenario.F, r=scenario.r, s=scenario.s,
        gamma=resolve_gamma(scenario, world), alpha=scenario.alpha,
        fit_bounds=scenario.fit_bounds,
        consensus_eps=scenario.consensus_eps, max_rounds=scenario.max_rounds,
        initial_evidence_count=scenario.initial_evidence,
        placements=scenario.placements, pr_samples=scenario.pr_samples,
        start_ids=tuple(world.start_ids), goal_ids=tuple(world.goal_ids),
        attack=attack,
    )


@dataclass(frozen=True)
class LearnErrors:
    err_sk: float
    err_lk: float
    err_y: float
    consensus_rounds: float
    consensus_converged: bool


@dataclass(frozen=True, eq=False)
class TrialMetrics:
    trial_index: int
    valid: bool
    note: str
    true_s: float
    true_l: float
    wmsr: LearnErrors | None
    linear: LearnErrors | None
    p_r_star: float
    p_r_rand: float
    rounds_star: float
    rounds_rand: float
    truth_grid: np.ndarray | None
    wmsr_grid: np.ndarray | None
    linear_grid: np.ndarray | None


def _trial_seed_block(master_seed: int, trial_index: int) -> np.ndarray:
    # Counter-based split: stable across versions and worker counts.
    ss = np.random.SeedSequence([int(master_seed), int(trial_index)])
    return ss.generate_state(9, dtype=np.uint64)


def _pr_and_rounds(scenario, field, positions, rng) -> tuple[float, int]:
    pg = build_prob_graph(field, positions)
    uncertain = (pg.edge_prob[~np.eye(pg.n, dtype=bool)] < 1.0).sum()
    if uncertain <= 12:
        pr = prob_resilience(pg, scenario.r, scenario.s, method="exact").value
    else:
        pr = prob_resilience(
            pg, scenario.r, scenario.s, method="monte_carlo",
            samples=scenario.pr_samples, rng=rng,
        ).value
    rounds = count_retransmissions(pg, scenario.r, scenario.s, scenario.max_rounds, rng)
    return pr, rounds


def _learning_errors(result, env, true_kernel, height, width):
    good = [r for r in result.robots if not r.compromised]
    err_sk = float(np.mean([abs(r.fitted.signal_variance - true_kernel.signal_variance)
                            for r in good]))
    err_lk = float(np.mean([abs(r.fitted.length_scale - true_kernel.length_scale)
                            for r in good]))
    all_ids = range(height * width)
    errs = []
    grid = None
    for robot in good:
        mean, _ = posterior(result.models[robot.id], all_ids)
        errs.append(float(np.mean(np.abs(mean - env.values))))
        if grid is None:
            grid = mean.reshape(height, width)
    rounds = float(np.mean([log.rounds for log in result.round_logs]))
    converged = all(log.converged for log in result.round_logs)
    return LearnErrors(err_sk, err_lk, float(np.mean(errs)), rounds, converged), grid


def run_trial(scenario: Scenario, trial_index: int, modes=None) -> TrialMetrics:
    """One fully deterministic Monte Carlo trial.

    Runs the requested consensus modes on identical sub-seeds (environment,
    initial knowledge, attacker selection, attack noise, rendezvous
    selection) so the mode comparison is paired, then measures resilience
    and retransmission statistics at the optimized and at a uniformly
    random meeting subarea.
    """
    if modes is None:
        modes = ("wmsr", "linear") if scenario.mode == "both" else (scenario.mode,)
    state = _trial_seed_block(scenario.master_seed, trial_index)
    world = build_world(scenario)
    field = comm_field_for(scenario, world)

    rng_truth = np.random.default_rng(state[0])
    true_kernel = Kernel(
        float(rng_truth.uniform(*scenario.true_s_range)),
        float(rng_truth.uniform(*scenario.true_l_range)),
    )
    env = sample_environment(true_kernel, world, int(state[1]))

    rng_sel = np.random.default_rng(state[3])
    compromised = frozenset(
        int(i) for i in rng_sel.choice(scenario.n, size=scenario.n_a, replace=False)
    )
    attack = AttackSpec(compromised, *scenario.epsilon)
    cfg = mission_config(scenario, world, attack)
    seeds = MissionSeeds(
        evidence=int(state[2]), attack=int(state[4]),
        meetings=int(state[5]), consensus=int(state[6]),
    )

    try:
        offline = plan_offline_meetings(
            world, field, cfg, np.random.default_rng(seeds.meetings)
        )
        results = {
            mode: execute_mission(cfg, env, field, seeds, mode, offline=offline)
            for mode in modes
        }
    except InfeasibleBudgetError as exc:
        return TrialMetrics(trial_index, False, str(exc),
                            true_kernel.signal_variance, true_kernel.length_scale,
                            None, None, math.nan, math.nan, math.nan, math.nan,
                            None, None, None)

    per_mode: dict[str, LearnErrors] = {}
    grids: dict[str, np.ndarray] = {}
    for mode, result in results.items():
        per_mode[mode], grids[mode] = _learning_errors(
            result, env, true_kernel, scenario.height, scenario.width
        )

    # Resilience statistics, paired streams for the optimized vs random side.
    p_star = p_rand = rounds_star = rounds_rand = math.nan
    if world.areas and len(world.areas) > 1:
        rng_star = np.random.default_rng(state[7])
        rng_rand = np.random.default_rng(state[8])
        stars, rands, rs_star, rs_rand = [], [], [], []
        for ai, selection in enumerate(offline):
            pr, rounds = _pr_and_rounds(scenario, field, selection.positions, rng_star)
            stars.append(pr)
            rs_star.append(rounds)
            viable = [sub for sub in world.subareas[ai] if len(sub) >= scenario.n]
            sub = viable[int(rng_rand.integers(len(viable)))]
            pos = rng_rand.choice(np.asarray(sub), size=scenario.n, replace=False)
            pr, rounds = _pr_and_rounds(scenario, field, pos, rng_rand)
            rands.append(pr)
            rs_rand.append(rounds)
        p_star = float(np.mean(stars))
        p_rand = float(np.mean(rands))
        rounds_star = float(np.mean(rs_star))
        rounds_rand = float(np.mean(rs_rand))

    truth_grid = env.values.reshape(scenario.height, scenario.width)
    return TrialMetrics(
        trial_index, True, "",
        true_kernel.signal_variance, true_kernel.length_scale,
        per_mode.get("wmsr"), per_mode.get("linear"),
        p_star, p_rand, rounds_star, rounds_rand,
        truth_grid, grids.get("wmsr"), grids.get("linear"),
    )


def _trial_worker(args) -> TrialMetrics:
    scenario, index, modes = args
    return run_trial(scenario, index, modes)


def _mean_se(values) -> tuple[float, float]:
    vals = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if vals.size == 0:
        return math.nan, math.nan
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    scenario: Scenario
    modes: tuple[str, ...]
    metrics: list[TrialMetrics]
    table1: list[dict]
    table2: list[dict]
    paired: dict
    n_invalid: int
    unreliable: bool


def run_experiment(scenario: Scenario, workers: int = 1, modes=None,
                   trials: int | None = None) -> ExperimentReport:
    """Run all trials and aggregate the summary tables.

    Trials are independent and deterministic in (scenario, index), so the
    aggregate is identical for any worker count. Invalid (infeasible)
    trials are excluded from aggregates; more than 10% invalid flags the
    report unreliable.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if modes is None:
        modes = ("wmsr", "linear") if scenario.mode == "both" else (scenario.mode,)
    modes = tuple(modes)
    n_trials = int(trials if trials is not None else scenario.trials)
    jobs = [(scenario, i, modes) for i in range(n_trials)]
    if workers == 1:
        metrics = [_trial_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(_trial_worker, jobs, chunksize=1))
    metrics.sort(key=lambda m: m.trial_index)

    valid = [m for m in metrics if m.valid]
    n_invalid = len(metrics) - len(valid)

    table1 = []
    rule_names = {"wmsr": "R", "linear": "NR"}
    for mode in modes:
        errs = [getattr(m, mode) for m in valid if getattr(m, mode) is not None]
        sk = _mean_se([e.err_sk for e in errs])
        lk = _mean_se([e.err_lk for e in errs])
        ey = _mean_se([e.err_y for e in errs])
        table1.append({
            "n": scenario.n, "n_a": scenario.n_a, "rule": rule_names[mode],
            "err_sk_mean": sk[0], "err_sk_se": sk[1],
            "err_lk_mean": lk[0], "err_lk_se": lk[1],
            "err_y_mean": ey[0], "err_y_se": ey[1],
            "trials": len(errs),
        })

    table2 = []
    for label, pr_attr, rd_attr in (
        ("sb_star", "p_r_star", "rounds_star"),
        ("sb_rand", "p_r_rand", "rounds_rand"),
    ):
        pr = _mean_se([getattr(m, pr_attr) for m in valid])
        rd = _mean_se([getattr(m, rd_attr) for m in valid])
        table2.append({
            "n": scenario.n, "r": scenario.r, "s": scenario.s, "subarea": label,
            "p_r_mean": pr[0], "p_r_se": pr[1],
            "rounds_mean": rd[0], "rounds_se": rd[1],
            "trials": len(valid),
        })

    paired = {}
    both = [m for m in valid if m.wmsr is not None and m.linear is not None]
    if both:
        dy = [m.linear.err_y - m.wmsr.err_y for m in both]
        ds = [m.linear.err_sk - m.wmsr.err_sk for m in both]
        dy_m, dy_se = _mean_se(dy)
        ds_m, ds_se = _mean_se(ds)
        sk_w = float(np.mean([m.wmsr.err_sk for m in both]))
        sk_l = float(np.mean([m.linear.err_sk for m in both]))
        paired = {
            "trials": len(both),
            "err_y_diff_mean": dy_m, "err_y_diff_se": dy_se,
            "err_sk_diff_mean": ds_m, "err_sk_diff_se": ds_se,
            "err_sk_ratio": sk_l / sk_w if sk_w > 0 else math.inf,
        }

    return ExperimentReport(
        scenario=scenario, modes=modes, metrics=metrics,
        table1=table1, table2=table2, paired=paired,
        n_invalid=n_invalid,
        unreliable=n_invalid > 0.1 * len(metrics),
    )


TABLE1_COLUMNS = ["n", "n_a", "rule", "err_sk_mean", "err_sk_se",
                  "err_lk_mean", "err_lk_se", "err_y_mean", "err_y_se", "trials"]
TABLE2_COLUMNS = ["n", "r", "s", "subarea", "p_r_mean", "p_r_se",
                  "rounds_mean", "rounds_se", "trials"]
TRIAL_COLUMNS = [
    "trial_index", "valid", "note", "true_s", "true_l",
    "err_sk_wmsr", "err_lk_wmsr", "err_y_wmsr",
    "err_sk_linear", "err_lk_linear", "err_y_linear",
    "p_r_star", "p_r_rand", "rounds_star", "rounds_rand",
    "consensus_rounds_wmsr", "consensus_rounds_linear",
]


def _trial_record(m: TrialMetrics) -> dict:
    def err(e, field):
        return getattr(e, field) if e is not None else math.nan
    return {
        "trial_index": m.trial_index, "valid": m.valid, "note": m.note,
        "true_s": m.true_s, "true_l": m.true_l,
        "err_sk_wmsr": err(m.wmsr, "err_sk"),
        "err_lk_wmsr": err(m.wmsr, "err_lk"),
        "err_y_wmsr": err(m.wmsr, "err_y"),
        "err_sk_linear": err(m.linear, "err_sk"),
        "err_lk_linear": err(m.linear, "err_lk"),
        "err_y_linear": err(m.linear, "err_y"),
        "p_r_star": m.p_r_star, "p_r_rand": m.p_r_rand,
        "rounds_star": m.rounds_star, "rounds_rand": m.rounds_rand,
        "consensus_rounds_wmsr": err(m.wmsr, "consensus_rounds"),
        "consensus_rounds_linear": err(m.linear, "consensus_rounds"),
    }


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _jsonable(float(value))
    return value


def _write_csv(path: Path, columns, rows):
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def _write_json(path: Path, columns, rows):
    payload = [{k: _jsonable(row[k]) for k in columns} for row in rows]
    path.write_text(json.dumps(payload, indent=2) + "\n")


def emit_outputs(report: ExperimentReport, fmt: str = "csv", out_dir="out") -> dict:
    """Write tables, per-trial records, metadata, and sampled field grids.

    ``fmt`` picks csv or json for the tabular files; field grids are plain
    row-major numeric matrices (one file per grid) for external plotting.
    Returns the written paths keyed by artifact name.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    out = Path(out_dir)
    written = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        writer = _write_csv if fmt == "csv" else _write_json
        ext = fmt
        for name, cols, rows in (
            ("table1", TABLE1_COLUMNS, report.table1),
            ("table2", TABLE2_COLUMNS, report.table2),
            ("trials", TRIAL_COLUMNS, [_trial_record(m) for m in report.metrics]),
        ):
            path = out / f"{name}.{ext}"
            writer(path, cols, rows)
            written[name] = path

        meta = {
            "modes": list(report.modes),
            "trials": len(report.metrics),
            "invalid_trials": report.n_invalid,
            "unreliable": report.unreliable,
            "paired": {k: _jsonable(v) for k, v in report.paired.items()},
            "scenario_warnings": list(report.scenario.warnings),
            "master_seed": report.scenario.master_seed,
            "notes": [COMM_FIELD_NOTE],
        }
        meta_path = out / "meta.json"
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
        written["meta"] = meta_path

        fields_dir = out / "fields"
        fields_dir.mkdir(exist_ok=True)
        sampled = [m for m in report.metrics if m.valid][:3]
        for m in sampled:
            for tag, grid in (("truth", m.truth_grid), ("wmsr", m.wmsr_grid),
                              ("linear", m.linear_grid)):
                if grid is None:
                    continue
                path = fields_dir / f"trial_{m.trial_index:04d}_{tag}.txt"
                np.savetxt(path, grid, fmt="%.10g")
                written[f"field_{m.trial_index}_{tag}"] = path
    except OSError as exc:
        raise OutputError(f"failed writing outputs under {out}: {exc}") from exc
    return written
