"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 run the two 25x25 benchmark experiments (100 paired trials
each) through module-scoped fixtures; expect several minutes
of wall time. Run with ``pytest -s tests/test_acceptance.py`` to see the
per-criterion lines as they complete.
"""

import math
import time
from itertools import product

import numpy as np
import pytest

from rmipp.consensus import (
    MALICIOUS_CONSTANT,
    WELL_BEHAVED,
    ConsensusState,
    run_meeting_consensus,
)
from rmipp.gp_core import GpModel, Kernel, entropy, kernel_matrix, mutual_information, posterior
from rmipp.harness import (
    build_world,
    comm_field_for,
    emit_outputs,
    load_scenario,
    run_experiment,
)
from rmipp.resilience import (
    DetGraph,
    ProbGraph,
    is_rs_robust,
    prob_resilience,
    select_meeting_subarea,
)
from rmipp.world import build_grid


def _criterion(num: int, name: str, ok: bool, detail: str):
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="module")
def report_n4():
    scenario = load_scenario("scenarios/benchmark_n4.yaml")
    t0 = time.perf_counter()
    report = run_experiment(scenario, workers=2, trials=100)
    report_time = time.perf_counter() - t0
    print(f"[setup] benchmark_n4 experiment: 100 paired trials in {report_time:.0f}s")
    return scenario, report, report_time


@pytest.fixture(scope="module")
def report_n6():
    scenario = load_scenario("scenarios/benchmark_n6.yaml")
    t0 = time.perf_counter()
    report = run_experiment(scenario, workers=2, trials=100)
    report_time = time.perf_counter() - t0
    print(f"[setup] benchmark_n6 experiment: 100 paired trials in {report_time:.0f}s")
    return scenario, report, report_time


# --- criterion 1: GP posterior vs brute-force joint conditioning ------------

def _joint_condition(kernel, coords, evidence, z, targets, jitter):
    cov = kernel_matrix(kernel, coords, coords)
    kee = cov[np.ix_(evidence, evidence)] + jitter * np.eye(len(evidence))
    kte = cov[np.ix_(targets, evidence)]
    mean = kte @ np.linalg.solve(kee, np.asarray(z, float))
    post = cov[np.ix_(targets, targets)] - kte @ np.linalg.solve(kee, kte.T)
    return mean, np.diag(post).copy()


def test_criterion_1_gp_oracle_equivalence():
    rng = np.random.default_rng(20260810)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        w, h = (int(x) for x in rng.integers(2, 6, size=2))
        coords = build_grid(w, h).coords_array()
        n = coords.shape[0]
        n_ev = int(rng.integers(1, n))
        ev = sorted(int(i) for i in rng.choice(n, size=n_ev, replace=False))
        z = rng.normal(size=n_ev) * float(rng.uniform(0.5, 2.0))
        kernel = Kernel(float(rng.uniform(0.3, 2.5)), float(rng.uniform(0.6, 4.0)))
        gp = GpModel(kernel, coords, tuple(ev), z)
        targets = list(range(n))
        mean, var = posterior(gp, targets)
        om, ov = _joint_condition(kernel, coords, ev, z, targets, gp.jitter)
        worst = max(worst, float(np.abs(mean - om).max()), float(np.abs(var - ov).max()))
    elapsed = time.perf_counter() - t0
    _criterion(1, "gp-oracle-equivalence", worst < 1e-8 and elapsed < 5.0,
               f"max |delta| = {worst:.2e} over 200 instances in {elapsed:.2f}s")


# --- criterion 2: mutual information consistency -----------------------------

def test_criterion_2_mi_consistency():
    rng = np.random.default_rng(2)
    coords = build_grid(4, 4).coords_array()
    worst = 0.0
    for _ in range(100):
        kernel = Kernel(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.8, 2.5)))
        gp = GpModel(kernel, coords)
        k = int(rng.integers(1, 15))
        placed = [int(i) for i in rng.choice(16, size=k, replace=False)]
        rest = [i for i in range(16) if i not in placed]
        sym = entropy(gp, placed) + entropy(gp, rest) - entropy(gp, list(range(16)))
        worst = max(worst, abs(mutual_information(gp, placed) - sym))
    gp = GpModel(Kernel(1.0, 1.0), coords)
    exact_zero = mutual_information(gp, []) == 0.0 and \
        mutual_information(gp, range(16)) == 0.0
    _criterion(2, "mi-consistency", worst < 1e-6 and exact_zero,
               f"max |eq4 - symmetric| = {worst:.2e}; MI(empty)=MI(all)=0 {exact_zero}")


# --- criterion 3: robustness checker vs independent brute force --------------

def _oracle_all_rs(adj, n, rs_list):
    ok = {rs: True for rs in rs_list}
    for assign in product((0, 1, 2), repeat=n):
        s1 = [i for i in range(n) if assign[i] == 1]
        s2 = [i for i in range(n) if assign[i] == 2]
        if not s1 or not s2:
            continue
        cnt1 = [sum(1 for j in range(n) if adj[j][i] and assign[j] != 1) for i in s1]
        cnt2 = [sum(1 for j in range(n) if adj[j][i] and assign[j] != 2) for i in s2]
        for r, s in rs_list:
            if not ok[(r, s)]:
                continue
            x1 = sum(c >= r for c in cnt1)
            x2 = sum(c >= r for c in cnt2)
            if x1 == len(s1) or x2 == len(s2) or x1 + x2 >= s:
                continue
            ok[(r, s)] = False
        if not any(ok.values()):
            break
    return ok


def test_criterion_3_robustness_checker():
    rng = np.random.default_rng(3)
    disagreements = 0
    checked = 0
    for _ in range(500):
        n = int(rng.integers(2, 7))
        adj = rng.random((n, n)) < float(rng.uniform(0.15, 0.95))
        np.fill_diagonal(adj, False)
        rs_list = [(r, s) for r in (1, 2, 3) for s in (1, 2, 3) if s <= n]
        oracle = _oracle_all_rs(adj.tolist(), n, rs_list)
        g = DetGraph(n, adj)
        for rs in rs_list:
            checked += 1
            if is_rs_robust(g, *rs) != oracle[rs]:
                disagreements += 1
    k3 = is_rs_robust(DetGraph(3, np.ones((3, 3), bool) ^ np.eye(3, dtype=bool)), 1, 1)
    k4 = is_rs_robust(DetGraph(4, np.ones((4, 4), bool) ^ np.eye(4, dtype=bool)), 2, 2)
    _criterion(3, "robustness-checker", disagreements == 0 and k3 and k4,
               f"{disagreements} disagreements over {checked} checks on 500 digraphs; "
               f"K3 (1,1)={k3}, K4 (2,2)={k4}")


# --- criterion 4: probability of resilience ----------------------------------

def test_criterion_4_prob_resilience():
    closed_ok = True
    worst_closed = 0.0
    for p in (0.1, 0.5, 0.9):
        pg = ProbGraph(2, (0, 1), np.array([[1.0, p], [p, 1.0]]))
        diff = abs(prob_resilience(pg, 1, 1, method="exact").value - (1 - (1 - p) ** 2))
        worst_closed = max(worst_closed, diff)
        closed_ok &= diff < 1e-12

    rng = np.random.default_rng(4)
    worst_z = 0.0
    for i in range(50):
        probs = rng.uniform(0.05, 0.95, size=(4, 4))
        pg = ProbGraph(4, (0, 1, 2, 3), probs)
        exact = prob_resilience(pg, 2, 2, method="exact").value
        mc = prob_resilience(pg, 2, 2, method="monte_carlo", samples=100_000,
                             rng=np.random.default_rng(1000 + i))
        se = max(mc.std_error, 1e-4)
        worst_z = max(worst_z, abs(exact - mc.value) / se)
    _criterion(4, "prob-resilience", closed_ok and worst_z < 3.0,
               f"closed-form |delta| <= {worst_closed:.1e}; "
               f"worst exact-vs-MC z = {worst_z:.2f} over 50 graphs")


# --- criterion 5: W-MSR validity and convergence ------------------------------

def test_criterion_5_wmsr_validity_and_convergence():
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(3, 8))
        F = int(rng.integers(0, 3))
        n_mal = int(rng.integers(0, min(F, n - 1) + 1))
        behaviors = [WELL_BEHAVED] * n
        for i in rng.choice(n, size=n_mal, replace=False):
            behaviors[int(i)] = MALICIOUS_CONSTANT
        vals = rng.normal(size=(n, 1)) * 3
        good = [i for i in range(n) if behaviors[i] == WELL_BEHAVED]
        lo, hi = vals[good].min() - 1e-9, vals[good].max() + 1e-9
        pg = ProbGraph(n, tuple(range(n)), rng.uniform(0.1, 1.0, size=(n, n)))
        state = ConsensusState(vals, tuple(behaviors), F)
        for _ in range(12):
            state, _ = run_meeting_consensus(state, pg, "wmsr", 1e-300, 1, rng)
            if state.values[good].min() < lo or state.values[good].max() > hi:
                violations += 1
                break

    conv_fail = 0
    for F in (1, 2):
        n = 4 if F == 1 else 6
        for rep in range(15):
            gen = np.random.default_rng(100 * F + rep)
            adj = None
            for _ in range(300):
                cand = gen.random((n, n)) < gen.uniform(0.65, 0.95)
                np.fill_diagonal(cand, False)
                if is_rs_robust(DetGraph(n, cand), F + 1, F + 1):
                    adj = cand
                    break
            assert adj is not None
            behaviors = [WELL_BEHAVED] * n
            behaviors[n - 1] = MALICIOUS_CONSTANT
            vals = gen.normal(size=(n, 1)) * 2
            st = ConsensusState(vals, tuple(behaviors), F)
            out, log = run_meeting_consensus(
                st, ProbGraph(n, tuple(range(n)), adj.astype(float)),
                "wmsr", 1e-6, 500, np.random.default_rng(0))
            goodm = out.well_behaved_mask()
            spread = float(out.values[goodm].max() - out.values[goodm].min())
            if not (log.converged and spread < 1e-6):
                conv_fail += 1

    # Linear consensus under the same constant attack lands on the constant.
    linear_fail = 0
    for rep in range(100):
        gen = np.random.default_rng(rep)
        n = int(gen.integers(4, 8))
        adj = np.zeros((n, n))
        for i in range(n - 1):
            for j in range(n - 1):
                if i != j:
                    adj[i, j] = 1.0
        adj[n - 1, int(gen.integers(n - 1))] = 1.0
        constant = float(gen.uniform(5, 12))
        vals = np.concatenate([gen.normal(size=(n - 1, 1)), [[constant]]])
        st = ConsensusState(vals, (WELL_BEHAVED,) * (n - 1) + (MALICIOUS_CONSTANT,), 0)
        out, _ = run_meeting_consensus(
            st, ProbGraph(n, tuple(range(n)), adj), "linear", 1e-9, 2000,
            np.random.default_rng(0))
        goodm = out.well_behaved_mask()
        if np.abs(out.values[goodm] - constant).max() > 1e-6:
            linear_fail += 1

    ok = violations == 0 and conv_fail == 0 and linear_fail == 0
    _criterion(5, "wmsr-validity-convergence", ok,
               f"hull violations {violations}/1000; static convergence failures "
               f"{conv_fail}/30; linear-to-constant failures {linear_fail}/100")


# --- criterion 6: table 1 qualitative reproduction ----------------------------

def _table1_checks(report):
    both = [m for m in report.metrics if m.valid and m.wmsr and m.linear]
    dy = np.array([m.linear.err_y - m.wmsr.err_y for m in both])
    se = dy.std(ddof=1) / math.sqrt(dy.size)
    t_stat = dy.mean() / se
    sk_w = np.mean([m.wmsr.err_sk for m in both])
    sk_l = np.mean([m.linear.err_sk for m in both])
    ratio = sk_l / sk_w
    return len(both), t_stat, ratio, float(np.mean([m.wmsr.err_y for m in both])), \
        float(np.mean([m.linear.err_y for m in both]))


def test_criterion_6_table1_reproduction(report_n4, report_n6):
    _, rep4, time4 = report_n4
    _, rep6, time6 = report_n6
    n4, t4, ratio4, y4w, y4l = _table1_checks(rep4)
    n6, t6, ratio6, y6w, y6l = _table1_checks(rep6)
    ok = (n4 >= 90 and n6 >= 90 and t4 > 3.0 and t6 > 3.0
          and ratio4 >= 3.0 and ratio6 >= 3.0)
    _criterion(
        6, "table1-qualitative", ok,
        f"n=4: {n4} trials, err_y {y4w:.3f}R vs {y4l:.3f}NR (t={t4:.1f}), "
        f"err_sk ratio {ratio4:.1f}x; "
        f"n=6: {n6} trials, err_y {y6w:.3f}R vs {y6l:.3f}NR (t={t6:.1f}), "
        f"err_sk ratio {ratio6:.1f}x; runtime {time4 + time6:.0f}s "
        f"(target < 1200s)",
    )


# --- criterion 7: table 2 qualitative reproduction ----------------------------

def test_criterion_7_table2_reproduction(report_n4):
    scenario, report, _ = report_n4
    valid = [m for m in report.metrics if m.valid and math.isfinite(m.p_r_star)]
    d_pr = np.array([m.p_r_star - m.p_r_rand for m in valid])
    d_rounds = np.array([m.rounds_rand - m.rounds_star for m in valid])
    t_pr = d_pr.mean() / (d_pr.std(ddof=1) / math.sqrt(d_pr.size))
    t_rounds = d_rounds.mean() / (d_rounds.std(ddof=1) / math.sqrt(d_rounds.size))

    # Monotonicity in team size at fixed (2,2) on the fixed field.
    world = build_world(scenario)
    field = comm_field_for(scenario, world)
    means = {}
    for n in (4, 6):
        prs = []
        for rep in range(6):
            rng = np.random.default_rng([rep, n])
            for ai in range(scenario.m_areas - 1):
                sel = select_meeting_subarea(world.subareas[ai], field, n, 2, 2,
                                             placements=10, rng=rng, pr_samples=2000)
                prs.append(sel.mean_pr)
        means[n] = float(np.mean(prs))
    ok = t_pr > 3.0 and t_rounds > 3.0 and means[6] > means[4]
    _criterion(
        7, "table2-qualitative", ok,
        f"P_r sb*={np.mean([m.p_r_star for m in valid]):.3f} vs "
        f"sb^r={np.mean([m.p_r_rand for m in valid]):.3f} (t={t_pr:.1f}); "
        f"rounds sb*={np.mean([m.rounds_star for m in valid]):.2f} vs "
        f"sb^r={np.mean([m.rounds_rand for m in valid]):.2f} (t={t_rounds:.1f}); "
        f"P_r(sb*) n=4 {means[4]:.3f} -> n=6 {means[6]:.3f}",
    )


# --- criterion 8: determinism across worker counts -----------------------------

DETERMINISM_SCENARIO = """
grid: {width: 10, height: 8, base_cost: 1.0}
areas: {m: 2, f: 3}
team: {n: 3, n_a: 1, F: 1}
budget: {gamma: 140.0, alpha: 2.0}
kernel:
  true_ranges: {s: [0.5, 2.0], l: [1.0, 3.0]}
comm_field: {model: distance-decay, rho: 5.0, p_max: 0.75, seed: 3}
attack: {epsilon: [-3.0, 3.0]}
consensus: {mode: both, eps: 1.0e-4, max_rounds: 50}
meeting: {placements: 3, pr_samples: 300}
mission: {initial_evidence: 4}
trials: 6
master_seed: 424242
"""


def test_criterion_8_determinism(tmp_path):
    path = tmp_path / "det.yaml"
    path.write_text(DETERMINISM_SCENARIO)
    scenario = load_scenario(path)
    dirs = []
    for workers in (1, 3):
        report = run_experiment(scenario, workers=workers)
        out = tmp_path / f"w{workers}"
        emit_outputs(report, "csv", out)
        emit_outputs(report, "json", out)
        dirs.append(out)
    mismatched = []
    names = sorted(p.name for p in dirs[0].iterdir() if p.is_file())
    names += sorted("fields/" + p.name for p in (dirs[0] / "fields").iterdir())
    for name in names:
        if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
            mismatched.append(name)
    _criterion(8, "determinism", not mismatched,
               f"{len(names)} output files byte-compared across workers 1 vs 3; "
               f"mismatches: {mismatched or 'none'}")
