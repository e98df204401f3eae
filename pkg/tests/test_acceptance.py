"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line."""
import random
import time

import numpy as np
import pytest

from oracles import qp_grid_oracle, rk4_position
from roundabout_ocbf.config import ScenarioConfig
from roundabout_ocbf.experiments import PRESETS
from roundabout_ocbf.qp import hard_interval, solve_step_qp
from roundabout_ocbf.simulation import Arrival, run
from roundabout_ocbf.topology import EXITS, ORIGINS, build_topology
from roundabout_ocbf.unconstrained import beta_from_alpha, solve_unconstrained
from test_coordination import table_i, column
from test_qp import random_problem
from conftest import VERDICTS

SAFETY_TOL = 0.1  # m


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'}; {detail}"
    print("\n" + line)
    VERDICTS.append(line)
    assert ok, detail


_cache: dict = {}


def preset_runs(name: str, seed: int | None = None):
    """Reports of every variant of a preset, each run once per session."""
    key = (name, seed)
    if key not in _cache:
        out = {}
        for label, cfg in PRESETS[name].configs(seed=seed):
            start = time.perf_counter()
            rep = run(cfg, name=label, keep_log=True).report
            out[label] = (rep, time.perf_counter() - start)
        _cache[key] = out
    return _cache[key]


def test_criterion_1_safety_invariance():
    lines, ok = [], True
    for name in ("sim1_symmetric", "sim2_asymmetric_policies"):
        runs = preset_runs(name)
        elapsed = sum(t for _, t in runs.values())
        ok &= elapsed < 120.0
        for label, (rep, _) in runs.items():
            s = rep.safety
            good = (rep.n_cavs >= 200 and rep.dt == 0.1
                    and s["max_rear_end_violation"] <= SAFETY_TOL
                    and s["max_merge_violation"] <= SAFETY_TOL and s["merge_checks"] > 0)
            ok &= good
            lines.append(f"{name}/{label}: {rep.n_cavs} CAVs, worst rear-end "
                         f"{s['max_rear_end_violation']:.3f} m over {s['rear_end_checks']} checks, "
                         f"worst merge {s['max_merge_violation']:.3f} m over {s['merge_checks']} "
                         f"crossings")
        lines.append(f"{name} took {elapsed:.1f} s")
    verdict(1, "safety invariance", ok, "; ".join(lines))


def test_criterion_2_unconstrained_solver():
    rng = np.random.default_rng(2024)
    worst_res, worst_x, monotone_fail = 0.0, 0.0, 0
    for _ in range(1000):
        v0, xf, alpha = rng.uniform(5, 15), rng.uniform(60, 300), rng.uniform(0.05, 0.5)
        beta = beta_from_alpha(alpha, 5.0, -5.0)
        p = solve_unconstrained(0.0, v0, xf, beta)
        worst_res = max(worst_res, float(np.linalg.norm(p.residuals())))
        x_end, _ = rk4_position(lambda t: p.a * t + p.b, v0, p.tf, n=200)
        worst_x = max(worst_x, abs(x_end - xf))
        tfs = [solve_unconstrained(0.0, v0, xf, b).tf for b in np.linspace(0.5, 2.0, 10) * beta]
        monotone_fail += any(b >= a for a, b in zip(tfs, tfs[1:]))
    ok = worst_res <= 1e-9 and worst_x <= 1e-6 and monotone_fail == 0
    verdict(2, "unconstrained solver", ok,
            f"max residual {worst_res:.2e}, max |x(tf) - xf| {worst_x:.2e} m, "
            f"{monotone_fail} instances with tf not decreasing in beta")


def test_criterion_3_qp_oracle():
    rng = random.Random(7)
    worst_gap, worst_row, mismatched, feasible = 0.0, 0.0, 0, 0
    for _ in range(10_000):
        problem = random_problem(rng)
        sol = solve_step_qp(problem)
        lo, hi, hard_ok = hard_interval(problem.rows)
        ref = qp_grid_oracle(problem)
        if not (hard_ok and lo <= hi):
            mismatched += sol.feasible or ref is not None
            continue
        if not sol.feasible or ref is None:
            mismatched += 1
            continue
        feasible += 1
        worst_gap = max(worst_gap, abs(sol.objective - ref[2]))
        worst_row = max([worst_row] + [-r.slack(sol.u, sol.e) for r in problem.rows if r.hard])
    ok = worst_gap <= 1e-4 and worst_row <= 1e-8 and mismatched == 0
    verdict(3, "QP oracle equivalence", ok,
            f"{feasible} feasible instances, max objective gap {worst_gap:.2e}, "
            f"max hard-row violation {max(worst_row, 0.0):.2e}, {mismatched} feasibility mismatches")


def test_criterion_4_coordination_tables():
    coord = table_i()
    snap = coord.snapshot()
    ip_ok = column(snap, "ip") == {0: None, 1: 0, 2: None, 3: None, 4: 3, 5: None,
                                   6: None, 7: 6, 8: None, 9: 8}
    im_ok = column(snap, "im") == {0: None, 1: None, 2: None, 3: 2, 4: None, 5: 1,
                                   6: None, 7: 4, 8: 7, 9: None}
    sub = coord.subtable_snapshot("M1")
    order_ok = [r["idx"] for r in sub] == [6, 7, 8, 0, 1, 9]
    sub_ok = (column(sub, "ip") == {6: None, 7: 6, 8: None, 0: None, 1: 0, 9: 8}
              and column(sub, "im") == {6: None, 7: None, 8: 7, 0: None, 1: None, 9: None})
    ok = ip_ok and im_ok and order_ok and sub_ok
    verdict(4, "coordination table fidelity", ok,
            f"extended table ip {ip_ok}, im {im_ok} (7 -> ip 6 im 4, 5 -> im 1, 4 -> suppressed); "
            f"sub-table M1 order {order_ok}, partners {sub_ok}")


def test_criterion_5_lone_vehicle_tracking():
    # routes whose unconstrained plan stays inside the speed limits; a plan
    # that needs more than v_max is clipped by the speed barrier by design
    topo = build_topology(60, 60)
    cfg0 = ScenarioConfig()
    worst_t, worst_e, cases = 0.0, 0.0, []
    for alpha in (0.1, 0.2):
        cfg = cfg0.with_overrides(alpha=alpha)
        for o in ORIGINS:
            for e in EXITS:
                xf = topo.route_for(o, e).total_length
                plan = solve_unconstrained(0.0, cfg.entry_speed, xf, cfg.beta)
                if max(plan.exit_speed, plan.v0) > cfg.v_max:
                    continue
                cav = run(cfg, arrivals=[Arrival(0, 0.0, o, e, cfg.entry_speed)]).report.cavs[0]
                worst_t = max(worst_t, abs(cav.travel_time / plan.duration - 1))
                worst_e = max(worst_e, abs(cav.energy / plan.energy - 1))
                cases.append(f"{o}->{e}@{alpha}")
    ok = bool(cases) and worst_t <= 0.02 and worst_e <= 0.05
    verdict(5, "lone-CAV tracking", ok,
            f"{len(cases)} route/alpha cases, worst time error {100 * worst_t:.2f}%, "
            f"worst energy error {100 * worst_e:.2f}%")


def test_criterion_6_table_band():
    runs = preset_runs("sim1_symmetric")
    low, high = runs["alpha_0.1"][0].overall, runs["alpha_0.2"][0].overall
    t1_ok = abs(low["travel_time"] / 13.71 - 1) <= 0.20
    e1_ok = abs(low["energy"] / 16.07 - 1) <= 0.30
    t2_ok = abs(high["travel_time"] / 13.38 - 1) <= 0.20
    dir_ok = high["travel_time"] < low["travel_time"] and high["energy"] > low["energy"]
    ok = t1_ok and e1_ok and t2_ok and dir_ok
    verdict(6, "symmetric-roundabout band", ok,
            f"alpha 0.1: time {low['travel_time']:.2f} s (13.71 +-20%), energy "
            f"{low['energy']:.2f} (16.07 +-30%); alpha 0.2: time {high['travel_time']:.2f} s "
            f"(13.38 +-20%), energy {high['energy']:.2f}; directions hold {dir_ok}")


def test_criterion_7_policy_ordering():
    seeds = (0, 1, 2)
    parts, ordered, band = [], True, True
    for seed in seeds:
        runs = preset_runs("sim2_asymmetric_policies", None if seed == 0 else seed)
        fifo, sdf = runs["FIFO"][0].overall["objective"], runs["SDF"][0].overall["objective"]
        ordered &= sdf < fifo
        band &= abs(sdf / 69.34 - 1) <= 0.30
        parts.append(f"seed {seed}: SDF {sdf:.2f} vs FIFO {fifo:.2f}")
    verdict(7, "policy ordering", ordered and band,
            "; ".join(parts) + f"; SDF within 69.34 +-30%: {band}")


def test_criterion_8_imbalance_robustness():
    runs = preset_runs("sim3_traffic_volume")
    bal, imb = runs["balanced"][0], runs["imbalanced"][0]
    j_bal, j_imb = bal.overall["objective"], imb.overall["objective"]
    gap = abs(j_imb / j_bal - 1)

    def spread(rep):
        values = [m["objective"] for m in rep.per_origin.values()]
        return (max(values) - min(values)) / rep.overall["objective"]

    s_bal, s_imb = spread(bal), spread(imb)
    ok = gap <= 0.10 and s_bal < 0.15 and s_imb < 0.15 and bal.n_cavs >= 500
    verdict(8, "imbalance robustness", ok,
            f"objective balanced {j_bal:.2f}, imbalanced {j_imb:.2f} ({100 * gap:.1f}% apart); "
            f"per-origin spread {100 * s_bal:.1f}% balanced, {100 * s_imb:.1f}% imbalanced")


def test_criterion_9_determinism():
    cfg = dict(PRESETS["sim2_asymmetric_policies"].configs())["SDF"]
    first = run(cfg, name="SDF", keep_log=True).report.to_json()
    second = run(cfg, name="SDF", keep_log=True).report.to_json()
    cached = preset_runs("sim2_asymmetric_policies")["SDF"][0].to_json()
    ok = first.encode() == second.encode() == cached.encode()
    verdict(9, "determinism", ok, f"three runs of the same config and seed, "
            f"{len(first)} byte reports identical: {ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
