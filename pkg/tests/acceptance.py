"""Acceptance checks, one function per criterion.

Each ``criterion_N`` returns ``(passed, values, detail)``; ``values`` holds
the computed numbers only, so it can be dumped and compared across runs.
Run as a script to print one pass/fail line per criterion, or with
``--dump`` to write the values of criteria 1-9 as JSON to stdout.
"""

from __future__ import annotations

import json
import math
import sys
import time

import numpy as np

from corpus import CORPUS
from entmonge import kernels
from entmonge.experiments import (
    D_STAR,
    DELTA_STAR,
    M_STAR,
    default_schedule,
    run_ce_directional,
    run_ce_sharpness,
    run_expand,
    run_selection,
    s_star,
)
from entmonge.functionals import density_entropy, s_functional
from entmonge.instances import certify_potential, dual_ot_value, make_section62, make_two_boxes
from entmonge.measures import DiscreteMeasure, GridSpec, Plan, fmt, rel_entropy
from entmonge.oracles import tiny_eot, tiny_eot_objective
from entmonge.rayeot import (
    disintegrate,
    extract_factorization,
    product_ray_solution,
    ray_cost,
    ray_objective,
    ray_solution_from_kappa,
    solve_ray,
    solve_ray_warm,
)
from entmonge.sinkhorn import SinkhornConfig, round_to_marginals, solve

RUNTIME = {1: 30, 2: 10, 3: 20, 4: 30, 5: 60, 6: 600, 7: 600, 8: 300, 9: 5}
LINES: dict[int, str] = {}
INSTANCES = {"section62": lambda: make_section62(2), "two_boxes": lambda: make_two_boxes(2, 3.0)}


def threads() -> int:
    return kernels.default_threads()


def criterion_1():
    vals, ok = {}, True
    for name, make in INSTANCES.items():
        inst = make()
        ot = dual_ot_value(inst)
        gaps = {h: certify_potential(inst, h) for h in (0.5, 0.25, 0.125)}
        vals[name] = {"ot": ot, "gaps": [gaps[h] for h in (0.5, 0.25, 0.125)]}
        ok &= gaps[0.25] <= 0.06
        ok &= all(gaps[h / 2] <= 0.75 * gaps[h] + 1e-9 for h in (0.5, 0.25))
    ok &= vals["two_boxes"]["ot"] == 3.0 and vals["section62"]["ot"] == 4.0
    return ok, vals, f"OT = {vals['two_boxes']['ot']}, {vals['section62']['ot']}; gaps {vals['two_boxes']['gaps']}, {vals['section62']['gaps']}"


def criterion_2():
    obj_err, plan_err = 0.0, 0.0
    for mu, nu, C, eps in CORPUS:
        res = solve(mu, nu, C, SinkhornConfig(eps=eps), threads=threads())
        ref = tiny_eot(mu, nu, C, eps)
        obj_err = max(obj_err, abs(res.objective - tiny_eot_objective(ref, C, eps)))
        plan_err = max(plan_err, float(np.abs(res.plan.todense() - ref.todense()).max()))
    u2 = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
    c2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    closed_err = 0.0
    for eps in (0.5, 1.0, 2.0):
        p = 0.5 * math.exp(1 / eps) / (1 + math.exp(1 / eps))
        P = solve(u2, u2, c2, SinkhornConfig(eps=eps), threads=threads()).plan.todense()
        closed_err = max(closed_err, float(np.abs(P - [[p, 0.5 - p], [0.5 - p, p]]).max()))
    ok = obj_err <= 1e-8 and plan_err <= 1e-7 and closed_err <= 1e-8
    vals = {"objective_err": obj_err, "plan_err": plan_err, "closed_form_err": closed_err}
    return ok, vals, f"max |obj| err {obj_err:.2e}, max entry err {plan_err:.2e}, 2x2 err {closed_err:.2e}"


def criterion_3():
    inst = make_section62(2)
    h = 0.125
    fam = disintegrate(inst, GridSpec(h, 0.5))
    cold = solve_ray(fam, h, inst.d, constrained=True, threads=threads(), use_cache=False)
    warm = solve_ray_warm(fam, h, inst.d, constrained=True, threads=threads(), use_cache=False)
    fac = extract_factorization(cold)
    diff = float(np.abs(cold.kappa.todense() - warm.kappa.todense()).max())
    vals = {
        "violation": cold.monotone_mass_violation,
        "factorization_residual": fac.max_residual,
        "cyclic_residual": fac.max_cyclic_residual,
        "cold_warm_diff": diff,
        "objective": cold.objective,
    }
    ok = (cold.monotone_mass_violation == 0.0 and fac.max_residual <= 1e-6
          and fac.max_cyclic_residual <= 1e-6 and diff <= 1e-8)
    return ok, vals, (f"violation {cold.monotone_mass_violation}, factorization {fac.max_residual:.1e}, "
                      f"cyclic {fac.max_cyclic_residual:.1e}, cold/warm {diff:.1e}")


def criterion_4():
    rep = run_ce_directional(make_section62(2), h=0.125, threads=threads())
    unc, con = rep["unconstrained"], rep["constrained"]
    ok = (unc["nonmonotone_mass"] >= M_STAR and unc["cost_excess"] >= DELTA_STAR
          and con["cost_excess"] <= 0.05)
    vals = {"unconstrained": unc, "constrained": con}
    return ok, vals, (f"unconstrained mass {unc['nonmonotone_mass']:.4f} (m* {M_STAR:.4f}), "
                      f"excess {unc['cost_excess']:.4f} (delta* {DELTA_STAR:.4f}); "
                      f"constrained excess {con['cost_excess']:.2e}")


def _random_monotone_coupling(rng, sol):
    K = sol.kappa.todense() * np.exp(rng.normal(scale=0.5, size=sol.kappa.shape))
    a, b = sol.source_atoms.weights, sol.target_atoms.weights
    for _ in range(50):
        K *= (a / K.sum(axis=1))[:, None]
        K *= (b / K.sum(axis=0))[None, :]
    finite = np.isfinite(ray_cost(sol.source_atoms, sol.target_atoms, sol.d, True))
    K, _, _ = round_to_marginals(K, a, b, finite)
    return K


def criterion_5():
    h = 0.125
    vals, ok = {}, True
    for name, make in INSTANCES.items():
        inst = make()
        fam = disintegrate(inst, GridSpec(h, 0.5))
        sol = solve_ray(fam, h, inst.d, constrained=True, threads=threads())
        s0 = s_functional(inst, sol).total
        sp = s_functional(inst, product_ray_solution(fam, h)).total
        rng = np.random.default_rng(2024)
        beat = -math.inf
        for _ in range(50):
            alt = ray_solution_from_kappa(sol.source_atoms, sol.target_atoms,
                                          _random_monotone_coupling(rng, sol), inst.d, h)
            assert alt.monotone_mass_violation == 0.0
            beat = max(beat, sol.objective - alt.objective)
        vals[name] = {"S_monge": s0, "S_product": sp, "gap": sp - s0, "max_improvement": beat}
        ok &= sp - s0 >= 1e-4 and beat <= 1e-8
    detail = "; ".join(f"{k}: S(g0) {v['S_monge']:.6f} vs S(g0') {v['S_product']:.6f} (gap {v['gap']:.2e}, need >= 1e-04), "
                       f"best random improvement {v['max_improvement']:.1e}" for k, v in vals.items())
    return ok, vals, detail


def criterion_6():
    inst = make_two_boxes(2, 3.0)
    eps = [0.4, 0.3, 0.2, 0.15, 0.1]
    sstar = s_star(inst)
    fits = {}
    for n in (48, 64):
        res = run_expand(inst, GridSpec(1 / n, 1 / n), eps, threads(), s_star_h=None)
        fits[n] = {"b": res.fit.b, "c": res.fit.c, "eot": [p.eot for p in res.points]}
    b, c = fits[48]["b"], fits[48]["c"]
    rel_c = abs(c - sstar) / abs(sstar)
    closer = abs(fits[64]["b"] - 0.5) < abs(b - 0.5)
    ok = 0.35 <= b <= 0.65 and rel_c <= 0.30 and closer
    vals = {"S_star": sstar, "fit48": fits[48], "fit64": fits[64]}
    return ok, vals, (f"48x48: b {b:.4f}, c {c:.4f}, S* {sstar:.4f}, |c-S*|/|S*| {rel_c:.3f}; "
                      f"64x64: b {fits[64]['b']:.4f} ({'closer' if closer else 'not closer'} to 0.5)")


def criterion_7():
    rows = run_selection(make_two_boxes(2, 3.0), default_schedule([0.4, 0.2, 0.1]), threads())
    disc = [r.discrepancy for r in rows]
    ok = all(b < a for a, b in zip(disc, disc[1:]))
    vals = {"eps": [r.eps for r in rows], "discrepancy": disc, "w1": [r.w1 for r in rows]}
    return ok, vals, "discrepancies " + ", ".join(f"{x:.5f}" for x in disc)


def criterion_8():
    rep = run_ce_sharpness(make_two_boxes(2, 3.0), 1 / 32, [0.05, 0.1, 0.2], threads())
    ok = rep["max_rel_residual"] <= 0.10 and rep["witness_discrepancy"] >= D_STAR
    vals = {k: rep[k] for k in ("gap", "K", "max_rel_residual", "witness_discrepancy")}
    return ok, vals, (f"K {rep['K']:.4f}, max relative residual {rep['max_rel_residual']:.4f}, "
                      f"D {rep['witness_discrepancy']:.3e} (d* {D_STAR:.3e})")


def criterion_9():
    ok = True
    vals = {}
    for name, make in INSTANCES.items():
        inst = make()
        fam = disintegrate(inst, GridSpec(0.125, 0.5))
        sol = solve_ray(fam, 0.125, inst.d, threads=threads())
        br = s_functional(inst, sol)
        composed = br.ray_term - 0.5 * br.f_entropy - 0.5 * br.g_entropy + 0.5 * br.f_tilde_term + 0.5 * br.g_tilde_term
        ok &= composed == br.total
        ok &= br.f_tilde_term == density_entropy(inst.f1) and br.g_tilde_term == density_entropy(inst.g1)
        vals[name] = br.to_dict()
    offsets = []
    for d in (2, 3, 5):
        inst = make_section62(d)
        fam = disintegrate(inst, GridSpec(0.25, 1.0))
        sol = solve_ray(fam, 0.25, d, threads=threads())
        off = ray_objective(sol.kappa, d) - ray_objective(sol.kappa, d, two_pi=True)
        offsets.append(abs(off - (d - 1) / 2 * math.log(2 * math.pi)))
    ok &= max(offsets) <= 1e-12
    mu = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
    ent = [
        rel_entropy(Plan(mu, mu, [[0.5, 0.0], [0.0, 0.5]])),
        rel_entropy(Plan(mu, mu, [[0.25, 0.25], [0.25, 0.25]])),
        rel_entropy(Plan(DiscreteMeasure([0.0, 1.0], [0.0, 1.0]), DiscreteMeasure([0.0], [1.0]), [[0.0], [1.0]])),
    ]
    ok &= ent[0] == math.log(2) and ent[1] == 0.0 and ent[2] == 0.0
    vals.update({"offset_err": offsets, "entropies": ent})
    return ok, vals, f"composition exact, 2pi offset err {max(offsets):.1e}, boundary entropies {ent}"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 10)}


def run(i):
    t0 = time.perf_counter()
    ok, vals, detail = CRITERIA[i]()
    wall = time.perf_counter() - t0
    return bool(ok), vals, detail, wall


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def dump(results) -> str:
    """Canonical JSON of the computed values (no timings)."""
    return json.dumps({str(i): _clean(r[1]) for i, r in sorted(results.items())}, sort_keys=True, indent=1)


def line(i, ok, detail, wall=None) -> str:
    tail = "" if wall is None else f" [{wall:.1f}s / {RUNTIME.get(i, '-')}s]"
    return f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  {detail}{tail}"


if __name__ == "__main__":
    results = {i: run(i) for i in CRITERIA}
    if "--dump" in sys.argv:
        sys.stdout.write(dump(results))
    else:
        for i, (ok, _, detail, wall) in results.items():
            print(line(i, ok and wall <= RUNTIME[i], detail, wall))
