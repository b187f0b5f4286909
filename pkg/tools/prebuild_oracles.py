"""Reference numbers frozen into the test-suite.

Every value here comes from a brute-force path (extended-precision scaling,
the transportation simplex, plain-numpy Sinkhorn, explicit loops) rather
than from the log-domain solver under test. Run with ``python3 tools/prebuild_oracles.py``.
"""

import itertools
import json
import math

import numpy as np

from entmonge.instances import certify_potential, make_section62, make_two_boxes
from entmonge.measures import DiscreteMeasure, discretize_1d, discretize_box
from entmonge.oracles import lp_ot, tiny_eot, tiny_eot_objective


def ray_atoms(profile, h):
    m = discretize_1d(profile, h)
    return m.points[:, 0], m.weights


def plain_scaling(a, b, K, iters=20000):
    # primal matrix scaling; fine at eps = 1 with a bounded kernel
    x = np.ones_like(a)
    for _ in range(iters):
        y = b / (K.T @ x)
        x = a / (K @ y)
    return x[:, None] * K * y[None, :]


def moments_loop(lam_pts, lam_w, s, t, kappa, d):
    """Dictionary moments of lambda (x) kappa by explicit summation."""
    vals = {}
    for q in range(len(lam_w)):
        z_t = lam_pts[q]
        for i in range(len(s)):
            for j in range(len(t)):
                w = lam_w[q] * kappa[i, j]
                if w == 0:
                    continue
                x = np.concatenate([[s[i]], z_t])
                y = np.concatenate([[t[j]], z_t])
                z = np.concatenate([x, y])
                feats = [1.0] + list(z)
                for p in range(2 * d):
                    for r in range(p, 2 * d):
                        feats.append(z[p] * z[r])
                feats.append(float(np.linalg.norm(x - y)))
                for k, f in enumerate(feats):
                    vals[k] = vals.get(k, 0.0) + w * f
    return np.array([vals[k] for k in sorted(vals)])


def main():
    out = {}
    # unconstrained section62 ray at h = 0.5: 6x6, exact enough in long double
    inst = make_section62(2)
    s, a = ray_atoms(inst.f1, 0.5)
    t, b = ray_atoms(inst.g1, 0.5)
    C = -0.5 * np.log(np.abs(s[:, None] - t[None, :]))
    mu = DiscreteMeasure(s, a)
    nu = DiscreteMeasure(t, b)
    P = tiny_eot(mu, nu, C, 1.0).todense()
    back = s[:, None] >= t[None, :]
    m0 = float(P[back].sum())
    delta0 = float(np.sum(P * np.abs(s[:, None] - t[None, :]))) - 4.0
    out["ray_h05_nonmonotone_mass"] = m0
    out["ray_h05_cost_excess"] = delta0
    out["m_star"] = m0 / 2
    out["delta_star"] = delta0 / 2

    # 2x2 unconstrained example
    mu2 = DiscreteMeasure([1.0, 5.5], [2 / 3, 1 / 3])
    nu2 = DiscreteMeasure([3.5, 8.0], [1 / 3, 2 / 3])
    C2 = -0.5 * np.log(np.abs(np.subtract.outer([1.0, 5.5], [3.5, 8.0])))
    out["ray_2x2_unconstrained"] = tiny_eot(mu2, nu2, C2, 1.0).todense().tolist()

    # d*: gamma' vs gamma_0 on two_boxes(2,3) at h = 1/32
    tb = make_two_boxes(2, 3.0)
    h = 1 / 32
    s, a = ray_atoms(tb.f1, h)
    t, b = ray_atoms(tb.g1, h)
    K = np.abs(t[None, :] - s[:, None]) ** 0.5 * a[:, None] * b[None, :]
    kappa = plain_scaling(a, b, K)
    lam = discretize_box(tb.rho, h)
    m_monge = moments_loop(lam.points, lam.weights, s, t, kappa, 2)
    m_prod = moments_loop(lam.points, lam.weights, s, t, np.outer(a, b), 2)
    D = float(np.max(np.abs(m_monge - m_prod)))
    out["two_boxes_h32_witness"] = D
    out["d_star"] = D / 2
    # H(gamma') relative to mu x nu on the tensor grid
    out["two_boxes_h32_H_product_plan"] = float(-np.sum(lam.weights * np.log(lam.weights)))

    # duality gaps
    out["certify_two_boxes_h05"] = certify_potential(tb, 0.5)
    for nm, ins in (("two_boxes", tb), ("section62", inst)):
        for hh in (0.5, 0.25, 0.125):
            out[f"certify_{nm}_h{hh}"] = certify_potential(ins, hh)

    # exhaustive vertex enumeration vs the simplex, 5x5 integer costs
    rng = np.random.default_rng(5)
    Cint = rng.integers(0, 10, size=(5, 5)).astype(float)
    w = np.full(5, 0.2)
    best = min(sum(Cint[i, p[i]] for i in range(5)) * 0.2 for p in itertools.permutations(range(5)))
    out["lp_5x5_seed5_enum"] = best
    out["lp_5x5_seed5_simplex"] = lp_ot(DiscreteMeasure(np.arange(5.0), w),
                                        DiscreteMeasure(np.arange(5.0) + 10, w), Cint).value

    # two-atom swap in R^2 x R^2 as measures on R^4
    out["closed_form_2x2_p_eps1"] = 0.5 * math.e / (1 + math.e)

    # epsilon^2 perturbed synthetic fit
    e = np.array([0.1, 0.2, 0.4])
    y = 0.5 * np.log(1 / e) + 1.0 + 0.01 * e
    A = np.column_stack([np.log(1 / e), np.ones(3)])
    out["fit_eps2_perturbed_b"] = float(np.linalg.lstsq(A, y, rcond=None)[0][0])

    # tiny_eot on the 2x2 symmetric example at eps = 1
    u2 = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
    pl = tiny_eot(u2, u2, np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    out["tiny_2x2_objective_eps1"] = tiny_eot_objective(pl, np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
