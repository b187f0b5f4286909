import json
import math

import numpy as np
import pytest

from entmonge.errors import MarginalMismatch, SingularFit
from entmonge.functionals import c_eps, density_entropy, expansion_fit, s_functional
from entmonge.instances import BoxDensity, PiecewiseConstantDensity1D, make_section62, make_two_boxes
from entmonge.measures import DiscreteMeasure, GridSpec, Plan, pairwise_distances, rel_entropy, transport_cost
from entmonge.oracles import quad_log_moment
from entmonge.rayeot import (
    assemble_monge_plan,
    disintegrate,
    product_ray_solution,
    ray_cost,
    ray_solution_from_kappa,
    solve_ray,
)
from entmonge.sinkhorn import round_to_marginals


def ray(inst, h, constrained=True):
    fam = disintegrate(inst, GridSpec(h, 0.5))
    return fam, solve_ray(fam, h, inst.d, constrained)


class TestDensityEntropy:
    def test_unit_box(self):
        assert density_entropy(BoxDensity.unit_cube(3)) == 0.0

    def test_section62(self):
        inst = make_section62(2)
        # f = f1 (x) rho with rho uniform on the unit square
        h = density_entropy(inst.f1) + density_entropy(inst.rho)
        np.testing.assert_allclose(h, math.log(1 / 3), rtol=1e-15)
        np.testing.assert_allclose(h, -1.098612, atol=1e-6)

    @pytest.mark.parametrize("V", [0.5, 2.0, 6.0])
    def test_volume(self, V):
        box = BoxDensity(2, (((0.0, 0.0), (V, 1.0), 1 / V),))
        np.testing.assert_allclose(density_entropy(box), -math.log(V), rtol=1e-14)
        np.testing.assert_allclose(density_entropy(PiecewiseConstantDensity1D.uniform(1, 1 + V)),
                                   -math.log(V), rtol=1e-14)


class TestSFunctional:
    def test_product_input(self):
        inst = make_section62(2)
        fam = disintegrate(inst, GridSpec(0.25, 0.5))
        sol = product_ray_solution(fam, 0.25)
        s = sol.source_atoms.points[:, 0]
        t = sol.target_atoms.points[:, 0]
        w = np.outer(sol.source_atoms.weights, sol.target_atoms.weights)
        expect = -0.5 * np.sum(w * np.log(2 * math.pi * np.abs(s[:, None] - t[None, :])))
        np.testing.assert_allclose(s_functional(inst, sol).ray_term, expect, rtol=1e-13)
        assert rel_entropy(sol.kappa) == 0.0

    def test_two_boxes_total_is_ray_term(self):
        _, sol = ray(make_two_boxes(2, 3), 0.125)
        br = s_functional(make_two_boxes(2, 3), sol)
        assert br.total == br.ray_term

    def test_composition_exact(self):
        inst = make_section62(3)
        _, sol = ray(inst, 0.25)
        br = s_functional(inst, sol)
        composed = br.ray_term - 0.5 * br.f_entropy - 0.5 * br.g_entropy + 0.5 * br.f_tilde_term + 0.5 * br.g_tilde_term
        assert br.total == composed
        assert abs(br.total - (br.ray_term - density_entropy(inst.rho))) <= 1e-15

    def test_composition_nonuniform_rho(self):
        rho = BoxDensity(1, (((0.0,), (0.5,), 1.5), ((0.5,), (1.0,), 0.5)))
        base = make_two_boxes(2, 3)
        inst = type(base)(2, base.f1, base.g1, rho)
        _, sol = ray(inst, 0.125)
        br = s_functional(inst, sol)
        assert abs(br.total - (br.ray_term - density_entropy(rho))) <= 1e-12
        assert density_entropy(rho) > 0

    def test_s_star_refinement(self):
        inst = make_two_boxes(2, 3)
        s1 = s_functional(inst, ray(inst, 1 / 256)[1]).total
        s2 = s_functional(inst, ray(inst, 1 / 512)[1]).total
        assert abs(s2 - s1) <= 1e-3
        # recorded S* at h = 1/256
        assert abs(s1 - (-1.4635195944815136)) <= 1e-9

    def test_quad_log_moment_cross_check(self):
        inst = make_section62(2)
        _, sol = ray(inst, 0.125)
        br = s_functional(inst, sol)
        direct = -0.5 * quad_log_moment(sol.kappa) + rel_entropy(sol.kappa)
        assert abs(br.ray_term - direct) <= 1e-12

    def test_mismatch(self):
        _, sol = ray(make_two_boxes(2, 3), 0.25)
        with pytest.raises(MarginalMismatch):
            s_functional(make_section62(2), sol)
        with pytest.raises(MarginalMismatch):
            s_functional(make_two_boxes(2, 4.0), sol)

    def test_json(self):
        _, sol = ray(make_two_boxes(2, 3), 0.25)
        doc = json.loads(s_functional(make_two_boxes(2, 3), sol).to_json())
        assert set(doc) == {"ray_term", "f_entropy", "g_entropy", "f_tilde_term", "g_tilde_term", "total"}

    def test_monge_below_product_separated(self):
        inst = make_two_boxes(2, 3)
        fam, sol = ray(inst, 0.125)
        s0 = s_functional(inst, sol).total
        sp_ = s_functional(inst, product_ray_solution(fam, 0.125)).total
        assert s0 + 1e-6 < sp_

    def test_separated_gap_magnitude(self):
        # second-order estimate: the non-separable part of -log|s-t|/2 near
        # |s-t| = 3 is (s - 1/2)(t - 7/2)/18, and the gap is half its variance
        # under uniform marginals, (1/18)^2 (1/12)^2 / 2 ~ 1.07e-5
        inst = make_two_boxes(2, 3)
        fam, sol = ray(inst, 1 / 64)
        gap = s_functional(inst, product_ray_solution(fam, 1 / 64)).total - s_functional(inst, sol).total
        est = 0.5 * (1 / 18) ** 2 * (1 / 12) ** 2
        np.testing.assert_allclose(gap, est, rtol=0.15)
        assert gap < 1e-4

    def test_product_not_monotone_section62(self):
        # f~ (x) g~ sends mass from [5,6] back to [3,4]: it is infeasible for the
        # constrained problem and scores below its optimum, between the two optima
        inst = make_section62(2)
        fam, sol = ray(inst, 0.125)
        prod = product_ray_solution(fam, 0.125)
        unc = solve_ray(fam, 0.125, 2, constrained=False)
        assert prod.monotone_mass_violation > 0.1
        s_con = s_functional(inst, sol).total
        s_prod = s_functional(inst, prod).total
        s_unc = s_functional(inst, unc).total
        assert s_unc <= s_prod < s_con


def random_monotone_coupling(rng, sol):
    """Perturb ``kappa`` multiplicatively on its support and project back to the marginals."""
    K = sol.kappa.todense() * np.exp(rng.normal(scale=0.5, size=sol.kappa.shape))
    a, b = sol.source_atoms.weights, sol.target_atoms.weights
    for _ in range(50):
        K *= (a / K.sum(axis=1))[:, None]
        K *= (b / K.sum(axis=0))[None, :]
    K, _, _ = round_to_marginals(K, a, b, np.isfinite(ray_cost(sol.source_atoms, sol.target_atoms, sol.d, True)))
    return K


@pytest.mark.parametrize("inst", [make_section62(2), make_two_boxes(2, 3)])
def test_ray_term_minimality(inst):
    _, sol = ray(inst, 0.25)
    rng = np.random.default_rng(0)
    for _ in range(20):
        K = random_monotone_coupling(rng, sol)
        alt = ray_solution_from_kappa(sol.source_atoms, sol.target_atoms, K, inst.d, sol.h)
        assert alt.monotone_mass_violation == 0.0
        assert alt.objective >= sol.objective - 1e-8


class TestCEps:
    def test_product(self):
        mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        nu = DiscreteMeasure([[0.0, 2.0], [3.0, 1.0]], [0.25, 0.75])
        P = Plan(mu, nu, np.outer(mu.weights, nu.weights))
        mean = float(np.sum(P.todense() * pairwise_distances(mu.points, nu.points)))
        np.testing.assert_allclose(c_eps(P, 0.7), mean, rtol=1e-15)

    def test_zero_eps(self):
        mu = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
        P = Plan(mu, mu, [[0.5, 0.0], [0.0, 0.5]])
        assert c_eps(P, 0.0) == transport_cost(P)

    def test_monge_regression(self):
        inst = make_two_boxes(2, 3)
        fam = disintegrate(inst, GridSpec(0.25, 0.25))
        g0 = assemble_monge_plan(fam, solve_ray(fam, 0.25, 2))
        v = c_eps(g0, 0.1)
        assert math.isfinite(v)
        # recorded from a direct evaluation
        assert abs(v - 3.138630446148756) <= 1e-9


class TestExpansionFit:
    E = np.array([0.1, 0.2, 0.4])

    def test_exact_recovery(self):
        y = 0.5 * np.log(1 / self.E) + 1.0
        fit = expansion_fit(list(zip(self.E, 3.0 + self.E * y)), 3.0)
        np.testing.assert_allclose([fit.b, fit.c], [0.5, 1.0], rtol=1e-12)
        assert max(abs(r) for r in fit.residuals) <= 1e-12
        assert fit.ot_reference == 3.0
        assert len(fit.residuals) == 3

    def test_perturbed(self):
        y = 0.5 * np.log(1 / self.E) + 1.0 + 0.01 * self.E
        fit = expansion_fit(list(zip(self.E, self.E * y)), 0.0)
        assert abs(fit.b - 0.5) <= 0.02
        # closed-form least squares gives b = 0.49783595743866615
        assert abs(fit.b - 0.49783595743866615) <= 1e-12

    def test_own_model(self):
        rng = np.random.default_rng(1)
        e = np.sort(rng.uniform(0.01, 1, 6))
        y = -1.3 * np.log(1 / e) + 0.2
        fit = expansion_fit(list(zip(e, 2.0 + e * y)), 2.0)
        assert max(abs(r) for r in fit.residuals) <= 1e-12

    def test_singular(self):
        with pytest.raises(SingularFit):
            expansion_fit([(0.1, 1.0)] * 3, 0.0)
        with pytest.raises(SingularFit):
            expansion_fit([(0.1, 1.0), (0.2, 1.0)], 0.0)

    def test_json(self):
        fit = expansion_fit(list(zip(self.E, self.E)), 0.0)
        doc = json.loads(fit.to_json())
        assert {"b", "c", "residuals", "ot_reference"} <= set(doc)
