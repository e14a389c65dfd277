import math
import warnings

import numpy as np
import pytest

from redmpc.plant import ActuatedPendulum, LinearTwoTimescale, PendulumParams
from redmpc.ocp import OcpSpec, SolverConfig, make_ocp_spec, solve_optimal
from redmpc.certify import (
    CertificationError,
    InterconnectionConstants,
    SamplingPlan,
    assemble_interconnection,
    bisect_delta_bar,
    boundary_layer_check,
    closed_loop_decrease_check,
    estimate_lipschitz,
    full_certificate,
    kappa_rule,
    quadratic_bounds,
)

PEND = ActuatedPendulum()
CFG = SolverConfig()

SMALL_PLAN = SamplingPlan(
    equilibrium_samples=1500,
    fast_samples=500,
    lipschitz_pairs=500,
    n_states=6,
    optimizer_pairs_per_state=15,
    boundary_samples=600,
    n_value_states=30,
    map_pairs=30,
    closed_loop_samples=60,
    multistart_states=2,
    multistart_points=4,
)


def linear_spec(horizon=5, delta=0.01):
    return OcpSpec(
        horizon_N=horizon,
        state_weight=np.array([[1.0]]),
        input_weight=np.array([[0.1]]),
        terminal_weight=np.array([[1.0]]),
        input_box=(np.array([-10.0]), np.array([10.0])),
        delta=delta,
    )


class TestEstimateLipschitz:
    def test_identity_map(self):
        est = estimate_lipschitz(lambda v: v, [-1.0, -1.0], [1.0, 1.0], count=500, seed=0)
        assert est.value == pytest.approx(1.0, abs=1e-12)
        assert est.tag == "sampled-lower-bound"

    def test_analytic_passthrough(self):
        est = estimate_lipschitz(lambda v: v, [-1.0], [1.0], analytic=0.8)
        assert est.value == 0.8 and est.tag == "analytic"

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError, match="zero volume"):
            estimate_lipschitz(lambda v: v, [1.0], [1.0], count=10)

    def test_monotone_in_sample_count(self):
        fn = lambda v: np.sin(3.0 * v)
        small = estimate_lipschitz(fn, [-2.0], [2.0], count=200, seed=7).value
        big = estimate_lipschitz(fn, [-2.0], [2.0], count=400, seed=7).value
        assert big >= small

    def test_inflation_only_for_sampled(self):
        sampled = estimate_lipschitz(lambda v: v, [-1.0], [1.0], count=100, seed=1)
        analytic = estimate_lipschitz(lambda v: v, [-1.0], [1.0], analytic=1.0)
        assert sampled.inflated(1.5) == pytest.approx(1.5 * sampled.value)
        assert analytic.inflated(1.5) == 1.0


class TestQuadraticBounds:
    def test_pendulum_fast_error_closed_form(self):
        # error map is exactly 0.4 * err, independent of the frozen (x, u)
        rng = np.random.default_rng(0)
        errs = rng.uniform(0.1, 2.0, (500, 1)) * rng.choice([-1.0, 1.0], (500, 1))
        stepped = 0.4 * errs
        sq = lambda v: float(v @ v)
        b = quadratic_bounds(sq, errs, stepped)
        assert b.lower == pytest.approx(1.0, abs=1e-12)
        assert b.upper == pytest.approx(1.0, abs=1e-12)
        assert b.decrease == pytest.approx(0.84, abs=1e-9)
        assert b.increment == pytest.approx(1.0, abs=1e-9)
        assert b.ok

    def test_identity_step_map_fails(self):
        rng = np.random.default_rng(1)
        errs = rng.normal(size=(100, 2))
        sq = lambda v: float(v @ v)
        b = quadratic_bounds(sq, errs, errs)
        assert not b.ok
        assert b.decrease == pytest.approx(0.0, abs=1e-15)
        assert b.witness is not None

    def test_zero_sample_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            quadratic_bounds(lambda v: float(v @ v), np.zeros((3, 1)), np.zeros((3, 1)))

    def test_decrease_divisor(self):
        errs = np.array([[1.0], [2.0]])
        stepped = 0.5 * errs
        sq = lambda v: float(v @ v)
        plain = quadratic_bounds(sq, errs, stepped).decrease
        scaled = quadratic_bounds(sq, errs, stepped, decrease_divisor=0.5).decrease
        assert scaled == pytest.approx(2.0 * plain, rel=1e-12)


class TestKappaRule:
    def test_hand_computed_example(self):
        rule = kappa_rule(a3=0.84, a4=1.0, b3=0.5, lip_xi=5.0 / 3.0, lip_g=1.0, lip_T=0.5)
        assert rule.boundary_k1 == pytest.approx(2.5, abs=1e-12)
        assert rule.boundary_k2 == pytest.approx(11.25, abs=1e-12)
        assert rule.kappa_threshold == pytest.approx(37.380952, abs=1e-6)
        assert rule.kappa == pytest.approx(1.1 * 37.380952, abs=1e-5)

    def test_decoupled_case(self):
        rule = kappa_rule(a3=0.5, a4=1.0, b3=0.5, lip_xi=0.0, lip_g=0.0, lip_T=0.0)
        assert rule.boundary_k1 == 0.0
        assert rule.boundary_k2 == 0.0
        assert rule.kappa_threshold == 0.0
        assert rule.kappa > 0.0

    def test_nonpositive_decrease_raises(self):
        with pytest.raises(CertificationError, match="nonpositive decrease"):
            kappa_rule(a3=0.0, a4=1.0, b3=0.5, lip_xi=1.0, lip_g=1.0, lip_T=1.0)
        with pytest.raises(CertificationError, match="nonpositive decrease"):
            kappa_rule(a3=0.5, a4=1.0, b3=-1e-3, lip_xi=1.0, lip_g=1.0, lip_T=1.0)

    def test_matches_independent_expressions(self):
        # pure arithmetic: cross-check against inline formulas on random inputs
        rng = np.random.default_rng(4)
        for _ in range(300):
            a3, a4, b3, lx, lg, lt = rng.uniform(0.05, 4.0, 6)
            rule = kappa_rule(a3, a4, b3, lx, lg, lt)
            k1 = a4 * lx * lg * (lt + 1)
            k2 = a4 * (2 * lx * (lt + 1) + (lx * (lt + 1)) ** 2)
            assert rule.boundary_k1 == pytest.approx(k1, rel=1e-14)
            assert rule.boundary_k2 == pytest.approx(k2, rel=1e-14)
            assert rule.kappa_threshold == pytest.approx(k1**2 / (a3 * b3) + k2 / b3, rel=1e-14)


class TestAssemble:
    def test_hand_computed_example(self):
        ic = assemble_interconnection(
            c3=1.0, c4=1.0, fast_decrease=0.5, fast_increment=1.0, lip_slow=0.8, lip_h=1.0, lip_G=1.0
        )
        assert ic.k1 == pytest.approx(1.6, abs=1e-12)
        assert ic.k2 == pytest.approx(1.28, abs=1e-12)
        assert ic.k3 == pytest.approx(0.64, abs=1e-12)

    def test_decoupled_limit(self):
        ic = assemble_interconnection(
            c3=1.0, c4=0.0, fast_decrease=1.0, fast_increment=0.0, lip_slow=0.0, lip_h=0.0, lip_G=0.0
        )
        for delta in (0.0, 0.05, 0.2):
            assert ic.p_poly(delta) == 0.0
            mat = ic.coupling_matrix(delta)
            assert mat[0, 1] == 0.0 and mat[1, 0] == 0.0

    def test_p_vanishes_at_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            vals = rng.uniform(0.1, 5.0, 7)
            ic = assemble_interconnection(*vals)
            assert ic.p_poly(0.0) == 0.0

    def test_p_continuity_linear_envelope(self):
        # p(delta) = O(delta^2), so a slope fitted on a coarse grid dominates
        # the polynomial on any finer grid toward zero.
        ic = assemble_interconnection(
            c3=2.0, c4=1.5, fast_decrease=0.5, fast_increment=2.0, lip_slow=1.2, lip_h=3.0, lip_G=1.1
        )
        coarse = np.linspace(1e-3, 1e-2, 50)
        slope = max(abs(ic.p_poly(d)) / d for d in coarse)
        fine = np.logspace(-6, -3, 60)
        assert all(abs(ic.p_poly(d)) <= slope * d * (1 + 1e-12) for d in fine)

    def test_matches_independent_expressions(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            c3, c4, d3, d4, lf, lh, lG = rng.uniform(0.05, 4.0, 7)
            ic = assemble_interconnection(c3, c4, d3, d4, lf, lh, lG)
            assert ic.k1 == pytest.approx(2 * c4 * lf, rel=1e-14)
            assert ic.k2 == pytest.approx(2 * c4 * lf**2, rel=1e-14)
            assert ic.k3 == pytest.approx(c4 * lf**2, rel=1e-14)
            assert ic.k4 == pytest.approx(2 * d4 * lh * lG * lf, rel=1e-14)
            assert ic.k5 == pytest.approx(2 * d4 * lh**2 * lf**2, rel=1e-14)
            assert ic.k6 == pytest.approx(2 * d4 * lh * lG * lf, rel=1e-14)
            assert ic.k7 == pytest.approx(d4 * lh**2 * lf**2, rel=1e-14)
            assert ic.k8 == pytest.approx(d4 * lh**2 * lf**2, rel=1e-14)
            delta = rng.uniform(0.0, 0.3)
            assert ic.q21(delta) == pytest.approx(
                -0.5 * (delta * (ic.k1 + ic.k4) + delta**2 * (ic.k2 + ic.k5)), rel=1e-14
            )

    def test_missing_constant_listed(self):
        with pytest.raises(CertificationError, match="c4"):
            assemble_interconnection(
                c3=1.0, c4=math.nan, fast_decrease=0.5, fast_increment=1.0, lip_slow=1.0, lip_h=1.0, lip_G=1.0
            )

    def test_determinant_identity_and_sylvester_equivalence(self):
        # eigenvalue PD test == leading-minors test, and det(Q) equals
        # delta*c3*b3 - p(delta) exactly (the scalar form of the condition)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            vals = rng.uniform(0.05, 5.0, 7)
            ic = assemble_interconnection(*vals)
            delta = rng.uniform(1e-4, 0.3)
            mat = ic.coupling_matrix(delta)
            det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
            eig_pd = bool(np.all(np.linalg.eigvalsh(mat) > 0))
            minors_pd = bool(mat[0, 0] > 0 and det > 0)
            assert eig_pd == minors_pd
            assert abs(det - (delta * ic.c3 * ic.fast_decrease - ic.p_poly(delta))) <= 1e-10


class TestBisect:
    def test_cap_limited_decoupled(self):
        ic = assemble_interconnection(
            c3=1.0, c4=0.0, fast_decrease=1.0, fast_increment=0.0, lip_slow=0.0, lip_h=0.0, lip_G=0.0
        )
        res = bisect_delta_bar(ic, [0.2])
        assert res.value == pytest.approx(0.2)
        assert "cap" in res.reason

    def test_nonpositive_c3_returns_none(self):
        ic = assemble_interconnection(
            c3=0.0, c4=1.0, fast_decrease=0.5, fast_increment=1.0, lip_slow=1.0, lip_h=1.0, lip_G=1.0
        )
        res = bisect_delta_bar(ic, [0.2])
        assert res.value is None
        assert "reduced-system decrease constant nonpositive" in res.reason

    def test_boundary_found_and_condition_holds_below(self):
        ic = assemble_interconnection(
            c3=1.0, c4=1.0, fast_decrease=0.5, fast_increment=1.0, lip_slow=0.8, lip_h=1.0, lip_G=1.0
        )
        res = bisect_delta_bar(ic, [0.2])
        assert res.value is not None and res.value > 0.0
        assert ic.c3 * ic.fast_decrease > ic.p_poly(res.value)
        assert ic.condition_holds(res.value * 0.5)

    def test_multiple_caps_take_minimum(self):
        ic = assemble_interconnection(
            c3=1.0, c4=0.0, fast_decrease=1.0, fast_increment=0.0, lip_slow=0.0, lip_h=0.0, lip_G=0.0
        )
        res = bisect_delta_bar(ic, [0.2, 0.05])
        assert res.value == pytest.approx(0.05)


class TestBoundaryLayer:
    def test_origin_is_fixed_point(self):
        # At (xi_err, z_err) = (0, 0) the composite value change is ~ solver tolerance^2.
        spec = make_ocp_spec(0.01, horizon_N=10)
        x = np.array([0.3, -0.2])
        star = solve_optimal(spec, PEND, CFG, x, np.zeros(10))
        from redmpc.ocp import first_input, iterate_map

        z_next, _ = iterate_map(spec, PEND, CFG, x, star.z)
        xi_eq = PEND.equilibrium_map(x, first_input(star.z, 1))
        xi_next = PEND.extra_map(xi_eq, x, first_input(star.z, 1), 0.01)
        xi_err_next = xi_next - PEND.equilibrium_map(x, first_input(z_next, 1))
        drift = float(xi_err_next @ xi_err_next) + float((z_next - star.z) @ (z_next - star.z))
        assert drift <= 1e-15

    def test_pendulum_composite_decreases(self):
        spec = make_ocp_spec(0.01)
        plan = SamplingPlan(n_states=4, boundary_samples=200)
        rule = kappa_rule(a3=0.84, a4=1.0, b3=0.04, lip_xi=2.5, lip_g=1.5, lip_T=1.5)
        res = boundary_layer_check(PEND, spec, CFG, rule.kappa, plan)
        assert res.passed
        assert res.d3 > 0.0
        assert res.d1 <= res.d2

    def test_zero_weight_fails_on_drift(self):
        # With no optimizer term, the equilibrium drift pushed into the fast
        # error by a large z error makes the value increase.
        spec = make_ocp_spec(0.01)
        plan = SamplingPlan(n_states=1, boundary_samples=1)
        x = np.array([[0.4, 0.1]])
        xi_err = np.array([[1e-8]])
        z_err = np.zeros((1, 50))
        z_err[0, 0] = 1.0
        res = boundary_layer_check(
            PEND, spec, CFG, kappa=0.0, plan=plan, states=x, error_samples=(xi_err, z_err)
        )
        assert not res.passed
        assert res.witness is not None


class TestFullCertificate:
    def test_linear_model_passes_with_closed_forms(self):
        lin = LinearTwoTimescale()
        plan = SamplingPlan(
            equilibrium_samples=1000,
            fast_samples=400,
            lipschitz_pairs=300,
            n_states=5,
            optimizer_pairs_per_state=10,
            boundary_samples=300,
            n_value_states=25,
            map_pairs=20,
            closed_loop_samples=40,
            multistart_states=1,
            multistart_points=3,
            u_range=(-10.0, 10.0),
            xi_range=(-10.0, 10.0),
        )
        rep = full_certificate(lin, linear_spec(), SolverConfig(iters_per_sample=40), plan)
        assert rep.overall_pass
        assert rep.delta_bar is not None and rep.delta_bar > 0.0
        # closed forms: squared-norm candidate on a rho=0.5 fast map
        assert rep.fast_bounds.lower == pytest.approx(1.0, abs=1e-9)
        assert rep.fast_bounds.upper == pytest.approx(1.0, abs=1e-9)
        assert rep.fast_bounds.decrease == pytest.approx(1.0 - 0.5**2, abs=1e-6)
        # near-exact optimizer jumps to the minimizer: full decrease
        assert rep.optimizer_bounds.decrease == pytest.approx(1.0, abs=1e-3)
        # scalar quadratic value function: lower == upper
        assert rep.reduced_bounds.lower == pytest.approx(rep.reduced_bounds.upper, rel=1e-6)

    def test_pendulum_at_contraction_boundary_fails(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bad = ActuatedPendulum(PendulumParams(L_tilde=0.3))  # 1 - R/Lt = -1: no contraction
        plan = SamplingPlan(
            equilibrium_samples=500,
            fast_samples=300,
            lipschitz_pairs=200,
            n_states=3,
            optimizer_pairs_per_state=8,
            boundary_samples=100,
            n_value_states=12,
            map_pairs=10,
            closed_loop_samples=20,
            multistart_states=1,
            multistart_points=2,
        )
        rep = full_certificate(bad, make_ocp_spec(0.01, horizon_N=10), CFG, plan)
        assert not rep.overall_pass
        fast = {v.name: v for v in rep.verdicts}["fast-error-decrease"]
        assert not fast.passed
        assert rep.delta_bar is None

    def test_report_serializes(self):
        lin = LinearTwoTimescale()
        plan = SamplingPlan(
            equilibrium_samples=200,
            fast_samples=100,
            lipschitz_pairs=100,
            n_states=2,
            optimizer_pairs_per_state=5,
            boundary_samples=40,
            n_value_states=12,
            map_pairs=6,
            closed_loop_samples=10,
            multistart_states=1,
            multistart_points=2,
            u_range=(-10.0, 10.0),
            xi_range=(-10.0, 10.0),
        )
        rep = full_certificate(lin, linear_spec(), SolverConfig(iters_per_sample=20), plan)
        text = rep.to_text()
        assert "delta_bar" in text and ("PASS" in text or "FAIL" in text)
        import json

        blob = json.loads(rep.to_json())
        assert blob["model"] == "linear"
        assert isinstance(blob["verdicts"], list)
        assert blob["overall_pass"] == rep.overall_pass


class TestClosedLoopDecrease:
    def test_linear_decrease_below_bound(self):
        lin = LinearTwoTimescale()
        spec = linear_spec()
        plan = SamplingPlan(closed_loop_samples=30, near_eq_ball=0.3)
        res = closed_loop_decrease_check(lin, spec, SolverConfig(iters_per_sample=40), kappa=4.0, delta=0.002, plan=plan, count=30)
        assert res.passed
        assert res.worst_margin > 0.0
