import dataclasses

import numpy as np
import pytest

from cbfguard.barrier import (
    BAND,
    INTERIOR,
    OUTSIDE,
    BarrierBank,
    BarrierError,
    BarrierSpec,
    compute_cM,
    effective_barrier,
    effective_value,
    evaluate_H,
    check_relative_degree,
    quad_phi_spec,
    quad_theta_spec,
    quad_z_spec,
    region_label,
    region_membership,
)
from cbfguard.dynamics import (
    IVZ,
    IZ,
    QuadrotorParams,
    as_affine_in_motors,
    double_integrator,
    scalar_integrator,
)

PARAMS = QuadrotorParams()


def scalar_spec(delta_free=True, **kw):
    defaults = dict(
        name="line",
        B=lambda x: float(x[0]) - 1.0,
        gradient=lambda x: np.array([1.0]),
        eta=1.0,
        lipschitz_lB=1.0,
        c_bar=0.1,
        c_M=1.0,
        relative_degree=1,
    )
    defaults.update(kw)
    return BarrierSpec(**defaults)


def quad_model(delta=0.0):
    return as_affine_in_motors(PARAMS, vulnerable={4}, delta=delta)


def quad_bank(alpha_z=1.0):
    return BarrierBank((quad_z_spec(alpha=alpha_z), quad_phi_spec(), quad_theta_spec()))


def random_quad_states(rng, n):
    out = []
    for _ in range(n):
        s = np.zeros(12)
        s[:3] = rng.uniform(-2, 6, size=3)
        s[3:6] = rng.uniform(-2, 2, size=3)
        s[6:9] = rng.uniform(-0.3, 0.3, size=3)
        s[9:12] = rng.uniform(-1.5, 1.5, size=3)
        out.append(s)
    return out


class TestEvaluateH:
    def test_scalar_decreasing_input(self):
        model = scalar_integrator(delta=0.0)
        spec = scalar_spec()
        assert evaluate_H(spec, model, np.array([1.0]), np.array([-1.0])) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_lie_derivative(self):
        model = scalar_integrator(delta=0.0)
        spec = scalar_spec()
        assert evaluate_H(spec, model, np.array([0.3]), np.array([0.0])) == pytest.approx(0.0, abs=1e-12)

    def test_disturbance_margin_enters_additively(self):
        model = quad_model(delta=0.05)
        spec = quad_z_spec(alpha=1.0, l_B=1.0)
        x = np.zeros(12)
        x[IZ] = 1.0
        u = np.zeros(4)
        eff = effective_barrier(spec, model, x)
        H = evaluate_H(spec, model, x, u)
        assert H - (eff.lie_f + eff.lie_g @ u) == pytest.approx(0.05, abs=1e-12)


class TestEffectiveBarrier:
    def test_double_integrator_composition(self):
        model = double_integrator()
        spec = BarrierSpec(
            name="pos", B=lambda x: float(x[0]) - 1.0,
            gradient=lambda x: np.array([1.0, 0.0]),
            hessian=lambda x: np.zeros((2, 2)),
            eta=1.0, lipschitz_lB=2.0, c_bar=0.1, c_M=1.0,
            relative_degree=2, alpha=1.0,
        )
        x = np.array([0.25, -0.4])
        eff = effective_barrier(spec, model, x)
        assert eff.value == pytest.approx(-0.4 + 0.25 - 1.0, abs=1e-12)
        assert eff.lie_g == pytest.approx([1.0], abs=1e-12)

    def test_degree_one_is_identity(self):
        model = scalar_integrator()
        spec = scalar_spec()
        x = np.array([0.7])
        assert effective_value(spec, model, x) == pytest.approx(spec.B(x), abs=1e-15)

    def test_quad_z_value(self):
        model = quad_model()
        spec = quad_z_spec(alpha=1.0)
        x = np.zeros(12)
        x[IZ] = 1.0
        x[IVZ] = 2.0
        assert effective_value(spec, model, x) == pytest.approx(-2.98, abs=1e-12)

    def test_chain_rule_matches_fd_fallback(self):
        model = quad_model()
        model_no_jac = dataclasses.replace(model, drift_jacobian=None)
        rng = np.random.default_rng(3)
        for spec in (quad_z_spec(), quad_phi_spec(), quad_theta_spec()):
            spec_no_hess = dataclasses.replace(spec, hessian=None)
            for x in random_quad_states(rng, 10):
                exact = effective_barrier(spec, model, x)
                fd = effective_barrier(spec_no_hess, model_no_jac, x)
                assert np.max(np.abs(exact.grad - fd.grad)) <= 1e-5
                assert exact.lie_f == pytest.approx(fd.lie_f, abs=1e-4)

    def test_lie_derivative_matches_flow_derivative(self):
        # H(x, u) - l_B*delta must equal the time derivative of Btilde along
        # the undisturbed flow; checked by central differences of one RK4
        # microstep in each direction.
        from cbfguard.sim import rk4_step

        model = quad_model(delta=0.0)
        rng = np.random.default_rng(8)
        for spec in (quad_z_spec(alpha=1.0), quad_phi_spec(), quad_theta_spec()):
            for x in random_quad_states(rng, 5):
                u = rng.uniform(-20, 20, size=4)
                h = 1e-5
                x_plus = rk4_step(model, x, u, None, h)
                x_minus = rk4_step(model, x, u, None, -h)
                flow_fd = (effective_value(spec, model, x_plus) - effective_value(spec, model, x_minus)) / (2 * h)
                H = evaluate_H(spec, model, x, u)
                assert H == pytest.approx(flow_fd, abs=5e-7 + 1e-6 * abs(flow_fd))


class TestComputeCM:
    def test_quadratic_barrier_grid(self):
        spec = quad_phi_spec()
        grid = [np.zeros(12)]
        assert compute_cM(spec, grid) == pytest.approx(0.09, abs=1e-15)

    def test_line_barrier_grid(self):
        spec = scalar_spec()
        grid = [np.array([0.0]), np.array([0.5]), np.array([1.0])]
        assert compute_cM(spec, grid) == pytest.approx(1.0, abs=1e-15)

    def test_degenerate_grid_raises(self):
        spec = scalar_spec()
        with pytest.raises(BarrierError):
            compute_cM(spec, [np.array([1.0])])

    def test_empty_grid_raises(self):
        with pytest.raises(BarrierError):
            compute_cM(scalar_spec(), [])

    def test_point_outside_safe_set_raises(self):
        with pytest.raises(BarrierError):
            compute_cM(scalar_spec(), [np.array([2.0])])

    def test_monotone_under_grid_union(self):
        spec = scalar_spec()
        rng = np.random.default_rng(0)
        base = [np.array([v]) for v in rng.uniform(0.3, 1.0, size=5)]
        refined = base + [np.array([v]) for v in rng.uniform(0.0, 1.0, size=10)]
        assert compute_cM(spec, refined) >= compute_cM(spec, base)


class TestRegions:
    def test_interior_example(self):
        model = quad_model()
        bank = BarrierBank((quad_phi_spec(c_bar=0.0225),))
        labels = region_membership(bank, np.zeros(12), model)
        assert labels == [INTERIOR]

    def test_boundary_assigned_to_band(self):
        assert region_label(-0.0225, 0.0225) == BAND

    def test_outside(self):
        assert region_label(0.001, 0.0225) == OUTSIDE

    def test_partition_is_exhaustive_and_exclusive(self):
        rng = np.random.default_rng(4)
        model = quad_model()
        bank = quad_bank()
        for x in random_quad_states(rng, 200):
            labels = region_membership(bank, x, model)
            assert len(labels) == len(bank)
            assert all(lbl in (INTERIOR, BAND, OUTSIDE) for lbl in labels)


class TestRelativeDegree:
    def test_raw_input_coupling_vanishes_for_quad_barriers(self):
        model = quad_model()
        rng = np.random.default_rng(12)
        states = random_quad_states(rng, 1000)
        for spec in (quad_z_spec(), quad_phi_spec(), quad_theta_spec()):
            worst = 0.0
            for x in states:
                row = spec.gradient(x) @ model.input_matrix(x)
                worst = max(worst, float(np.max(np.abs(row))))
            assert worst <= 1e-12

    def test_misclassified_degree_two_warns(self):
        model = scalar_integrator()
        bad = scalar_spec(relative_degree=2, alpha=1.0)
        with pytest.warns(UserWarning):
            ok = check_relative_degree(bad, model, [np.array([0.0]), np.array([0.5])])
        assert not ok

    def test_correct_degree_two_passes(self):
        model = quad_model()
        spec = quad_z_spec()
        assert check_relative_degree(spec, model, random_quad_states(np.random.default_rng(1), 20))


class TestSpecValidation:
    def test_c_bar_must_be_below_c_M(self):
        with pytest.raises(BarrierError):
            scalar_spec(c_bar=1.5, c_M=1.0)

    def test_bank_must_be_nonempty(self):
        with pytest.raises(BarrierError):
            BarrierBank(())

    def test_joint_safe_check(self):
        bank = quad_bank()
        hover = np.zeros(12)
        hover[IZ] = 5.0
        assert bank.check_joint_safe(hover)
        tipped = hover.copy()
        tipped[6] = 0.4
        assert not bank.check_joint_safe(tipped)
