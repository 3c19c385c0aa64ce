import numpy as np
import pytest
from catalog_fixtures import ALL_LINEAR, base_spec, const_jump, materialize, u_default
from helpers import atom_jump, make_spec

from stopsurf.exprs import parse
from stopsurf.hypotheses import (
    CATALOG,
    CheckConfig,
    NoEligibleNodes,
    check_coefficient_regularity,
    check_delta_condition,
    compute_h,
    jump_derivative_identity,
    run_catalog,
)
from stopsurf.model import Window, build_grid

W = Window(0.1, 0.4, 0.15, 0.85, -0.35, 0.35)


def window_axes(sm):
    return np.ix_(np.arange(1, sm.ix_ext.size - 1), np.arange(sm.jy.size))


class TestComputeH:
    def test_linear_gain_linear_drift(self):
        # g = x, alpha1 = y + 0.15 x, r = 0.05: generator is y + 0.10 x
        p = base_spec()
        grid = build_grid(p, 26, 41, 41)
        sm, H = compute_h(p, grid, W)
        X = grid.x[sm.ix_ext][:, None]
        Y = grid.y[sm.jy][None, :]
        np.testing.assert_allclose(H[0], Y + 0.10 * X, atol=1e-12)

    def test_put_gain_below_strike(self):
        # g = K - x with GBM drift and constant discount: the generator is
        # the constant -r K on a window below the strike
        p = make_spec(alpha1="0.05*x", beta1="0.02*x*x", beta2="0.1", r="0.05",
                      g="100 - x", box=(0.0, 80.0, 0.0, 1.0), horizon=0.5,
                      far_field=ALL_LINEAR)
        grid = build_grid(p, 11, 41, 11)
        w = Window(0.05, 0.45, 10.0, 70.0, 0.2, 0.8)
        _, H = compute_h(p, grid, w)
        np.testing.assert_allclose(H, -0.05 * 100.0, atol=1e-10)

    def test_constant_gain_no_discount(self):
        p = make_spec(alpha1="y", beta1="0.05", beta2="0.1", r="0", g="1",
                      box=(0.0, 1.0, -0.5, 0.5), horizon=0.5, far_field=ALL_LINEAR)
        grid = build_grid(p, 11, 21, 21)
        _, H = compute_h(p, grid, W)
        np.testing.assert_allclose(H, 0.0, atol=1e-14)

    def test_jump_contribution_constant(self):
        # one uncompensated atom gamma=(c,0) with weight w adds w*c for g = x
        p = base_spec(jumps=(const_jump(),))
        grid = build_grid(p, 26, 41, 41)
        sm, H = compute_h(p, grid, W)
        X = grid.x[sm.ix_ext][:, None]
        Y = grid.y[sm.jy][None, :]
        np.testing.assert_allclose(H[0], Y + 0.10 * X + 0.5 * 0.05, atol=1e-12)


class TestDeltaCondition:
    def test_hand_algebra_positive(self):
        # h = y + 0.1 x over beta2 = 0.5: slope 0.2 everywhere
        p = base_spec(beta2="0.5")
        grid = build_grid(p, 26, 41, 41)
        sm, H = compute_h(p, grid, W)
        item = check_delta_condition(H, p, grid, W, sm)
        assert item.status == "pass"
        assert item.margin == pytest.approx(0.2, rel=1e-9)

    def test_constant_h_fails(self):
        p = make_spec(alpha1="0.05*x", beta1="0.02*x*x", beta2="0.1", r="0.05",
                      g="100 - x", box=(0.0, 80.0, 0.0, 1.0), horizon=0.5,
                      far_field=ALL_LINEAR)
        grid = build_grid(p, 11, 41, 11)
        w = Window(0.05, 0.45, 10.0, 70.0, 0.2, 0.8)
        sm, H = compute_h(p, grid, w)
        item = check_delta_condition(H, p, grid, w, sm)
        assert item.status == "fail"
        assert item.margin == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_beta2_unverifiable(self):
        p = base_spec(beta2="0")
        grid = build_grid(p, 26, 41, 41)
        sm, H = compute_h(p, grid, W)
        item = check_delta_condition(H, p, grid, W, sm)
        assert item.status == "unverifiable"


class TestRegularity:
    def test_positive_beta2_passes(self):
        p = base_spec(beta2="0.5 + 0.1*y")
        grid = build_grid(p, 26, 41, 41)
        beta2_item, reg_item = check_coefficient_regularity(p, grid, W)
        assert beta2_item.status == "pass"
        assert beta2_item.margin == pytest.approx(0.5 + 0.1 * -0.325, rel=1e-6)
        assert reg_item.status == "pass"

    def test_sign_change_fails_with_witness(self):
        p = base_spec(beta2="y")
        grid = build_grid(p, 26, 41, 41)
        beta2_item, _ = check_coefficient_regularity(p, grid, W)
        assert beta2_item.status == "fail"
        assert beta2_item.witness["y"] < 0

    def test_domain_error_fails_regularity(self):
        p = base_spec(r="1/(x - 0.5)")
        grid = build_grid(p, 26, 41, 41)
        _, reg_item = check_coefficient_regularity(p, grid, W)
        assert reg_item.status == "fail"


class TestJumpItems:
    def test_constant_jump_passes_slope_items(self):
        spec, grid, window, u, mask = materialize("L4.5.a")  # has a const jump
        rep = run_catalog(base_spec(jumps=(const_jump(),)), grid, window,
                          u_field=u, stop_mask=mask)
        assert rep.by_id("L4.5.b").status == "pass"
        assert rep.by_id("L4.5.b").margin == pytest.approx(1.0)
        assert rep.by_id("L4.5.c").status == "pass"
        assert rep.by_id("C4.6-applicable").status == "pass"

    def test_steep_gamma_slope_fails(self):
        jc = const_jump(gamma1="-2*x", gamma_bar="2")
        p = base_spec(jumps=(jc,))
        grid = build_grid(p, 26, 41, 41)
        rep = run_catalog(p, grid, W, u_field=u_default(grid), stop_mask=None)
        item = rep.by_id("L4.5.b")
        assert item.status == "fail"
        assert item.margin == pytest.approx(-1.0)  # 1 + (-2)
        assert item.witness is not None

    def test_no_jumps_not_applicable(self):
        p = base_spec()
        grid = build_grid(p, 26, 41, 41)
        rep = run_catalog(p, grid, W, u_field=u_default(grid),
                          stop_mask=u_default(grid) <= 1e-7)
        for item_id in ("A4.1-assA", "A4.3-support", "L4.4-integrability",
                        "L4.5.a", "C4.6-applicable", "R4.7-relaxed"):
            assert rep.by_id(item_id).status == "not-applicable"

    def test_missing_solve_artifacts_unverifiable(self):
        p = base_spec(jumps=(const_jump(),))
        grid = build_grid(p, 26, 41, 41)
        rep = run_catalog(p, grid, W)
        for item_id in ("A3.1.iv-dxu", "L4.5.d", "A4.1-assA", "R4.7-relaxed"):
            assert rep.by_id(item_id).status == "unverifiable"


class TestJumpDerivativeIdentity:
    def manufactured(self, nx, gamma="0.3"):
        jc = atom_jump(gamma1=gamma, gamma2="0", gamma_bar="0.5", atoms=((0.0, 1.0),))
        p = make_spec(beta1="0.05", beta2="0.1", r="0", g="0",
                      jumps=(jc,), box=(0.0, 1.0, 0.0, 1.0), horizon=1.0,
                      far_field=ALL_LINEAR)
        grid = build_grid(p, 6, nx, 7)
        X, _ = grid.meshgrid()
        u = np.maximum(X - 0.5, 0.0) ** 2
        u_field = np.repeat(u[None, :, :], grid.nt, axis=0)
        mask = u_field <= 1e-9
        w = Window(0.3, 0.75, 0.03, 0.97, 0.2, 0.8)
        return p, grid, w, u_field, mask

    def test_quadratic_u_small_discrepancy(self):
        p, grid, w, u, mask = self.manufactured(101)  # hx = 0.01
        assert jump_derivative_identity(u, p, grid, w, mask) <= 1e-3

    def test_halving_keeps_quadratic_order(self):
        p, grid, w, u, mask = self.manufactured(201)  # hx = 0.005
        assert jump_derivative_identity(u, p, grid, w, mask) <= 2.6e-4

    def test_off_grid_destination(self):
        # destination not a multiple of the grid step exercises interpolation
        p, grid, w, u, mask = self.manufactured(101, gamma="0.3051")
        assert jump_derivative_identity(u, p, grid, w, mask) <= 1e-3

    def test_zero_jump_zero_both_sides(self):
        p, grid, w, u, mask = self.manufactured(51, gamma="0")
        assert jump_derivative_identity(u, p, grid, w, mask) == pytest.approx(0.0, abs=1e-15)

    def test_zero_field(self):
        p, grid, w, u, mask = self.manufactured(51)
        assert jump_derivative_identity(np.zeros_like(u), p, grid, w,
                                        np.ones_like(mask)) == 0.0

    def test_no_eligible_nodes(self):
        p, grid, w, u, mask = self.manufactured(51)
        with pytest.raises(NoEligibleNodes):
            jump_derivative_identity(u, p, grid, w, np.zeros_like(mask))


class TestCatalog:
    def test_catalog_complete_and_ordered(self):
        spec, grid, window, u, mask = materialize("A3.1.iii-delta")
        rep = run_catalog(spec, grid, window, u_field=u, stop_mask=mask)
        assert tuple(i.id for i in rep.items) == CATALOG
        assert len(CATALOG) == 16

    def test_deterministic(self):
        spec, grid, window, u, mask = materialize("L4.5.a")
        r1 = run_catalog(spec, grid, window, u_field=u, stop_mask=mask)
        r2 = run_catalog(spec, grid, window, u_field=u, stop_mask=mask)
        assert r1.to_dict() == r2.to_dict()

    @pytest.mark.parametrize("target", CATALOG)
    def test_one_hot_violation(self, target):
        spec, grid, window, u, mask = materialize(target)
        rep = run_catalog(spec, grid, window, u_field=u, stop_mask=mask)
        assert [i.id for i in rep.failures()] == [target]
