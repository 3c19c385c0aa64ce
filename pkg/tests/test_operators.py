import numpy as np
import pytest
from helpers import atom_jump, make_spec

from stopsurf import operators
from stopsurf.exprs import parse
from stopsurf.model import FarField, FarFieldRule, build_grid
from stopsurf.operators import (
    apply_jump_operator,
    apply_jump_to_expression,
    apply_local_generator,
    build_jump_quadrature,
    build_local_stencil,
    build_local_stencil_at,
    levy_integrability_report,
    pad_field,
)


def const_fields(shape, alpha1=0.0, alpha2=0.0, beta1=0.0, beta2=0.0,
                 beta_bar=0.0, r=0.0):
    full = lambda v: np.full(shape, float(v))
    return {"alpha1": full(alpha1), "alpha2": full(alpha2), "beta1": full(beta1),
            "beta2": full(beta2), "beta_bar": full(beta_bar), "r": full(r)}


def pad_exact(fn, x, y, hx, hy):
    """Pad by evaluating the exact function on the extended coordinates."""
    xp = np.concatenate(([x[0] - hx], x, [x[-1] + hx]))
    yp = np.concatenate(([y[0] - hy], y, [y[-1] + hy]))
    return np.broadcast_to(fn(xp[:, None], yp[None, :]), (len(xp), len(yp))).copy()


class TestLocalGenerator:
    def test_exact_on_quadratic(self):
        x = np.linspace(0, 1, 11)
        y = np.linspace(0, 1, 9)
        hx, hy = x[1] - x[0], y[1] - y[0]
        st = build_local_stencil(const_fields((11, 9), beta1=1.0, beta2=1.0), hx, hy)
        f = pad_exact(lambda X, Y: X**2 + Y**2, x, y, hx, hy)
        out = apply_local_generator(f, st)
        np.testing.assert_allclose(out, 4.0, atol=1e-11)

    def test_cubic_second_derivative(self):
        # beta1 Dxx on x^3 at x=1: central second difference is exact on cubics
        x = np.linspace(0.5, 1.5, 11)  # hx = 0.1, x=1 is node 5
        y = np.linspace(0, 1, 3)
        hx, hy = 0.1, 0.5
        st = build_local_stencil(const_fields((11, 3), beta1=1.0), hx, hy)
        f = pad_exact(lambda X, Y: X**3, x, y, hx, hy)
        out = apply_local_generator(f, st)
        assert 5.99 <= out[5, 1] <= 6.01

    def test_mixed_term_on_bilinear(self):
        # rho=0.5, beta1=beta2=2 gives beta_bar=1; L(xy) = 2*beta_bar = 2 exactly
        x = np.linspace(0, 1, 6)
        y = np.linspace(0, 1, 6)
        hx = hy = 0.2
        st = build_local_stencil(const_fields((6, 6), beta1=2.0, beta2=2.0, beta_bar=1.0),
                                 hx, hy)
        f = pad_exact(lambda X, Y: X * Y, x, y, hx, hy)
        out = apply_local_generator(f, st)
        np.testing.assert_allclose(out, 2.0, atol=1e-12)

    def test_constant_field_returns_minus_r(self):
        st = build_local_stencil(const_fields((5, 5), alpha1=0.3, beta1=0.2, beta2=0.1,
                                              beta_bar=0.05, r=0.07), 0.1, 0.1)
        f = np.full((7, 7), 3.0)
        out = apply_local_generator(f, st)
        np.testing.assert_allclose(out, -0.07 * 3.0, atol=1e-13)

    def test_convergence_order_on_smooth_field(self):
        # measured order >= 1.9 under simultaneous halving, central regime
        fields_kw = dict(alpha1=0.2, alpha2=-0.1, beta1=1.0, beta2=0.8, beta_bar=0.4, r=0.3)

        def exact(X, Y):
            f = np.exp(X + Y)
            return (fields_kw["beta1"] * f + fields_kw["beta2"] * f
                    + 2 * fields_kw["beta_bar"] * f
                    + fields_kw["alpha1"] * f + fields_kw["alpha2"] * f
                    - fields_kw["r"] * f)

        errs = []
        for n in (9, 17, 33, 65):
            x = np.linspace(0, 1, n)
            y = np.linspace(0, 1, n)
            hx = hy = x[1] - x[0]
            st = build_local_stencil(const_fields((n, n), **fields_kw), hx, hy)
            f = pad_exact(lambda X, Y: np.exp(X + Y), x, y, hx, hy)
            out = apply_local_generator(f, st)
            X, Y = np.meshgrid(x, y, indexing="ij")
            errs.append(np.max(np.abs(out - exact(X, Y))))
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(3)]
        assert min(orders) >= 1.9

    def test_upwind_monotone_offdiagonals(self):
        # strong drift against weak diffusion triggers upwinding with
        # nonnegative off-diagonal contributions from the first-order terms
        st = build_local_stencil(const_fields((4, 4), alpha1=5.0, alpha2=-5.0,
                                              beta1=0.01, beta2=0.01), 0.1, 0.1)
        assert st.upwind_x.all() and st.upwind_y.all()
        assert (st.east >= 0).all() and (st.west >= 0).all()
        assert (st.north >= 0).all() and (st.south >= 0).all()

    def test_upwind_on_vanishing_diffusion(self):
        st = build_local_stencil(const_fields((4, 4), alpha1=1.0), 0.1, 0.1)
        assert st.upwind_x.all()
        assert not st.upwind_y.any()  # no y drift at all

    def test_row_sum_is_minus_r(self):
        st = build_local_stencil(const_fields((4, 4), alpha1=3.0, alpha2=-2.0, beta1=0.5,
                                              beta2=0.2, beta_bar=0.1, r=0.4), 0.1, 0.2)
        total = (st.center + st.east + st.west + st.north + st.south
                 + st.ne + st.nw + st.se + st.sw)
        np.testing.assert_allclose(total, -0.4, atol=1e-12)


class TestPadField:
    def test_gain_rule(self):
        p = make_spec(g="x + y", box=(0.0, 1.0, 0.0, 1.0))
        grid = build_grid(p, 3, 5, 5)
        f = np.zeros((5, 5))
        out = pad_field(f, p, grid, 0)
        assert out[0, 1] == pytest.approx((grid.x[0] - grid.hx) + grid.y[0])
        assert out[-1, -1] == pytest.approx((grid.x[-1] + grid.hx) + (grid.y[-1] + grid.hy))

    def test_linear_rule(self):
        p = make_spec(far_field=FarField(x_lo=FarFieldRule("linear"),
                                         x_hi=FarFieldRule("linear"),
                                         y_lo=FarFieldRule("linear"),
                                         y_hi=FarFieldRule("linear")))
        grid = build_grid(p, 3, 5, 5)
        X, Y = grid.meshgrid()
        f = 2.0 * X + 3.0 * Y
        out = pad_field(f, p, grid, 0)
        exact = pad_exact(lambda a, b: 2.0 * a + 3.0 * b, grid.x, grid.y, grid.hx, grid.hy)
        np.testing.assert_allclose(out, exact, atol=1e-12)

    def test_expression_rule(self):
        p = make_spec(far_field=FarField(x_hi=FarFieldRule("expression", parse("7"))))
        grid = build_grid(p, 3, 5, 5)
        out = pad_field(np.zeros((5, 5)), p, grid, 0)
        np.testing.assert_allclose(out[-1, 1:-1], 7.0)


class TestJumpQuadrature:
    def test_constant_jump_destination_and_compensation(self):
        jc = atom_jump(gamma1="0.25", gamma2="0", gamma_bar="0.25",
                       atoms=((0.0, 2.0),), compensate=True)
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 11, 5)
        q = build_jump_quadrature(p, grid, 0)
        cq = q.components[0]
        np.testing.assert_allclose(cq.dest_x[0], grid.meshgrid()[0] + 0.25)
        np.testing.assert_allclose(cq.dest_y[0], grid.meshgrid()[1])
        np.testing.assert_allclose(cq.comp_x, 2.0 * 0.25)
        np.testing.assert_allclose(cq.comp_y, 0.0)

    def test_uncompensated_has_zero_compensation(self):
        jc = atom_jump(gamma1="0.25", gamma2="0", gamma_bar="0.25",
                       atoms=((0.0, 2.0),), compensate=False)
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 11, 5)
        cq = build_jump_quadrature(p, grid, 0).components[0]
        np.testing.assert_allclose(cq.comp_x, 0.0)
        np.testing.assert_allclose(cq.comp_y, 0.0)

    def test_outside_destination_flagged(self):
        jc = atom_jump(gamma1="0.5", gamma2="0", gamma_bar="0.5")
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 11, 5)
        cq = build_jump_quadrature(p, grid, 0).components[0]
        X = grid.meshgrid()[0]
        np.testing.assert_array_equal(cq.inside[0], X + 0.5 <= 1.0 + 1e-12)

    def test_linear_field_uncompensated(self):
        # f(x,y) = x, one uncompensated atom gamma=(c,0), w=lam: Af = lam*c
        jc = atom_jump(gamma1="0.2", gamma2="0", gamma_bar="0.2", atoms=((0.0, 1.5),))
        p = make_spec(jumps=(jc,), g="x")  # far field continues f=x exactly
        grid = build_grid(p, 3, 11, 5)
        q = build_jump_quadrature(p, grid, 0)
        f = grid.meshgrid()[0].copy()
        out = apply_jump_operator(f, None, q)
        np.testing.assert_allclose(out, 1.5 * 0.2, atol=1e-12)

    def test_zero_jump_identity(self):
        jc = atom_jump(gamma1="0", gamma2="0", gamma_bar="0.5")
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 7, 7)
        q = build_jump_quadrature(p, grid, 0)
        rng = np.random.default_rng(0)
        f = rng.normal(size=(7, 7))
        np.testing.assert_allclose(apply_jump_operator(f, None, q), 0.0, atol=1e-12)

    def test_compensation_cancels_linear_part(self):
        jc = atom_jump(gamma1="0.2", gamma2="0", gamma_bar="0.2",
                       atoms=((0.0, 1.5),), compensate=True)
        p = make_spec(jumps=(jc,), g="x")
        grid = build_grid(p, 3, 11, 5)
        q = build_jump_quadrature(p, grid, 0)
        f = grid.meshgrid()[0].copy()
        grad = (np.ones_like(f), np.zeros_like(f))
        np.testing.assert_allclose(apply_jump_operator(f, grad, q), 0.0, atol=1e-12)

    def test_positivity_at_zero_node(self):
        jc = atom_jump(gamma1="0.3", gamma2="0.1", gamma_bar="0.5")
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 9, 9)
        q = build_jump_quadrature(p, grid, 0)
        rng = np.random.default_rng(1)
        f = np.abs(rng.normal(size=(9, 9)))
        f[4, 4] = 0.0
        out = apply_jump_operator(f, None, q)
        assert out[4, 4] >= 0.0

    def test_bilinear_exactness(self):
        # exact on fields bilinear in (x, y) for interior destinations
        jc = atom_jump(gamma1="0.13", gamma2="0.07", gamma_bar="0.5", atoms=((0.0, 1.0),))
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 21, 21)
        q = build_jump_quadrature(p, grid, 0)
        X, Y = grid.meshgrid()
        f = 1.0 + 2.0 * X - 0.5 * Y + 3.0 * X * Y
        out = apply_jump_operator(f, None, q)
        dest = 1.0 + 2.0 * (X + 0.13) - 0.5 * (Y + 0.07) + 3.0 * (X + 0.13) * (Y + 0.07)
        expected = dest - f
        inside = q.components[0].inside[0]
        np.testing.assert_allclose(out[inside], expected[inside], atol=1e-12)

    def test_exact_expression_application(self):
        jc = atom_jump(gamma1="0.3", gamma2="0", gamma_bar="0.5", atoms=((0.0, 0.7),))
        p = make_spec(jumps=(jc,))
        grid = build_grid(p, 3, 9, 5)
        out = apply_jump_to_expression(parse("x*x"), p, grid, 0)
        X = grid.meshgrid()[0]
        np.testing.assert_allclose(out, 0.7 * ((X + 0.3) ** 2 - X**2), atol=1e-12)


class TestLevyReport:
    def test_small_gamma_bar(self):
        jc = atom_jump(gamma_bar="0.2", atoms=((0.0, 0.5),))
        rep = levy_integrability_report(jc)
        assert rep["sum_small"] == pytest.approx(0.5 * 0.04)
        assert rep["sum_gammabar"] == pytest.approx(0.1)
        assert rep["finite"]

    def test_large_gamma_bar_clipped(self):
        jc = atom_jump(gamma_bar="3", atoms=((0.0, 2.0),))
        rep = levy_integrability_report(jc)
        assert rep["sum_small"] == pytest.approx(2.0)
        assert rep["sum_gammabar"] == pytest.approx(2.0)

    def test_unevaluable_gamma_bar_not_finite(self):
        jc = atom_jump(gamma_bar="sqrt(xi1)", atoms=((-1.0, 0.5),))
        rep = levy_integrability_report(jc)
        assert not rep["finite"]
