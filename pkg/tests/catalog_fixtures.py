"""One dedicated violation fixture per hypothesis-catalog item.

Each fixture is a small problem (plus a manufactured excess-value field and
stop mask where needed) designed so that exactly one catalog item fails;
every other item passes or is unverifiable / not-applicable.  Fixtures for
items that do not involve jumps omit the jump component entirely so the
jump items report not-applicable rather than accidentally failing.
"""

import numpy as np

from helpers import atom_jump, make_spec
from stopsurf.model import FarField, FarFieldRule, Window, build_grid

LIN = FarFieldRule("linear")
ALL_LINEAR = FarField(x_lo=LIN, x_hi=LIN, y_lo=LIN, y_hi=LIN)

WINDOW = Window(0.1, 0.4, 0.15, 0.85, -0.35, 0.35)
GRID_SHAPE = (26, 41, 41)
ACTIVATION_TOL = 1e-7  # matches the default solver band for a unit-scale gain


def base_spec(alpha1="y + 0.15*x", beta2="0.1", r="0.05", g="x", jumps=()):
    return make_spec(alpha1=alpha1, alpha2="0.2*(1 - y)", beta1="0.05", beta2=beta2,
                     r=r, g=g, jumps=tuple(jumps), box=(0.0, 1.0, -0.5, 0.5),
                     horizon=0.5, far_field=ALL_LINEAR)


def const_jump(**kw):
    args = dict(gamma1="0.05", gamma2="0", gamma_bar="0.05", atoms=((0.0, 0.5),))
    args.update(kw)
    return atom_jump(**args)


def _u_tensor(grid, fn):
    X, Y = grid.meshgrid()
    u = np.broadcast_to(fn(X, Y), (grid.nx, grid.ny)).astype(float)
    return np.repeat(u[None, :, :], grid.nt, axis=0)


def u_default(grid):
    """Smooth-fit shaped field: zero below x*=0.55, quadratic above."""
    return _u_tensor(grid, lambda X, Y: np.maximum(X - 0.55, 0.0) ** 2)


def u_linear(grid):
    return _u_tensor(grid, lambda X, Y: 0.1 * X)


def _u_step(grid):
    X, _ = grid.meshgrid()
    return u_default(grid) + 0.3 * (X >= 0.7 - 1e-12)[None, :, :]


def _u_low_dip(grid):
    return _u_tensor(grid, lambda X, Y: np.maximum(X - 0.55, 0.0) ** 2
                     + 0.05 * np.maximum(0.1 - X, 0.0) ** 2)


def _u_high_boundary(grid):
    return _u_tensor(grid, lambda X, Y: np.maximum(X - 0.9, 0.0) ** 2)


def _u_decreasing(grid):
    return _u_tensor(grid, lambda X, Y: 0.5 - 0.2 * X)


def _u_zigzag(grid):
    """Quadratic base plus an alternating-node ripple from node 5 upward.

    The ripple cancels in every central difference (it is parity-constant
    on each parity class) but flips the sign of alternate cell slopes, so
    only the reachable-set check can see it.
    """
    base = u_default(grid)
    ripple = np.zeros(grid.nx)
    idx = np.arange(grid.nx)
    ripple[(idx >= 5) & (idx % 2 == 1)] = 1e-5
    return base + ripple[None, :, None]


# item id -> (spec builder kwargs resolved to a spec, u builder, mask mode)
# mask modes: "from_u" thresholds the field; "inject" claims {x <= 0.55}
_FIXTURES = {
    "A3.1.ii-beta2pos": (
        # the y-variance changes sign inside the window
        lambda: base_spec(beta2="0.1 - 0.4*y"), u_default, "from_u"),
    "A3.1.ii-regularity": (
        # discount blows up at a window node (x = 0.5 is on the grid)
        lambda: base_spec(r="1/(x - 0.5)"), u_default, "from_u"),
    "A3.1.iii-smooth-g": (
        # gain kink inside the window
        lambda: base_spec(g="x + pos(x - 0.5)"), u_default, "from_u"),
    "A3.1.iii-delta": (
        # drift turned around: the generator of the gain decreases in x
        lambda: base_spec(alpha1="y - 0.2*x"), u_default, "from_u"),
    "A3.1.iv-dxu": (
        # excess value decreasing in x on the window; no jumps involved
        lambda: base_spec(), _u_decreasing, "from_u"),
    "A4.1-Au-continuity-proxy": (
        # a step in u on the continuation side: Au inherits the jump and its
        # difference quotients grow under stencil refinement
        lambda: base_spec(jumps=(const_jump(),)), _u_step, "from_u"),
    "A4.1-assA": (
        # x-shrinking jumps against a non-flat claimed stop region push the
        # x-slope of (Au)/beta2 negative while the slope conditions all hold
        lambda: base_spec(alpha1="y + 0.4*x",
                          jumps=(const_jump(gamma1="0.05 - 0.5*(x - 0.3)",
                                            gamma_bar="0.4"),)),
        u_linear, "inject"),
    "A4.3-support": (
        # a non-finite atom mark; the jump maps ignore the mark entirely
        lambda: base_spec(jumps=(const_jump(atoms=((float("inf"), 0.5),)),)),
        u_default, "from_u"),
    "A4.3-gamma-bound": (
        # jump size not evaluable on part of the window
        lambda: base_spec(jumps=(const_jump(gamma1="0.05*log(x - 0.45)",
                                            gamma_bar="1000"),)),
        u_default, "from_u"),
    "L4.4-integrability": (
        # gamma_bar not evaluable at its atom: the measure sums are not finite
        lambda: base_spec(jumps=(const_jump(gamma_bar="sqrt(xi1)",
                                            atoms=((-1.0, 0.5),)),)),
        u_default, "from_u"),
    "L4.5.a": (
        # y-variance increasing in x (gently, so the slope floor survives)
        lambda: base_spec(beta2="0.1 + 0.001*x", jumps=(const_jump(),)),
        u_default, "from_u"),
    "L4.5.b": (
        # first jump coordinate shrinks faster than -1 in x; the stop region
        # sits high so every destination still lands where u vanishes
        lambda: base_spec(alpha1="y + 0.9*x",
                          jumps=(const_jump(gamma1="-1.5*(x - 0.5)",
                                            gamma_bar="0.8"),)),
        _u_high_boundary, "from_u"),
    "L4.5.c": (
        # second jump coordinate depends on x
        lambda: base_spec(jumps=(const_jump(gamma2="0.05*x", gamma_bar="0.5"),)),
        u_default, "from_u"),
    "L4.5.d": (
        # u dips below the window and out of reach of any jump
        lambda: base_spec(jumps=(const_jump(),)), _u_low_dip, "from_u"),
    "C4.6-applicable": (
        # x-free jumps but a claimed stop region where u is not flat: the
        # simplified derivative identity cannot hold there
        lambda: base_spec(jumps=(const_jump(),)), u_linear, "inject"),
    "R4.7-relaxed": (
        # parity ripple: invisible to every central difference, but the
        # interpolant slope at jump destinations goes negative
        lambda: base_spec(jumps=(const_jump(),)), _u_zigzag, "inject"),
}


def materialize(item_id):
    """Build (spec, grid, window, u_field, stop_mask) ready for run_catalog."""
    spec_fn, u_fn, mask_mode = _FIXTURES[item_id]
    spec = spec_fn()
    grid = build_grid(spec, *GRID_SHAPE)
    u = u_fn(grid)
    if mask_mode == "from_u":
        mask = u <= ACTIVATION_TOL
    else:
        X, _ = grid.meshgrid()
        mask = np.repeat((X <= 0.55 + 1e-12)[None, :, :], grid.nt, axis=0)
    return spec, grid, WINDOW, u, mask


ALL_IDS = tuple(_FIXTURES)
