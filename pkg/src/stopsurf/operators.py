"""Discrete local generator and nonlocal jump operator.

The local stencil realizes

    beta1 Dxx + beta2 Dyy + 2 beta_bar Dxy + alpha1 Dx + alpha2 Dy - r

on a uniform grid: central second-order differences where the cell Peclet
number allows, first-order upwind for the drift terms otherwise.  The
mixed derivative uses the 4-corner centered stencil; its monotonicity
degrades as |rho| approaches 1 (validate_spec warns above 0.95).

The jump operator is applied against a measure that has been discretized
to finitely many atoms.  For every grid node and atom the post-jump
destination, its bilinear interpolation weights and the small-jump
compensation drift are precomputed once per time level.  Destinations
outside the truncated box are valued by the far-field rule of the face
they cross (x faces take precedence over y faces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exprs
from .model import Grid, JumpComponent, ProblemSpec, local_coefficient_fields

__all__ = [
    "LocalStencil",
    "JumpQuadrature",
    "ComponentQuadrature",
    "apply_jump_operator",
    "apply_jump_to_expression",
    "apply_local_generator",
    "build_jump_quadrature",
    "build_local_stencil",
    "build_local_stencil_at",
    "levy_integrability_report",
    "pad_field",
]

PECLET_THRESHOLD = 1.0


@dataclass(frozen=True)
class LocalStencil:
    """Per-node coefficients of the 9-point stencil, first axis x, second y."""

    center: np.ndarray
    east: np.ndarray
    west: np.ndarray
    north: np.ndarray
    south: np.ndarray
    ne: np.ndarray
    nw: np.ndarray
    se: np.ndarray
    sw: np.ndarray
    upwind_x: np.ndarray  # bool mask of nodes where x-drift is upwinded
    upwind_y: np.ndarray
    hx: float
    hy: float

    def offdiagonal_sum(self) -> np.ndarray:
        return (np.abs(self.east) + np.abs(self.west) + np.abs(self.north)
                + np.abs(self.south) + np.abs(self.ne) + np.abs(self.nw)
                + np.abs(self.se) + np.abs(self.sw))


def build_local_stencil(fields: dict[str, np.ndarray], hx: float, hy: float,
                        peclet_threshold: float = PECLET_THRESHOLD) -> LocalStencil:
    """Assemble the stencil from evaluated coefficient fields."""
    a1, a2 = fields["alpha1"], fields["alpha2"]
    b1, b2, bb = fields["beta1"], fields["beta2"], fields["beta_bar"]
    r = fields["r"]
    shape = np.broadcast(a1, b1).shape
    zeros = lambda: np.zeros(shape)
    center, east, west, north, south = zeros(), zeros(), zeros(), zeros(), zeros()

    # second derivatives, central
    center -= 2.0 * b1 / hx**2 + 2.0 * b2 / hy**2
    east += b1 / hx**2
    west += b1 / hx**2
    north += b2 / hy**2
    south += b2 / hy**2

    # mixed derivative, 4-corner centered
    cross = bb / (2.0 * hx * hy)
    ne = +cross.copy()
    sw = +cross.copy()
    nw = -cross.copy()
    se = -cross.copy()

    # drift terms: central unless the cell Peclet number exceeds the threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        pe_x = np.where(b1 > 0, np.abs(a1) * hx / (2.0 * b1), np.inf)
        pe_y = np.where(b2 > 0, np.abs(a2) * hy / (2.0 * b2), np.inf)
    upwind_x = (pe_x > peclet_threshold) & (a1 != 0)
    upwind_y = (pe_y > peclet_threshold) & (a2 != 0)

    central_x = ~upwind_x
    east += np.where(central_x, a1 / (2.0 * hx), 0.0)
    west -= np.where(central_x, a1 / (2.0 * hx), 0.0)
    pos_x = upwind_x & (a1 > 0)
    neg_x = upwind_x & (a1 < 0)
    east += np.where(pos_x, a1 / hx, 0.0)
    center -= np.where(pos_x, a1 / hx, 0.0)
    west += np.where(neg_x, -a1 / hx, 0.0)
    center += np.where(neg_x, a1 / hx, 0.0)

    central_y = ~upwind_y
    north += np.where(central_y, a2 / (2.0 * hy), 0.0)
    south -= np.where(central_y, a2 / (2.0 * hy), 0.0)
    pos_y = upwind_y & (a2 > 0)
    neg_y = upwind_y & (a2 < 0)
    north += np.where(pos_y, a2 / hy, 0.0)
    center -= np.where(pos_y, a2 / hy, 0.0)
    south += np.where(neg_y, -a2 / hy, 0.0)
    center += np.where(neg_y, a2 / hy, 0.0)

    center = center - r

    return LocalStencil(center, east, west, north, south, ne, nw, se, sw,
                        upwind_x, upwind_y, hx, hy)


def build_local_stencil_at(p: ProblemSpec, grid: Grid, t_index: int) -> LocalStencil:
    return build_local_stencil(local_coefficient_fields(p, grid, t_index), grid.hx, grid.hy)


def apply_local_generator(f_padded: np.ndarray, stencil: LocalStencil) -> np.ndarray:
    """(L - r) f on the grid; ``f_padded`` carries a one-cell ghost ring."""
    f = f_padded
    return (stencil.center * f[1:-1, 1:-1]
            + stencil.east * f[2:, 1:-1] + stencil.west * f[:-2, 1:-1]
            + stencil.north * f[1:-1, 2:] + stencil.south * f[1:-1, :-2]
            + stencil.ne * f[2:, 2:] + stencil.nw * f[:-2, 2:]
            + stencil.se * f[2:, :-2] + stencil.sw * f[:-2, :-2])


def pad_field(f: np.ndarray, p: ProblemSpec, grid: Grid, t_index: int) -> np.ndarray:
    """Surround a grid field with a one-cell ghost ring from the far-field rules."""
    nx, ny = grid.nx, grid.ny
    out = np.empty((nx + 2, ny + 2))
    out[1:-1, 1:-1] = f
    t = float(grid.t[t_index])

    def rule_values(rule, xs, ys):
        e = p.gain.g if rule.kind == "gain" else rule.expression
        v = exprs.evaluate(e, {"t": t, "x": xs, "y": ys})
        return np.broadcast_to(np.asarray(v, dtype=float), np.broadcast(xs, ys).shape)

    # y faces first (inner x range), then x faces across the full padded height
    for j_ghost, j_edge, j_next, rule, yg in (
            (0, 1, 2, p.far_field.y_lo, grid.y[0] - grid.hy),
            (ny + 1, ny, ny - 1, p.far_field.y_hi, grid.y[-1] + grid.hy)):
        if rule.kind == "linear":
            out[1:-1, j_ghost] = 2.0 * out[1:-1, j_edge] - out[1:-1, j_next]
        else:
            out[1:-1, j_ghost] = rule_values(rule, grid.x, yg)

    ypad = np.concatenate(([grid.y[0] - grid.hy], grid.y, [grid.y[-1] + grid.hy]))
    for i_ghost, i_edge, i_next, rule, xg in (
            (0, 1, 2, p.far_field.x_lo, grid.x[0] - grid.hx),
            (nx + 1, nx, nx - 1, p.far_field.x_hi, grid.x[-1] + grid.hx)):
        if rule.kind == "linear":
            out[i_ghost, :] = 2.0 * out[i_edge, :] - out[i_next, :]
        else:
            out[i_ghost, :] = rule_values(rule, xg, ypad)
    return out


# --- jump operator -------------------------------------------------------------

@dataclass(frozen=True)
class ComponentQuadrature:
    weights: np.ndarray        # (M,)
    dest_x: np.ndarray         # (M, nx, ny)
    dest_y: np.ndarray
    inside: np.ndarray         # (M, nx, ny) bool, destination within the box
    cell_i: np.ndarray         # (M, nx, ny) int, clipped bilinear cell indices
    cell_j: np.ndarray
    frac_x: np.ndarray         # fractional coordinates; outside [0,1] extrapolates
    frac_y: np.ndarray
    compensated: np.ndarray    # (M,) bool, atom enters the compensation drift
    comp_x: np.ndarray         # (nx, ny) compensation drift vector
    comp_y: np.ndarray


@dataclass(frozen=True)
class JumpQuadrature:
    components: tuple[ComponentQuadrature, ...]
    grid: Grid
    t: float
    spec: ProblemSpec

    def any_outside(self) -> bool:
        return any(not np.all(c.inside) for c in self.components)


def build_jump_quadrature(p: ProblemSpec, grid: Grid, t_index: int) -> JumpQuadrature:
    """Precompute destinations, weights and compensation for every node/atom."""
    X, Y = grid.meshgrid()
    t = float(grid.t[t_index])
    eps_x = 1e-12 * (grid.x[-1] - grid.x[0])
    eps_y = 1e-12 * (grid.y[-1] - grid.y[0])
    comps = []
    for jc in p.jumps:
        M = len(jc.atoms)
        weights = np.array([a.w for a in jc.atoms])
        dest_x = np.empty((M, grid.nx, grid.ny))
        dest_y = np.empty((M, grid.nx, grid.ny))
        compensated = np.zeros(M, dtype=bool)
        comp_x = np.zeros((grid.nx, grid.ny))
        comp_y = np.zeros((grid.nx, grid.ny))
        for m, atom in enumerate(jc.atoms):
            ctx = {"t": t, "x": X, "y": Y, **jc.mark_ctx(atom)}
            g1 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma1, ctx), float), X.shape)
            g2 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma2, ctx), float), X.shape)
            dest_x[m] = X + g1
            dest_y[m] = Y + g2
            if jc.compensate_small_jumps and jc.gamma_bar_at(atom) < 1.0:
                compensated[m] = True
                comp_x += atom.w * g1
                comp_y += atom.w * g2
        inside = ((dest_x >= grid.x[0] - eps_x) & (dest_x <= grid.x[-1] + eps_x)
                  & (dest_y >= grid.y[0] - eps_y) & (dest_y <= grid.y[-1] + eps_y))
        gx = (dest_x - grid.x[0]) / grid.hx
        gy = (dest_y - grid.y[0]) / grid.hy
        cell_i = np.clip(np.floor(gx).astype(np.int64), 0, grid.nx - 2)
        cell_j = np.clip(np.floor(gy).astype(np.int64), 0, grid.ny - 2)
        comps.append(ComponentQuadrature(
            weights, dest_x, dest_y, inside, cell_i, cell_j,
            gx - cell_i, gy - cell_j, compensated, comp_x, comp_y))
    return JumpQuadrature(tuple(comps), grid, t, p)


def _bilinear(f: np.ndarray, cq: ComponentQuadrature, m: int) -> np.ndarray:
    i, j = cq.cell_i[m], cq.cell_j[m]
    fx, fy = cq.frac_x[m], cq.frac_y[m]
    return ((1 - fx) * (1 - fy) * f[i, j] + fx * (1 - fy) * f[i + 1, j]
            + (1 - fx) * fy * f[i, j + 1] + fx * fy * f[i + 1, j + 1])


def _far_field_values(q: JumpQuadrature, f: np.ndarray, cq: ComponentQuadrature,
                      m: int) -> np.ndarray:
    """Values at destinations outside the box, by the crossed face's rule."""
    p, grid = q.spec, q.grid
    dx, dy = cq.dest_x[m], cq.dest_y[m]
    out = np.empty_like(dx)
    crossed_x_lo = dx < grid.x[0]
    crossed_x_hi = dx > grid.x[-1]
    crossed_y = ~(crossed_x_lo | crossed_x_hi)

    def fill(mask, rule):
        if not np.any(mask):
            return
        if rule.kind == "linear":
            # bilinear formula with clipped cell extrapolates linearly
            out[mask] = _bilinear(f, cq, m)[mask]
        else:
            e = p.gain.g if rule.kind == "gain" else rule.expression
            out[mask] = np.broadcast_to(
                np.asarray(exprs.evaluate(e, {"t": q.t, "x": dx[mask], "y": dy[mask]}), float),
                dx[mask].shape)

    fill(crossed_x_lo, p.far_field.x_lo)
    fill(crossed_x_hi, p.far_field.x_hi)
    fill(crossed_y & (dy < grid.y[0]), p.far_field.y_lo)
    fill(crossed_y & (dy > grid.y[-1]), p.far_field.y_hi)
    return out


def apply_jump_operator(f: np.ndarray, grad_f: tuple[np.ndarray, np.ndarray] | None,
                        q: JumpQuadrature) -> np.ndarray:
    """(A f) on the grid from the precomputed quadrature.

    ``grad_f = (df/dx, df/dy)`` is required whenever any atom is compensated.
    """
    out = np.zeros_like(f)
    for cq in q.components:
        for m in range(len(cq.weights)):
            vals = _bilinear(f, cq, m)
            if not np.all(cq.inside[m]):
                far = _far_field_values(q, f, cq, m)
                vals = np.where(cq.inside[m], vals, far)
            out += cq.weights[m] * (vals - f)
        if np.any(cq.compensated):
            if grad_f is None:
                raise ValueError("grad_f is required when atoms are compensated")
            out -= cq.comp_x * grad_f[0] + cq.comp_y * grad_f[1]
    return out


def apply_jump_to_expression(e: exprs.Expression, p: ProblemSpec, grid: Grid,
                             t_index: int) -> np.ndarray:
    """(A e) with destination values evaluated exactly from the expression.

    Used when the integrand is known in closed form (the gain), avoiding
    interpolation error entirely; the measure itself is the atom sum.
    """
    X, Y = grid.meshgrid()
    t = float(grid.t[t_index])
    base = np.broadcast_to(np.asarray(exprs.evaluate(e, {"t": t, "x": X, "y": Y}), float),
                           X.shape)
    out = np.zeros_like(base)
    dex = dey = None
    for jc in p.jumps:
        comp_x = np.zeros_like(base)
        comp_y = np.zeros_like(base)
        any_comp = False
        for atom in jc.atoms:
            ctx = {"t": t, "x": X, "y": Y, **jc.mark_ctx(atom)}
            g1 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma1, ctx), float), X.shape)
            g2 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma2, ctx), float), X.shape)
            moved = np.broadcast_to(
                np.asarray(exprs.evaluate(e, {"t": t, "x": X + g1, "y": Y + g2}), float),
                X.shape)
            out += atom.w * (moved - base)
            if jc.compensate_small_jumps and jc.gamma_bar_at(atom) < 1.0:
                any_comp = True
                comp_x += atom.w * g1
                comp_y += atom.w * g2
        if any_comp:
            if dex is None:
                dex = np.broadcast_to(np.asarray(exprs.evaluate(
                    exprs.differentiate(e, "x"), {"t": t, "x": X, "y": Y}), float), X.shape)
                dey = np.broadcast_to(np.asarray(exprs.evaluate(
                    exprs.differentiate(e, "y"), {"t": t, "x": X, "y": Y}), float), X.shape)
            out -= comp_x * dex + comp_y * dey
    return out


def levy_integrability_report(jc: JumpComponent) -> dict:
    """Discretized-measure sums used by the integrability hypothesis check."""
    sum_small = 0.0
    sum_gammabar = 0.0
    for a in jc.atoms:
        gb = jc.gamma_bar_at(a)
        if np.isnan(gb):
            sum_small = sum_gammabar = float("nan")
            break
        sum_small += a.w * min(gb * gb, 1.0)
        sum_gammabar += a.w * min(gb, 1.0)
    return {
        "sum_small": sum_small,
        "sum_gammabar": sum_gammabar,
        "finite": bool(np.isfinite(sum_small) and np.isfinite(sum_gammabar)),
    }
