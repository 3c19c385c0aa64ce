"""Direct numerical verification of the local continuity hypotheses.

Every checkable hypothesis behind the boundary-continuity theory is probed
on the verification window and reported as a catalog item with a status in
{pass, fail, unverifiable, not-applicable}, a numerical margin and a worst
witness node.  Genuinely undecidable statements (continuity of a field on
an open set, global boundedness on a truncated box) are reported as proxy
checks and labelled as such in the notes; "unverifiable" always carries a
reason and is never conflated with failure.

Catalog overview:

* A3.1.ii-*      positivity of the y-variance and finiteness of the
                 coefficient fields on the window.
* A3.1.iii-*     smoothness of the gain on the window, and positivity of
                 the x-slope of (generator gain) / beta2, whose measured
                 minimum is the empirical margin delta.
* A3.1.iv-dxu    monotonicity of the excess value in x on the window.
* A4.1-*         continuity proxy for the jump operator applied to the
                 excess value, and x-monotonicity of (Au)/beta2 on the
                 stop side of the surface.
* A4.3-*         compact atom support and bounded jump sizes.
* L4.4           integrability of the discretized mark measure.
* L4.5.a-d       sign and structure conditions on beta2, the jump maps
                 and the excess value that together imply A4.1.
* C4.6           x-free jump maps: the simplified derivative identity for
                 the jump operator is verified directly on the stop side.
* R4.7           the relaxed monotonicity condition: the excess value only
                 needs a nonnegative x-slope where jumps can land.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exprs, operators
from .exprs import DomainError, Expression, NonSmoothAtKink
from .model import Grid, ProblemSpec, Window, evaluate_field, local_coefficient_fields

__all__ = [
    "AssumptionReport",
    "CheckConfig",
    "CheckItem",
    "CATALOG",
    "NoEligibleNodes",
    "check_delta_condition",
    "check_coefficient_regularity",
    "check_jump_assumptions",
    "compute_h",
    "jump_derivative_identity",
    "run_catalog",
]

CATALOG = (
    "A3.1.ii-beta2pos",
    "A3.1.ii-regularity",
    "A3.1.iii-smooth-g",
    "A3.1.iii-delta",
    "A3.1.iv-dxu",
    "A4.1-Au-continuity-proxy",
    "A4.1-assA",
    "A4.3-support",
    "A4.3-gamma-bound",
    "L4.4-integrability",
    "L4.5.a",
    "L4.5.b",
    "L4.5.c",
    "L4.5.d",
    "C4.6-applicable",
    "R4.7-relaxed",
)


class NoEligibleNodes(ValueError):
    pass


@dataclass(frozen=True)
class CheckItem:
    id: str
    status: str  # pass | fail | unverifiable | not-applicable
    margin: float = 0.0
    witness: dict | None = None
    notes: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "status": self.status, "margin": self.margin,
                "witness": self.witness, "notes": self.notes}


@dataclass(frozen=True)
class AssumptionReport:
    items: tuple[CheckItem, ...]

    def __post_init__(self):
        ids = tuple(i.id for i in self.items)
        if ids != CATALOG:
            raise ValueError(f"catalog mismatch: {ids}")

    def by_id(self, item_id: str) -> CheckItem:
        for i in self.items:
            if i.id == item_id:
                return i
        raise KeyError(item_id)

    def failures(self) -> list[CheckItem]:
        return [i for i in self.items if i.status == "fail"]

    def to_dict(self) -> dict:
        return {"items": [i.to_dict() for i in self.items]}


@dataclass(frozen=True)
class CheckConfig:
    derivative_tol: float = 1e-5   # band around zero for one-signed derivative checks
    identity_tol: float = 1e-3     # derivative-identity discrepancy allowance
    growth_ratio: float = 1.8      # difference-quotient growth marking a discontinuity
    standoff_cells: int = 2        # distance from the surface for stop-side checks


def _witness(grid: Grid, k: int, i: int, j: int, **extra) -> dict:
    w = {"t": float(grid.t[k]), "x": float(grid.x[i]), "y": float(grid.y[j])}
    w.update(extra)
    return w


# --- submesh evaluation ----------------------------------------------------------
#
# All window-local checks evaluate expressions on the window submesh only:
# a kink or singularity elsewhere on the grid must not trip a local check.

@dataclass(frozen=True)
class _Submesh:
    kt: np.ndarray      # window time indices
    ix: np.ndarray      # window x indices
    jy: np.ndarray      # window y indices
    ix_ext: np.ndarray  # window x indices widened by one cell for central diffs
    X: np.ndarray       # (len(ix_ext), len(jy)) coordinates
    Y: np.ndarray
    grid: Grid

    def eval_at(self, e: Expression, k: int) -> np.ndarray:
        ctx = {"t": float(self.grid.t[k]), "x": self.X, "y": self.Y}
        v = exprs.evaluate(e, ctx)
        return np.broadcast_to(np.asarray(v, dtype=float), self.X.shape)

    def eval_marked(self, e: Expression, k: int, mark_ctx: dict) -> np.ndarray:
        ctx = {"t": float(self.grid.t[k]), "x": self.X, "y": self.Y, **mark_ctx}
        v = exprs.evaluate(e, ctx)
        return np.broadcast_to(np.asarray(v, dtype=float), self.X.shape)

    def witness_at(self, k: int, flat: int, **extra) -> dict:
        i, j = np.unravel_index(flat, self.X.shape)
        return _witness(self.grid, int(k), int(self.ix_ext[i]), int(self.jy[j]), **extra)


def _submesh(grid: Grid, window: Window) -> _Submesh:
    kt, ix, jy = window.indices(grid)
    ix_ext = np.arange(ix[0] - 1, ix[-1] + 2)
    X = grid.x[ix_ext][:, None] * np.ones((1, jy.size))
    Y = np.ones((ix_ext.size, 1)) * grid.y[jy][None, :]
    return _Submesh(kt, ix, jy, ix_ext, X, Y, grid)


def _coeff_fields_on(p: ProblemSpec, sm: _Submesh, k: int) -> dict[str, np.ndarray]:
    c = p.coefficients
    out = {
        "alpha1": sm.eval_at(c.alpha1, k),
        "alpha2": sm.eval_at(c.alpha2, k),
        "beta1": sm.eval_at(c.beta1, k),
        "beta2": sm.eval_at(c.beta2, k),
        "r": sm.eval_at(c.discount, k),
    }
    with np.errstate(invalid="ignore"):
        out["beta_bar"] = c.rho * np.sqrt(out["beta1"] * out["beta2"])
    return out


def _gain_jump_field(g_expr: Expression, dgx: Expression, dgy: Expression,
                     p: ProblemSpec, sm: _Submesh, k: int) -> np.ndarray:
    """(A g) on the submesh with exact destination evaluation."""
    t = float(sm.grid.t[k])
    base = sm.eval_at(g_expr, k)
    out = np.zeros_like(base)
    for jc in p.jumps:
        comp_x = np.zeros_like(base)
        comp_y = np.zeros_like(base)
        any_comp = False
        for atom in jc.atoms:
            mc = jc.mark_ctx(atom)
            g1 = sm.eval_marked(jc.gamma1, k, mc)
            g2 = sm.eval_marked(jc.gamma2, k, mc)
            moved = exprs.evaluate(g_expr, {"t": t, "x": sm.X + g1, "y": sm.Y + g2})
            moved = np.broadcast_to(np.asarray(moved, float), base.shape)
            out += atom.w * (moved - base)
            if jc.compensate_small_jumps and jc.gamma_bar_at(atom) < 1.0:
                any_comp = True
                comp_x += atom.w * g1
                comp_y += atom.w * g2
        if any_comp:
            out -= comp_x * sm.eval_at(dgx, k) + comp_y * sm.eval_at(dgy, k)
    return out


def compute_h(p: ProblemSpec, grid: Grid, window: Window,
              g_expr: Expression | None = None) -> tuple[_Submesh, np.ndarray]:
    """Field (d/dt + L - r) applied to the gain, over the window submesh.

    The time and space derivatives of the gain are exact (symbolic); the
    jump part evaluates the gain at the exact destinations.  Returns the
    submesh and a field of shape (len(kt), len(ix_ext), len(jy)); the x
    range is widened by one cell so consumers can form central x-slopes.
    """
    g_expr = g_expr if g_expr is not None else p.gain.g
    sm = _submesh(grid, window)
    d = exprs.differentiate
    gx, gy, gt = d(g_expr, "x"), d(g_expr, "y"), d(g_expr, "t")
    gxx, gyy, gxy = d(gx, "x"), d(gy, "y"), d(gx, "y")
    H = np.empty((sm.kt.size, sm.ix_ext.size, sm.jy.size))
    for n, k in enumerate(sm.kt):
        vals = {name: sm.eval_at(e, int(k))
                for name, e in (("g", g_expr), ("gt", gt), ("gx", gx), ("gy", gy),
                                ("gxx", gxx), ("gyy", gyy), ("gxy", gxy))}
        f = _coeff_fields_on(p, sm, int(k))
        H[n] = (vals["gt"]
                + f["beta1"] * vals["gxx"] + f["beta2"] * vals["gyy"]
                + 2.0 * f["beta_bar"] * vals["gxy"]
                + f["alpha1"] * vals["gx"] + f["alpha2"] * vals["gy"]
                - f["r"] * vals["g"])
        if p.jumps:
            H[n] += _gain_jump_field(g_expr, gx, gy, p, sm, int(k))
    return sm, H


# --- individual checks ----------------------------------------------------------

def check_coefficient_regularity(p: ProblemSpec, grid: Grid, window: Window,
                                 cfg: CheckConfig = CheckConfig()) -> list[CheckItem]:
    """Positivity of beta2 and finiteness of the coefficient fields on the window."""
    sm = _submesh(grid, window)
    c = p.coefficients

    beta2_item = None
    worst = (np.inf, None)
    try:
        for k in sm.kt:
            f = sm.eval_at(c.beta2, int(k))
            m = float(np.min(f))
            if m < worst[0]:
                worst = (m, sm.witness_at(int(k), int(np.argmin(f))))
        status = "pass" if worst[0] > 0 else "fail"
        beta2_item = CheckItem("A3.1.ii-beta2pos", status, margin=worst[0],
                               witness=worst[1])
    except exprs.EvalError as err:
        beta2_item = CheckItem("A3.1.ii-beta2pos", "fail", notes=f"not evaluable: {err}")

    exprs_to_check = [("alpha1", c.alpha1), ("alpha2", c.alpha2), ("beta1", c.beta1),
                      ("beta2", c.beta2), ("r", c.discount),
                      ("dx_beta1", exprs.differentiate(c.beta1, "x")),
                      ("dx_beta2", exprs.differentiate(c.beta2, "x"))]
    reg_item = None
    largest = 0.0
    for name, e in exprs_to_check:
        try:
            for k in sm.kt:
                f = sm.eval_at(e, int(k))
                if not np.all(np.isfinite(f)):
                    reg_item = CheckItem(
                        "A3.1.ii-regularity", "fail",
                        witness=sm.witness_at(int(k), int(np.argmax(~np.isfinite(f))),
                                              field=name),
                        notes=f"{name} is not finite on the window")
                    break
                largest = max(largest, float(np.max(np.abs(f))))
        except NonSmoothAtKink as err:
            reg_item = CheckItem("A3.1.ii-regularity", "fail",
                                 notes=f"{name} has a derivative kink on the window: {err}")
        except exprs.EvalError as err:
            reg_item = CheckItem("A3.1.ii-regularity", "fail",
                                 notes=f"{name}: {err}")
        if reg_item is not None:
            break
    if reg_item is None:
        reg_item = CheckItem("A3.1.ii-regularity", "pass", margin=largest,
                             notes="finiteness proxy for continuity; margin is the "
                                   "largest coefficient magnitude seen")
    return [beta2_item, reg_item]


def check_delta_condition(h_levels: np.ndarray, p: ProblemSpec, grid: Grid,
                          window: Window, sm: _Submesh | None = None,
                          cfg: CheckConfig = CheckConfig()) -> CheckItem:
    """Minimum central-difference x-slope of h/beta2 over the window.

    Passes when the minimum is strictly positive; the margin is the
    measured empirical slope floor (the delta the theory asks to exist).
    ``h_levels`` lives on the submesh returned by :func:`compute_h`.
    """
    sm = sm if sm is not None else _submesh(grid, window)
    margin = np.inf
    witness = None
    for n, k in enumerate(sm.kt):
        beta2 = sm.eval_at(p.coefficients.beta2, int(k))
        if np.any(beta2 <= 0):
            return CheckItem("A3.1.iii-delta", "unverifiable",
                             notes="beta2 is not strictly positive on the window")
        ratio = h_levels[n] / beta2
        slope = (ratio[2:, :] - ratio[:-2, :]) / (2 * grid.hx)
        m = float(np.min(slope))
        if m < margin:
            i, j = np.unravel_index(int(np.argmin(slope)), slope.shape)
            margin = m
            witness = _witness(grid, int(k), int(sm.ix_ext[i + 1]), int(sm.jy[j]))
    status = "pass" if margin > 0 else "fail"
    return CheckItem("A3.1.iii-delta", status, margin=margin, witness=witness)


def _dxu_min(u_field: np.ndarray, grid: Grid, kts, ixs, jys) -> tuple[float, dict]:
    worst = (np.inf, None)
    for k in kts:
        du = (u_field[k, ixs + 1][:, jys] - u_field[k, ixs - 1][:, jys]) / (2 * grid.hx)
        m = float(np.min(du))
        if m < worst[0]:
            i, j = np.unravel_index(int(np.argmin(du)), du.shape)
            worst = (m, _witness(grid, int(k), int(ixs[i]), int(jys[j])))
    return worst


def _stop_side_eligible(stop_mask: np.ndarray, window: Window, grid: Grid,
                        orientation: str, standoff: int) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Stopped window nodes at least ``standoff`` cells from the surface.

    Returns per-level (k, i-array, j-array) of eligible nodes.
    """
    kt, ix, jy = window.indices(grid)
    out = []
    toward = 1 if orientation == "continuation-above" else -1
    for k in kt:
        elig_i, elig_j = [], []
        for j in jy:
            col = stop_mask[k, :, j]
            for i in ix:
                ok = all(col[i + toward * s] for s in range(standoff + 1))
                if ok and col[i]:
                    elig_i.append(i)
                    elig_j.append(j)
        if elig_i:
            out.append((int(k), np.asarray(elig_i), np.asarray(elig_j)))
    return out


def _au_levels(u_field: np.ndarray, p: ProblemSpec, grid: Grid,
               kt: np.ndarray) -> list[np.ndarray]:
    """Jump operator applied to the excess-value field at window time levels."""
    time_dep = any("t" in exprs.free_vars(jc.gamma1) | exprs.free_vars(jc.gamma2)
                   for jc in p.jumps)
    quad = operators.build_jump_quadrature(p, grid, int(kt[0]))
    out = []
    for k in kt:
        if time_dep:
            quad = operators.build_jump_quadrature(p, grid, int(k))
        grad = (np.gradient(u_field[k], grid.hx, axis=0),
                np.gradient(u_field[k], grid.hy, axis=1))
        out.append(operators.apply_jump_operator(u_field[k], grad, quad))
    return out


def _cell_slopes_at_destinations(u_level: np.ndarray, grid: Grid,
                                 quad: operators.JumpQuadrature,
                                 sources: tuple[np.ndarray, np.ndarray]) -> list[tuple[float, int, int, int]]:
    """x-slope of the bilinear interpolant of u at each inside destination.

    Destinations landing exactly on a grid column take the worse (smaller)
    of the two adjacent cell slopes.  Returns (slope, src_i, src_j, atom).
    """
    si, sj = sources
    slopes = np.diff(u_level, axis=0) / grid.hx  # (nx-1, ny) cell slopes
    out = []
    for cq in quad.components:
        for m in range(len(cq.weights)):
            inside = cq.inside[m][si, sj]
            ci = cq.cell_i[m][si, sj]
            cj = cq.cell_j[m][si, sj]
            fx = cq.frac_x[m][si, sj]
            fy = cq.frac_y[m][si, sj]
            for n in range(si.size):
                if not inside[n]:
                    continue
                i, j, f_x, f_y = int(ci[n]), int(cj[n]), float(fx[n]), float(fy[n])
                blend = lambda ii: (1 - f_y) * slopes[ii, j] + f_y * slopes[ii, j + 1]
                s = blend(i)
                if f_x < 1e-9 and i > 0:
                    s = min(s, blend(i - 1))
                elif f_x > 1 - 1e-9 and i + 1 < slopes.shape[0]:
                    s = min(s, blend(i + 1))
                out.append((float(s), int(si[n]), int(sj[n]), m))
    return out


def check_jump_assumptions(p: ProblemSpec, grid: Grid, window: Window,
                           u_field: np.ndarray | None, stop_mask: np.ndarray | None,
                           cfg: CheckConfig = CheckConfig()) -> list[CheckItem]:
    """The jump-related catalog items (everything from A4.1 to R4.7)."""
    ids = ("A4.1-Au-continuity-proxy", "A4.1-assA", "A4.3-support", "A4.3-gamma-bound",
           "L4.4-integrability", "L4.5.a", "L4.5.b", "L4.5.c", "L4.5.d",
           "C4.6-applicable", "R4.7-relaxed")
    if not p.jumps:
        return [CheckItem(i, "not-applicable", notes="the problem has no jump component")
                for i in ids]
    items: dict[str, CheckItem] = {}
    sm = _submesh(grid, window)
    kt = sm.kt

    # A4.3-support: compact support of the discretized mark measure
    sup_norm = 0.0
    bad_atom = None
    for ci, jc in enumerate(p.jumps):
        for mi, a in enumerate(jc.atoms):
            norm = max(abs(v) for v in a.xi)
            if not np.isfinite(norm):
                bad_atom = {"component": ci, "atom": mi, "xi": [float(v) for v in a.xi]}
                break
            sup_norm = max(sup_norm, norm)
        if bad_atom:
            break
    if bad_atom:
        items["A4.3-support"] = CheckItem("A4.3-support", "fail", witness=bad_atom,
                                          notes="atom mark is not finite")
    else:
        items["A4.3-support"] = CheckItem("A4.3-support", "pass", margin=sup_norm,
                                          notes="largest atom mark magnitude")

    # A4.3-gamma-bound: sup of |gamma| over window nodes x atoms is finite
    gamma_ok = True
    sup_gamma = 0.0
    for ci, jc in enumerate(p.jumps):
        for mi, a in enumerate(jc.atoms):
            if not all(np.isfinite(v) for v in a.xi):
                continue
            try:
                for k in kt:
                    g1 = sm.eval_marked(jc.gamma1, int(k), jc.mark_ctx(a))
                    g2 = sm.eval_marked(jc.gamma2, int(k), jc.mark_ctx(a))
                    norm = np.hypot(g1, g2)
                    if not np.all(np.isfinite(norm)):
                        items["A4.3-gamma-bound"] = CheckItem(
                            "A4.3-gamma-bound", "fail",
                            witness=sm.witness_at(int(k), int(np.argmax(~np.isfinite(norm))),
                                                  component=ci, atom=mi),
                            notes="jump size is not finite at a window node")
                        gamma_ok = False
                        break
                    sup_gamma = max(sup_gamma, float(np.max(norm)))
            except exprs.EvalError as err:
                items["A4.3-gamma-bound"] = CheckItem(
                    "A4.3-gamma-bound", "fail", witness={"component": ci, "atom": mi},
                    notes=f"jump size not evaluable on the window: {err}")
                gamma_ok = False
            if not gamma_ok:
                break
        if not gamma_ok:
            break
    if gamma_ok:
        items["A4.3-gamma-bound"] = CheckItem("A4.3-gamma-bound", "pass", margin=sup_gamma,
                                              notes="largest jump norm on window x atoms")

    # L4.4: integrability sums of the discretized measure
    total = 0.0
    finite = True
    for jc in p.jumps:
        rep = operators.levy_integrability_report(jc)
        finite = finite and rep["finite"]
        total += rep["sum_gammabar"]
    items["L4.4-integrability"] = CheckItem(
        "L4.4-integrability", "pass" if finite else "fail", margin=total,
        notes="sum of weights * min(gamma_bar, 1) over the discretized measure")

    # L4.5.a: x-slope of beta2 nonpositive on the window (symbolic)
    try:
        dxb2 = exprs.differentiate(p.coefficients.beta2, "x")
        worst = -np.inf
        wit = None
        for k in kt:
            f = sm.eval_at(dxb2, int(k))
            m = float(np.max(f))
            if m > worst:
                worst, wit = m, sm.witness_at(int(k), int(np.argmax(f)))
        status = "pass" if worst <= cfg.derivative_tol else "fail"
        items["L4.5.a"] = CheckItem("L4.5.a", status, margin=-worst, witness=wit)
    except exprs.EvalError as err:
        items["L4.5.a"] = CheckItem("L4.5.a", "unverifiable", notes=str(err))

    # L4.5.b: d gamma1^(1) / dx >= -1 on window x atoms (symbolic)
    items["L4.5.b"] = _gamma_slope_item(p, sm, cfg, which="gamma1", item_id="L4.5.b")
    # L4.5.c: gamma1^(2) does not depend on x
    items["L4.5.c"] = _gamma_slope_item(p, sm, cfg, which="gamma2", item_id="L4.5.c")

    x_free = all("x" not in exprs.free_vars(jc.gamma1) | exprs.free_vars(jc.gamma2)
                 for jc in p.jumps)

    if u_field is None or stop_mask is None:
        reason = "no solve artifact supplied"
        for i in ("A4.1-Au-continuity-proxy", "A4.1-assA", "L4.5.d", "C4.6-applicable",
                  "R4.7-relaxed"):
            items[i] = CheckItem(i, "unverifiable", notes=reason)
        return [items[i] for i in ids]

    # L4.5.d: central-difference x-slope of u nonnegative on the whole grid
    all_k = np.arange(grid.nt - 1)  # the terminal level is the gain itself
    interior_i = np.arange(1, grid.nx - 1)
    interior_j = np.arange(0, grid.ny)
    m, wit = _dxu_min(u_field, grid, all_k, interior_i, interior_j)
    scale_u = max(1.0, float(np.max(np.abs(u_field))))
    items["L4.5.d"] = CheckItem("L4.5.d", "pass" if m >= -cfg.derivative_tol * scale_u
                                else "fail", margin=m, witness=wit)

    quad_errors = False
    try:
        au = _au_levels(u_field, p, grid, kt)
    except exprs.EvalError as err:
        quad_errors = True
        for i in ("A4.1-Au-continuity-proxy", "A4.1-assA", "C4.6-applicable",
                  "R4.7-relaxed"):
            items[i] = CheckItem(i, "unverifiable",
                                 notes=f"jump quadrature not available: {err}")
    if not quad_errors:
        items["A4.1-Au-continuity-proxy"] = _au_continuity_proxy(au, grid, kt, sm.ix,
                                                                 sm.jy, cfg)
        items["A4.1-assA"] = _ass_a_item(au, p, grid, window, stop_mask, cfg, kt)
        items["C4.6-applicable"] = _c46_item(au, u_field, p, grid, window, stop_mask,
                                             cfg, kt, x_free)
        items["R4.7-relaxed"] = _r47_item(u_field, p, grid, window, stop_mask, cfg, kt)

    return [items[i] for i in ids]


def _gamma_slope_item(p, sm: _Submesh, cfg, which, item_id) -> CheckItem:
    worst = 0.0  # per-coordinate slope of an x-free jump map
    wit = None
    for ci, jc in enumerate(p.jumps):
        e = jc.gamma1 if which == "gamma1" else jc.gamma2
        if "x" not in exprs.free_vars(e):
            continue  # structurally x-free: slope is identically zero
        de = exprs.differentiate(e, "x")
        for mi, a in enumerate(jc.atoms):
            if not all(np.isfinite(v) for v in a.xi):
                continue
            try:
                for k in sm.kt:
                    f = sm.eval_marked(de, int(k), jc.mark_ctx(a))
                    if item_id == "L4.5.b":
                        m = float(np.min(f))
                        if m < worst:
                            worst = m
                            wit = sm.witness_at(int(k), int(np.argmin(f)),
                                                component=ci, atom=mi)
                    else:
                        m = float(np.max(np.abs(f)))
                        if m > worst:
                            worst = m
                            wit = sm.witness_at(int(k), int(np.argmax(np.abs(f))),
                                                component=ci, atom=mi)
            except exprs.EvalError as err:
                return CheckItem(item_id, "unverifiable", notes=str(err))
    if item_id == "L4.5.b":
        margin = worst + 1.0
        status = "pass" if worst >= -1.0 - cfg.derivative_tol else "fail"
        return CheckItem(item_id, status, margin=margin, witness=wit,
                         notes="margin is 1 + min slope of the first jump coordinate")
    status = "pass" if worst <= cfg.derivative_tol else "fail"
    return CheckItem(item_id, status, margin=worst, witness=wit,
                     notes="largest |x-slope| of the second jump coordinate")


def _au_continuity_proxy(au, grid, kt, ix, jy, cfg) -> CheckItem:
    """Bounded difference quotients of Au under stencil-width doubling.

    A continuous Au has quotients that stabilize as the stencil widens; a
    jump makes the width-h quotient about twice the width-2h one.
    """
    worst_ratio = 0.0
    wit = None
    for n, k in enumerate(kt):
        f = au[n]
        if not np.all(np.isfinite(f)):
            i, j = np.unravel_index(int(np.argmax(~np.isfinite(f))), f.shape)
            return CheckItem("A4.1-Au-continuity-proxy", "fail",
                             witness=_witness(grid, int(k), int(i), int(j)),
                             notes="Au is not finite on the window")
        q1 = np.abs(f[ix + 1][:, jy] - f[ix - 1][:, jy]) / (2 * grid.hx)
        ix2 = ix[(ix >= 2) & (ix <= grid.nx - 3)]
        if ix2.size == 0:
            continue
        q2 = np.abs(f[ix2 + 2][:, jy] - f[ix2 - 2][:, jy]) / (4 * grid.hx)
        m1 = float(np.max(q1))
        m2 = float(np.max(q2))
        scale = max(1e-12, m2)
        ratio = m1 / scale if m1 > cfg.derivative_tol else 0.0
        if ratio > worst_ratio:
            i, j = np.unravel_index(int(np.argmax(q1)), q1.shape)
            worst_ratio, wit = ratio, _witness(grid, int(k), int(ix[i]), int(jy[j]))
    status = "pass" if worst_ratio <= cfg.growth_ratio else "fail"
    return CheckItem("A4.1-Au-continuity-proxy", status,
                     margin=cfg.growth_ratio - worst_ratio, witness=wit,
                     notes="proxy: difference-quotient growth under stencil doubling")


def _ass_a_item(au, p, grid, window, stop_mask, cfg, kt) -> CheckItem:
    eligible = _stop_side_eligible(stop_mask, window, grid, p.orientation,
                                   cfg.standoff_cells)
    if not eligible:
        return CheckItem("A4.1-assA", "unverifiable",
                         notes="no stop-side window nodes with the required standoff")
    level_of = {int(k): n for n, k in enumerate(kt)}
    worst = np.inf
    wit = None
    for k, ei, ej in eligible:
        beta2 = evaluate_field(p.coefficients.beta2, grid, int(k))
        if np.any(beta2[np.ix_(np.unique(np.concatenate([ei - 1, ei, ei + 1])),
                               np.unique(ej))] <= 0):
            return CheckItem("A4.1-assA", "unverifiable",
                             notes="beta2 is not strictly positive near eligible nodes")
        w = au[level_of[k]] / beta2
        slope = (w[ei + 1, ej] - w[ei - 1, ej]) / (2 * grid.hx)
        m = float(np.min(slope))
        if m < worst:
            n = int(np.argmin(slope))
            worst, wit = m, _witness(grid, int(k), int(ei[n]), int(ej[n]))
    scale = max(1.0, max(float(np.max(np.abs(a))) for a in au))
    status = "pass" if worst >= -cfg.derivative_tol * scale else "fail"
    return CheckItem("A4.1-assA", status, margin=worst, witness=wit)


def _c46_item(au, u_field, p, grid, window, stop_mask, cfg, kt, x_free) -> CheckItem:
    if not x_free:
        return CheckItem("C4.6-applicable", "not-applicable",
                         notes="jump sizes depend on x; the full slope conditions apply "
                               "instead of the simplified route")
    eligible = _stop_side_eligible(stop_mask, window, grid, p.orientation,
                                   cfg.standoff_cells)
    if not eligible:
        return CheckItem("C4.6-applicable", "unverifiable",
                         notes="no stop-side window nodes with the required standoff")
    level_of = {int(k): n for n, k in enumerate(kt)}
    worst = 0.0
    wit = None
    grad_scale = 1.0
    for k, ei, ej in eligible:
        quad = operators.build_jump_quadrature(p, grid, int(k))
        du = np.gradient(u_field[k], grid.hx, axis=0)
        grad_scale = max(grad_scale, float(np.max(np.abs(du))))
        rhs = np.zeros(ei.size)
        for cq in quad.components:
            for m in range(len(cq.weights)):
                vals = operators._bilinear(du, cq, m)[ei, ej]
                inside = cq.inside[m][ei, ej]
                rhs += np.where(inside, cq.weights[m] * vals, 0.0)
        a = au[level_of[k]]
        lhs = (a[ei + 1, ej] - a[ei - 1, ej]) / (2 * grid.hx)
        disc = np.abs(lhs - rhs)
        m = float(np.max(disc))
        if m > worst:
            n = int(np.argmax(disc))
            worst, wit = m, _witness(grid, int(k), int(ei[n]), int(ej[n]))
    status = "pass" if worst <= cfg.identity_tol * grad_scale else "fail"
    return CheckItem("C4.6-applicable", status, margin=worst, witness=wit,
                     notes="x-free jump maps: derivative identity discrepancy on the "
                           "stop side")


def _r47_item(u_field, p, grid, window, stop_mask, cfg, kt) -> CheckItem:
    eligible = _stop_side_eligible(stop_mask, window, grid, p.orientation, 0)
    if not eligible:
        return CheckItem("R4.7-relaxed", "unverifiable",
                         notes="no stopped nodes inside the window")
    worst = np.inf
    wit = None
    checked = 0
    for k, ei, ej in eligible:
        quad = operators.build_jump_quadrature(p, grid, int(k))
        slopes = _cell_slopes_at_destinations(u_field[k], grid, quad, (ei, ej))
        for s, si, sj, atom in slopes:
            checked += 1
            if s < worst:
                worst, wit = s, _witness(grid, int(k), int(si), int(sj), atom=atom)
    if checked == 0:
        return CheckItem("R4.7-relaxed", "unverifiable",
                         notes="all jump destinations from the stop side leave the box")
    scale = max(1.0, float(np.max(np.abs(u_field))))
    status = "pass" if worst >= -cfg.derivative_tol * scale else "fail"
    return CheckItem("R4.7-relaxed", status, margin=worst, witness=wit,
                     notes="min interpolant x-slope of u at reachable destinations")


def jump_derivative_identity(u_field: np.ndarray, p: ProblemSpec, grid: Grid,
                             window: Window, stop_mask: np.ndarray,
                             cfg: CheckConfig = CheckConfig()) -> float:
    """Max discrepancy between the difference-quotient x-slope of (Au) and
    the quadrature identity sum over atoms on the stop side of the surface.

    Eligible nodes are stopped window nodes with the configured standoff
    from the surface, where the excess value and its gradient vanish to
    solver tolerance.  Raises NoEligibleNodes when there are none.
    """
    eligible = _stop_side_eligible(stop_mask, window, grid, p.orientation,
                                   cfg.standoff_cells)
    if not eligible:
        raise NoEligibleNodes("stop region does not meet the window with standoff")
    worst = 0.0
    for k, ei, ej in eligible:
        quad = operators.build_jump_quadrature(p, grid, int(k))
        du = np.gradient(u_field[k], grid.hx, axis=0)
        grad = (du, np.gradient(u_field[k], grid.hy, axis=1))
        au = operators.apply_jump_operator(u_field[k], grad, quad)
        rhs = np.zeros(ei.size)
        for jc, cq in zip(p.jumps, quad.components):
            dgamma = (exprs.differentiate(jc.gamma1, "x")
                      if "x" in exprs.free_vars(jc.gamma1) else None)
            X, Y = grid.meshgrid()
            for m in range(len(cq.weights)):
                vals = operators._bilinear(du, cq, m)[ei, ej]
                if dgamma is not None:
                    ctx = {"t": float(grid.t[k]), "x": X, "y": Y, **jc.mark_ctx(jc.atoms[m])}
                    slope = np.broadcast_to(
                        np.asarray(exprs.evaluate(dgamma, ctx), float), X.shape)[ei, ej]
                else:
                    slope = 0.0
                inside = cq.inside[m][ei, ej]
                rhs += np.where(inside, cq.weights[m] * vals * (1.0 + slope), 0.0)
        lhs = (au[ei + 1, ej] - au[ei - 1, ej]) / (2 * grid.hx)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def run_catalog(p: ProblemSpec, grid: Grid, window: Window,
                u_field: np.ndarray | None = None,
                stop_mask: np.ndarray | None = None,
                cfg: CheckConfig = CheckConfig()) -> AssumptionReport:
    """Run every catalog item and assemble the report.

    ``u_field`` and ``stop_mask`` come from a completed solve (or are
    manufactured in tests); without them the value-dependent items report
    unverifiable.
    """
    items: list[CheckItem] = []
    items.extend(check_coefficient_regularity(p, grid, window, cfg))

    beta2_ok = items[0].status == "pass"
    H = sm_h = None
    try:
        sm_h, H = compute_h(p, grid, window)
        smooth = CheckItem("A3.1.iii-smooth-g", "pass",
                           notes="no kink or domain violation while forming the "
                                 "symbolic generator of the gain")
        h_ok = True
    except NonSmoothAtKink as err:
        smooth = CheckItem("A3.1.iii-smooth-g", "fail", notes=str(err))
        h_ok = False
    except exprs.EvalError as err:
        # the gain itself may be fine; the generator needs every coefficient
        smooth = CheckItem("A3.1.iii-smooth-g", "unverifiable",
                           notes=f"generator not evaluable on the window: {err}")
        h_ok = False
    items.append(smooth)

    if h_ok and beta2_ok:
        items.append(check_delta_condition(H, p, grid, window, sm_h, cfg))
    else:
        reason = ("beta2 is not strictly positive on the window" if not beta2_ok
                  else "the generator of the gain is not available")
        items.append(CheckItem("A3.1.iii-delta", "unverifiable", notes=reason))

    if u_field is not None:
        kt_w, ix, jy = window.indices(grid)
        m, wit = _dxu_min(u_field, grid, kt_w, ix, jy)
        scale_u = max(1.0, float(np.max(np.abs(u_field))))
        status = "pass" if m >= -cfg.derivative_tol * scale_u else "fail"
        items.append(CheckItem("A3.1.iv-dxu", status, margin=m, witness=wit))
    else:
        items.append(CheckItem("A3.1.iv-dxu", "unverifiable",
                               notes="no solve artifact supplied"))

    items.extend(check_jump_assumptions(p, grid, window, u_field, stop_mask, cfg))
    return AssumptionReport(tuple(items))
