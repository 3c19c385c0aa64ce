"""Problem definition: coefficients, gain, jump components, domain and grids.

A :class:`ProblemSpec` is the complete description of one stopping problem
on a truncated rectangular state box.  All scalar fields are expressions in
``(t, x, y)``; jump maps additionally see the mark variables ``xi1..xiD``.
Specs and grids are immutable after construction and safe to share.

The state space is always a truncated rectangle, so far-field behaviour at
each face is part of the problem contract (value the gain there, value a
user expression, or extrapolate linearly).  The mirrored orientation, with
the continuation region below the boundary, is handled by reflecting the
problem in ``x`` rather than by duplicated solver paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import exprs
from .exprs import DomainError, Expression, Num, Unary, Var

__all__ = [
    "Atom",
    "CoefficientSet",
    "Diagnostic",
    "FarField",
    "FarFieldRule",
    "GainSpec",
    "Grid",
    "InvalidCounts",
    "JumpComponent",
    "ProblemSpec",
    "Window",
    "WindowError",
    "build_grid",
    "discretize_density",
    "evaluate_field",
    "local_coefficient_fields",
    "mark_vars",
    "reflect_spec",
    "reflect_window",
    "validate_spec",
]

ORIENTATIONS = ("continuation-above", "continuation-below")
COEFF_VARS = ("t", "x", "y")


class InvalidCounts(ValueError):
    pass


class WindowError(ValueError):
    pass


def mark_vars(mark_dim: int) -> tuple[str, ...]:
    return tuple(f"xi{i + 1}" for i in range(mark_dim))


@dataclass(frozen=True)
class CoefficientSet:
    """Local-generator data: drifts, squared diffusions, correlation, discount.

    The cross coefficient is always derived as rho*sqrt(beta1*beta2) at
    evaluation time and never stored independently.
    """

    alpha1: Expression
    alpha2: Expression
    beta1: Expression
    beta2: Expression
    rho: float
    discount: Expression
    running_cost: Expression | None = None


@dataclass(frozen=True)
class GainSpec:
    g: Expression
    terminal: Expression | None = None

    def terminal_expr(self) -> Expression:
        return self.terminal if self.terminal is not None else self.g


@dataclass(frozen=True)
class Atom:
    xi: tuple[float, ...]
    w: float


@dataclass(frozen=True)
class JumpComponent:
    """One finite-activity jump component with a discretized mark measure."""

    gamma1: Expression
    gamma2: Expression
    mark_dim: int
    atoms: tuple[Atom, ...]
    gamma_bar: Expression
    compensate_small_jumps: bool = False

    def total_mass(self) -> float:
        return float(sum(a.w for a in self.atoms))

    def mark_ctx(self, atom: Atom) -> dict[str, float]:
        return {name: atom.xi[i] for i, name in enumerate(mark_vars(self.mark_dim))}

    def gamma_bar_at(self, atom: Atom) -> float:
        try:
            return float(exprs.evaluate(self.gamma_bar, self.mark_ctx(atom)))
        except exprs.EvalError:
            return float("nan")


def discretize_density(density: Expression, interval: tuple[float, float],
                       n_nodes: int, mark_dim: int = 1) -> tuple[Atom, ...]:
    """Convert a 1D mark density into atoms by Gauss-Legendre quadrature."""
    if mark_dim != 1:
        raise ValueError("density measures support mark_dim=1 only; use an atom list otherwise")
    a, b = interval
    if not a < b:
        raise ValueError("density truncation interval must be nonempty")
    nodes, weights = np.polynomial.legendre.leggauss(int(n_nodes))
    xi = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    w = 0.5 * (b - a) * weights * np.asarray(
        [float(exprs.evaluate(density, {"xi1": float(v)})) for v in xi])
    atoms = [Atom((float(v),), float(wk)) for v, wk in zip(xi, w) if wk > 0.0]
    if not atoms:
        raise ValueError("density discretization produced no positive-weight atoms")
    return tuple(atoms)


@dataclass(frozen=True)
class FarFieldRule:
    kind: str  # gain | expression | linear
    expression: Expression | None = None

    def __post_init__(self):
        if self.kind not in ("gain", "expression", "linear"):
            raise ValueError(f"unknown far-field rule {self.kind!r}")
        if self.kind == "expression" and self.expression is None:
            raise ValueError("far-field rule 'expression' needs an expression")


GAIN_RULE = FarFieldRule("gain")


@dataclass(frozen=True)
class FarField:
    x_lo: FarFieldRule = GAIN_RULE
    x_hi: FarFieldRule = GAIN_RULE
    y_lo: FarFieldRule = GAIN_RULE
    y_hi: FarFieldRule = GAIN_RULE


@dataclass(frozen=True)
class ProblemSpec:
    coefficients: CoefficientSet
    gain: GainSpec
    jumps: tuple[JumpComponent, ...]
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    horizon: float
    orientation: str = "continuation-above"
    far_field: FarField = field(default_factory=FarField)

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("x_lo must be below x_hi")
        if not self.y_lo < self.y_hi:
            raise ValueError("y_lo must be below y_hi")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")

    def total_jump_intensity(self) -> float:
        return float(sum(jc.total_mass() for jc in self.jumps))


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over [0, T] x [x_lo, x_hi] x [y_lo, y_hi]."""

    nt: int
    nx: int
    ny: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dt: float
    hx: float
    hy: float

    def x_index(self, value: float) -> int:
        return int(round((value - self.x[0]) / self.hx))

    def y_index(self, value: float) -> int:
        return int(round((value - self.y[0]) / self.hy))

    def t_index(self, value: float) -> int:
        return int(round(value / self.dt))

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")


def build_grid(p: ProblemSpec, nt: int, nx: int, ny: int) -> Grid:
    if min(nt, nx, ny) < 3:
        raise InvalidCounts(f"node counts must be >= 3, got ({nt}, {nx}, {ny})")
    t = np.linspace(0.0, p.horizon, nt)
    x = np.linspace(p.x_lo, p.x_hi, nx)
    y = np.linspace(p.y_lo, p.y_hi, ny)
    return Grid(nt, nx, ny, t, x, y,
                dt=p.horizon / (nt - 1),
                hx=(p.x_hi - p.x_lo) / (nx - 1),
                hy=(p.y_hi - p.y_lo) / (ny - 1))


@dataclass(frozen=True)
class Window:
    """Open hyperrectangle used for the local hypothesis and boundary checks."""

    t1: float
    t2: float
    x1: float
    x2: float
    y1: float
    y2: float

    def __post_init__(self):
        if not (self.t1 < self.t2 and self.x1 < self.x2 and self.y1 < self.y2):
            raise WindowError("window bounds must be strictly ordered")

    def indices(self, grid: Grid, margin_cells: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node indices strictly inside the window; enforces the margin."""
        kt = np.flatnonzero((grid.t > self.t1) & (grid.t < self.t2))
        ix = np.flatnonzero((grid.x > self.x1) & (grid.x < self.x2))
        jy = np.flatnonzero((grid.y > self.y1) & (grid.y < self.y2))
        if kt.size == 0 or ix.size == 0 or jy.size == 0:
            raise WindowError("window contains no grid nodes")
        m = margin_cells
        if (kt[0] < m or kt[-1] > grid.nt - 1 - m
                or ix[0] < m or ix[-1] > grid.nx - 1 - m
                or jy[0] < m or jy[-1] > grid.ny - 1 - m):
            raise WindowError(
                f"window must keep a margin of >= {m} grid cells inside the domain box")
        return kt, ix, jy


def evaluate_field(e: Expression, grid: Grid, t_index: int) -> np.ndarray:
    """Evaluate an expression in (t, x, y) on the spatial grid at one time level.

    Domain errors are re-raised with the offending node location attached.
    """
    X, Y = grid.meshgrid()
    ctx = {"t": float(grid.t[t_index]), "x": X, "y": Y}
    try:
        v = exprs.evaluate(e, ctx)
    except DomainError as err:
        if err.where is not None:
            i, j = divmod(err.where, grid.ny)
            raise DomainError(
                f"{err.args[0].split(' (flat')[0]} at node t={grid.t[t_index]:g}, "
                f"x={grid.x[i]:g}, y={grid.y[j]:g}", err.where) from None
        raise
    return np.broadcast_to(np.asarray(v, dtype=float), (grid.nx, grid.ny)).copy()


def local_coefficient_fields(p: ProblemSpec, grid: Grid, t_index: int) -> dict[str, np.ndarray]:
    """Evaluated drift/diffusion/discount fields at one time level.

    The cross coefficient 'beta_bar' is derived as rho*sqrt(beta1*beta2).
    """
    c = p.coefficients
    out = {
        "alpha1": evaluate_field(c.alpha1, grid, t_index),
        "alpha2": evaluate_field(c.alpha2, grid, t_index),
        "beta1": evaluate_field(c.beta1, grid, t_index),
        "beta2": evaluate_field(c.beta2, grid, t_index),
        "r": evaluate_field(c.discount, grid, t_index),
    }
    with np.errstate(invalid="ignore"):
        out["beta_bar"] = c.rho * np.sqrt(out["beta1"] * out["beta2"])
    return out


# --- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    level: str  # error | warning | info
    code: str
    message: str

    def __str__(self):
        return f"[{self.level}] {self.code}: {self.message}"


def _node_str(grid: Grid, k: int, i: int, j: int) -> str:
    return f"(t={grid.t[k]:g}, x={grid.x[i]:g}, y={grid.y[j]:g})"


def validate_spec(p: ProblemSpec, grid: Grid) -> list[Diagnostic]:
    """All invariant violations and solvability warnings; never raises."""
    out: list[Diagnostic] = []
    c = p.coefficients

    if not -1.0 <= c.rho <= 1.0:
        out.append(Diagnostic("error", "rho-range", f"rho out of [-1,1]: {c.rho}"))
    elif abs(c.rho) > 0.95:
        out.append(Diagnostic("warning", "rho-near-unit",
                              f"|rho|={abs(c.rho):g} > 0.95: the mixed-derivative stencil "
                              "may lose monotonicity"))

    for name, e in (("alpha1", c.alpha1), ("alpha2", c.alpha2), ("beta1", c.beta1),
                    ("beta2", c.beta2), ("discount", c.discount)):
        unexpected = exprs.free_vars(e) - set(COEFF_VARS)
        if unexpected:
            out.append(Diagnostic("error", "coefficient-vars",
                                  f"{name} references non-coefficient variables {sorted(unexpected)}"))

    beta2_max = 0.0
    for name in ("beta1", "beta2"):
        e = getattr(c, name)
        try:
            worst = None
            for k in range(grid.nt):
                f = evaluate_field(e, grid, k)
                if np.any(f < 0):
                    i, j = np.unravel_index(int(np.argmin(f)), f.shape)
                    worst = (k, int(i), int(j), float(f[i, j]))
                    break
                if name == "beta2":
                    beta2_max = max(beta2_max, float(np.max(f)))
            if worst is not None:
                k, i, j, v = worst
                out.append(Diagnostic("error", f"{name}-negative",
                                      f"{name}={v:g} < 0 at {_node_str(grid, k, i, j)}"))
        except exprs.EvalError as err:
            out.append(Diagnostic("error", f"{name}-evaluation", f"{name}: {err}"))
    if beta2_max == 0.0:
        out.append(Diagnostic("warning", "beta2-degenerate",
                              "beta2 vanishes on the whole grid: the positive-variance "
                              "window hypothesis is unverifiable, though the solve may proceed"))

    try:
        for k in (0, grid.nt // 2, grid.nt - 1):
            f = evaluate_field(c.discount, grid, k)
            if np.any(f < 0):
                i, j = np.unravel_index(int(np.argmin(f)), f.shape)
                out.append(Diagnostic("error", "discount-negative",
                                      f"discount={f[i, j]:g} < 0 at {_node_str(grid, k, int(i), int(j))}"))
                break
    except exprs.EvalError as err:
        out.append(Diagnostic("error", "discount-evaluation", f"discount: {err}"))

    for idx, jc in enumerate(p.jumps):
        label = f"jumps[{idx}]"
        if jc.mark_dim < 1:
            out.append(Diagnostic("error", f"{label}-mark-dim", "mark_dim must be >= 1"))
            continue
        if not jc.atoms:
            out.append(Diagnostic("error", f"{label}-atoms", "atom list is empty"))
            continue
        if any(a.w <= 0 for a in jc.atoms):
            out.append(Diagnostic("error", f"{label}-weights", "atom weights must be positive"))
        allowed = set(COEFF_VARS) | set(mark_vars(jc.mark_dim))
        for gname, ge in (("gamma1", jc.gamma1), ("gamma2", jc.gamma2)):
            unexpected = exprs.free_vars(ge) - allowed
            if unexpected:
                out.append(Diagnostic("error", f"{label}-vars",
                                      f"{gname} references undeclared variables {sorted(unexpected)}"))
        unexpected = exprs.free_vars(jc.gamma_bar) - set(mark_vars(jc.mark_dim))
        if unexpected:
            out.append(Diagnostic("error", f"{label}-gamma-bar-vars",
                                  f"gamma_bar may depend on marks only, got {sorted(unexpected)}"))

        levy_sum = 0.0
        for a in jc.atoms:
            gb = jc.gamma_bar_at(a)
            levy_sum += a.w * min(gb * gb, 1.0) if math.isfinite(gb) else float("nan")
        if math.isfinite(levy_sum):
            out.append(Diagnostic("info", f"{label}-levy-sum",
                                  f"discretized small-jump sum {levy_sum:g} (finite)"))
        else:
            out.append(Diagnostic("warning", f"{label}-levy-sum",
                                  "gamma_bar is not evaluable on every atom"))

        out.extend(_domination_spot_check(p, grid, jc, label))

    return out


def _domination_spot_check(p: ProblemSpec, grid: Grid, jc: JumpComponent,
                           label: str) -> Iterator[Diagnostic]:
    """gamma_bar must dominate the jump norm at grid nodes and atoms."""
    t_samples = sorted({0, grid.nt // 2, grid.nt - 1})
    X, Y = grid.meshgrid()
    for a in jc.atoms:
        gb = jc.gamma_bar_at(a)
        if not math.isfinite(gb):
            continue  # reported by the levy-sum diagnostic
        for k in t_samples:
            ctx = {"t": float(grid.t[k]), "x": X, "y": Y, **jc.mark_ctx(a)}
            try:
                g1 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma1, ctx), float), X.shape)
                g2 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma2, ctx), float), X.shape)
            except exprs.EvalError as err:
                yield Diagnostic("error", f"{label}-gamma-evaluation", f"{err}")
                return
            norm = np.hypot(g1, g2)
            bad = norm > gb * (1 + 1e-12) + 1e-300
            if np.any(bad):
                i, j = np.unravel_index(int(np.argmax(norm)), norm.shape)
                yield Diagnostic("error", f"{label}-domination",
                                 f"|gamma|={norm[i, j]:g} exceeds gamma_bar={gb:g} at "
                                 f"{_node_str(grid, k, int(i), int(j))}, atom xi={a.xi}")
                return


# --- mirrored orientation ------------------------------------------------------

_NEG_X = {"x": Unary("neg", Var("x"))}


def _flip_x(e: Expression | None) -> Expression | None:
    return None if e is None else exprs.substitute(e, _NEG_X)


def _reflect_rule(rule: FarFieldRule) -> FarFieldRule:
    if rule.kind == "expression":
        return FarFieldRule("expression", _flip_x(rule.expression))
    return rule


def reflect_spec(p: ProblemSpec) -> ProblemSpec:
    """Reflect the problem through x -> -x, flipping the orientation.

    The value function of the reflected problem at (t, x, y) equals the
    original value at (t, -x, y); solving the mirrored orientation reduces
    to solving its reflection.
    """
    c = p.coefficients
    coefficients = CoefficientSet(
        alpha1=Unary("neg", _flip_x(c.alpha1)),
        alpha2=_flip_x(c.alpha2),
        beta1=_flip_x(c.beta1),
        beta2=_flip_x(c.beta2),
        rho=-c.rho,  # the cross derivative changes sign under reflection
        discount=_flip_x(c.discount),
        running_cost=_flip_x(c.running_cost),
    )
    gain = GainSpec(g=_flip_x(p.gain.g), terminal=_flip_x(p.gain.terminal))
    jumps = tuple(
        JumpComponent(
            gamma1=Unary("neg", _flip_x(jc.gamma1)),
            gamma2=_flip_x(jc.gamma2),
            mark_dim=jc.mark_dim,
            atoms=jc.atoms,
            gamma_bar=jc.gamma_bar,
            compensate_small_jumps=jc.compensate_small_jumps,
        )
        for jc in p.jumps
    )
    far = FarField(
        x_lo=_reflect_rule(p.far_field.x_hi),
        x_hi=_reflect_rule(p.far_field.x_lo),
        y_lo=_reflect_rule(p.far_field.y_lo),
        y_hi=_reflect_rule(p.far_field.y_hi),
    )
    orientation = ORIENTATIONS[1 - ORIENTATIONS.index(p.orientation)]
    return replace(p, coefficients=coefficients, gain=gain, jumps=jumps,
                   x_lo=-p.x_hi, x_hi=-p.x_lo, far_field=far, orientation=orientation)


def reflect_window(w: Window) -> Window:
    return Window(w.t1, w.t2, -w.x2, -w.x1, w.y1, w.y2)
