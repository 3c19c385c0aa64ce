"""Problem files: one INI-style key-value tree per stopping problem.

Sections: [coefficients], [gain], [domain], optional [far_field],
[jumps.N] (N = 1, 2, ...), [window] and [solver].  Expression values are
plain text in the expression grammar; see the README for the full schema.
Example:

    [coefficients]
    alpha1 = y + 0.15*x
    alpha2 = 0.2*(1 - y)
    beta1 = 0.05
    beta2 = 0.1
    rho = 0.0
    discount = 0.05

    [gain]
    g = x

    [domain]
    x = 0.0, 1.0
    y = -0.5, 0.5
    horizon = 0.5
    orientation = continuation-above

    [jumps.1]
    gamma1 = 0.05
    gamma2 = 0
    mark_dim = 1
    gamma_bar = 0.05
    compensate_small_jumps = false
    atoms = 0.0 : 0.5

Atom lists are `xi : weight` pairs separated by `|`, with the mark vector
components comma-separated for mark_dim > 1.  A density-based measure
instead sets `density`, `density_interval` and `density_nodes`.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from . import exprs, model
from .exprs import ExpressionError
from .model import (
    Atom,
    CoefficientSet,
    FarField,
    FarFieldRule,
    GainSpec,
    JumpComponent,
    ProblemSpec,
    Window,
    discretize_density,
    mark_vars,
)
from .solver import SolverConfig

__all__ = ["ProblemFileError", "load_problem", "load_solver_config", "load_window"]

COEFF_VARS = ("t", "x", "y")


class ProblemFileError(ValueError):
    pass


def _read(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as err:
        raise ProblemFileError(f"cannot read problem file {path}: {err}") from None
    except configparser.Error as err:
        raise ProblemFileError(f"{path}: {err}") from None
    return cp


def _expr(cp, section, key, variables, default=None):
    if not cp.has_option(section, key):
        if default is None:
            raise ProblemFileError(f"[{section}] is missing '{key}'")
        source = default
    else:
        source = cp.get(section, key).strip().strip('"')
    try:
        return exprs.parse(source, variables)
    except ExpressionError as err:
        raise ProblemFileError(f"[{section}] {key}: {err}") from None


def _floats(cp, section, key, count=None):
    raw = cp.get(section, key)
    try:
        vals = [float(v) for v in raw.replace(",", " ").split()]
    except ValueError:
        raise ProblemFileError(f"[{section}] {key}: expected numbers, got {raw!r}") from None
    if count is not None and len(vals) != count:
        raise ProblemFileError(f"[{section}] {key}: expected {count} numbers")
    return vals


def _parse_atoms(raw: str, mark_dim: int, section: str) -> tuple[Atom, ...]:
    atoms = []
    for part in raw.split("|"):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ProblemFileError(f"[{section}] atoms: entry {part!r} needs 'xi : weight'")
        xi_raw, w_raw = part.rsplit(":", 1)
        try:
            xi = tuple(float(v) for v in xi_raw.replace(",", " ").split())
            w = float(w_raw)
        except ValueError:
            raise ProblemFileError(f"[{section}] atoms: bad entry {part!r}") from None
        if len(xi) != mark_dim:
            raise ProblemFileError(
                f"[{section}] atoms: mark has {len(xi)} components, mark_dim={mark_dim}")
        atoms.append(Atom(xi, w))
    if not atoms:
        raise ProblemFileError(f"[{section}] atoms: empty list")
    return tuple(atoms)


def _far_field_rule(raw: str, section: str, key: str) -> FarFieldRule:
    raw = raw.strip()
    if raw == "gain":
        return FarFieldRule("gain")
    if raw == "linear":
        return FarFieldRule("linear")
    if raw.startswith("expr:"):
        try:
            return FarFieldRule("expression", exprs.parse(raw[5:].strip(), COEFF_VARS))
        except ExpressionError as err:
            raise ProblemFileError(f"[{section}] {key}: {err}") from None
    raise ProblemFileError(
        f"[{section}] {key}: expected 'gain', 'linear' or 'expr: <expression>'")


def _jump_component(cp, section: str) -> JumpComponent:
    mark_dim = cp.getint(section, "mark_dim", fallback=1)
    gvars = COEFF_VARS + mark_vars(mark_dim)
    gamma1 = _expr(cp, section, "gamma1", gvars)
    gamma2 = _expr(cp, section, "gamma2", gvars, default="0")
    gamma_bar = _expr(cp, section, "gamma_bar", mark_vars(mark_dim))
    compensate = cp.getboolean(section, "compensate_small_jumps", fallback=False)
    has_atoms = cp.has_option(section, "atoms")
    has_density = cp.has_option(section, "density")
    if has_atoms == has_density:
        raise ProblemFileError(f"[{section}] needs exactly one of 'atoms' or 'density'")
    if has_atoms:
        atoms = _parse_atoms(cp.get(section, "atoms"), mark_dim, section)
    else:
        dens = _expr(cp, section, "density", mark_vars(mark_dim))
        a, b = _floats(cp, section, "density_interval", 2)
        nodes = cp.getint(section, "density_nodes", fallback=32)
        try:
            atoms = discretize_density(dens, (a, b), nodes, mark_dim)
        except (ValueError, ExpressionError) as err:
            raise ProblemFileError(f"[{section}] density: {err}") from None
    return JumpComponent(gamma1=gamma1, gamma2=gamma2, mark_dim=mark_dim,
                         atoms=atoms, gamma_bar=gamma_bar,
                         compensate_small_jumps=compensate)


def load_problem(path: Path | str) -> ProblemSpec:
    path = Path(path)
    cp = _read(path)
    for required in ("coefficients", "gain", "domain"):
        if not cp.has_section(required):
            raise ProblemFileError(f"{path}: missing [{required}] section")

    try:
        rho = cp.getfloat("coefficients", "rho", fallback=0.0)
    except ValueError:
        raise ProblemFileError("[coefficients] rho: expected a number") from None
    running = (_expr(cp, "coefficients", "running_cost", COEFF_VARS)
               if cp.has_option("coefficients", "running_cost") else None)
    coeffs = CoefficientSet(
        alpha1=_expr(cp, "coefficients", "alpha1", COEFF_VARS),
        alpha2=_expr(cp, "coefficients", "alpha2", COEFF_VARS),
        beta1=_expr(cp, "coefficients", "beta1", COEFF_VARS),
        beta2=_expr(cp, "coefficients", "beta2", COEFF_VARS),
        rho=rho,
        discount=_expr(cp, "coefficients", "discount", COEFF_VARS),
        running_cost=running,
    )
    terminal = (_expr(cp, "gain", "terminal", COEFF_VARS)
                if cp.has_option("gain", "terminal") else None)
    gain = GainSpec(g=_expr(cp, "gain", "g", COEFF_VARS), terminal=terminal)

    x_lo, x_hi = _floats(cp, "domain", "x", 2)
    y_lo, y_hi = _floats(cp, "domain", "y", 2)
    try:
        horizon = cp.getfloat("domain", "horizon")
    except (ValueError, configparser.NoOptionError):
        raise ProblemFileError("[domain] horizon: expected a number") from None
    orientation = cp.get("domain", "orientation", fallback="continuation-above").strip()

    far = FarField()
    if cp.has_section("far_field"):
        kwargs = {}
        for key in ("x_lo", "x_hi", "y_lo", "y_hi"):
            if cp.has_option("far_field", key):
                kwargs[key] = _far_field_rule(cp.get("far_field", key), "far_field", key)
        far = FarField(**kwargs)

    jumps = []
    for section in sorted(s for s in cp.sections() if s.startswith("jumps.")):
        jumps.append(_jump_component(cp, section))

    try:
        return ProblemSpec(coefficients=coeffs, gain=gain, jumps=tuple(jumps),
                           x_lo=x_lo, x_hi=x_hi, y_lo=y_lo, y_hi=y_hi,
                           horizon=horizon, orientation=orientation, far_field=far)
    except ValueError as err:
        raise ProblemFileError(f"{path}: {err}") from None


def load_window(path: Path | str) -> Window | None:
    """The optional [window] section of a problem file."""
    cp = _read(Path(path))
    if not cp.has_section("window"):
        return None
    t1, t2 = _floats(cp, "window", "t", 2)
    x1, x2 = _floats(cp, "window", "x", 2)
    y1, y2 = _floats(cp, "window", "y", 2)
    try:
        return Window(t1, t2, x1, x2, y1, y2)
    except model.WindowError as err:
        raise ProblemFileError(f"[window]: {err}") from None


def load_solver_config(path: Path | str, overrides: dict | None = None) -> SolverConfig:
    """[solver] defaults from the problem file, overridden by CLI flags."""
    cp = _read(Path(path))
    kwargs: dict = {}
    if cp.has_section("solver"):
        getters = {"theta": cp.getfloat, "psor_omega": cp.getfloat,
                   "psor_tol": cp.getfloat, "psor_max_iter": cp.getint,
                   "obstacle_method": cp.get, "penalty_rho": cp.getfloat}
        for key, getter in getters.items():
            if cp.has_option("solver", key):
                try:
                    kwargs[key] = getter("solver", key)
                except ValueError:
                    raise ProblemFileError(f"[solver] {key}: bad value") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    try:
        return SolverConfig(**kwargs)
    except ValueError as err:
        raise ProblemFileError(f"[solver]: {err}") from None
