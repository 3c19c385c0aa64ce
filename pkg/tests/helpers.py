"""Shared builders for test problem specs."""

from stopsurf import model
from stopsurf.exprs import parse
from stopsurf.model import (
    Atom,
    CoefficientSet,
    FarField,
    GainSpec,
    JumpComponent,
    ProblemSpec,
)


def make_spec(*, alpha1="0", alpha2="0", beta1="0", beta2="0", rho=0.0, r="0",
              running_cost=None, g="x", terminal=None, jumps=(),
              box=(0.0, 1.0, 0.0, 1.0), horizon=1.0,
              orientation="continuation-above", far_field=None) -> ProblemSpec:
    coeffs = CoefficientSet(
        alpha1=parse(alpha1), alpha2=parse(alpha2),
        beta1=parse(beta1), beta2=parse(beta2),
        rho=rho, discount=parse(r),
        running_cost=None if running_cost is None else parse(running_cost),
    )
    return ProblemSpec(
        coefficients=coeffs,
        gain=GainSpec(g=parse(g), terminal=None if terminal is None else parse(terminal)),
        jumps=tuple(jumps),
        x_lo=box[0], x_hi=box[1], y_lo=box[2], y_hi=box[3],
        horizon=horizon,
        orientation=orientation,
        far_field=far_field if far_field is not None else FarField(),
    )


def atom_jump(gamma1="0.05", gamma2="0", gamma_bar="0.5", atoms=((0.0, 0.5),),
              compensate=False, mark_dim=1) -> JumpComponent:
    gvars = ("t", "x", "y") + model.mark_vars(mark_dim)
    packed = []
    for xi, w in atoms:
        xi_t = tuple(xi) if isinstance(xi, (tuple, list)) else (float(xi),) * mark_dim
        packed.append(Atom(xi_t, float(w)))
    return JumpComponent(
        gamma1=parse(gamma1, gvars),
        gamma2=parse(gamma2, gvars),
        mark_dim=mark_dim,
        atoms=tuple(packed),
        gamma_bar=parse(gamma_bar, model.mark_vars(mark_dim)),
        compensate_small_jumps=compensate,
    )
