"""Stopping-surface extraction and its continuity / smooth-fit diagnostics.

The exercise mask of a completed solve is scanned slice by slice in x.  On
a clean slice the stopped nodes form a contiguous block against one face
(below the surface for orientation continuation-above); the boundary value
is the largest stopped x, optionally refined below grid resolution by
locating where the excess value crosses the activation tolerance.  Slices
whose mask is non-monotone are healed conservatively (largest stopped x)
and flagged.  The two Dirichlet x-faces are excluded from extraction: the
far-field rule pins the value to the gain there, which would otherwise
read as spurious exercise nodes.

Continuity is reported as refinement-stable absence of jumps, never as a
proof: a single-step increment larger than jump_factor * hx raises a
discontinuity flag, which a refined surface can veto when the excess does
not persist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Grid, Window
from .solver import SolveResult

__all__ = [
    "BoundarySurface",
    "ContinuityReport",
    "OrientationMismatch",
    "continuity_report",
    "extract_boundary",
    "monotone_gradient_check",
    "smooth_fit_residual",
    "surface_distance",
]

DEFAULT_JUMP_FACTOR = 10.0
PERSISTENCE_RATIO = 0.8


class OrientationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySurface:
    values: np.ndarray          # (nt, ny); +-inf sentinels for one-phase slices
    t: np.ndarray
    y: np.ndarray
    orientation: str
    nt: int
    nx: int
    ny: int
    hx: float
    extraction_tol: float
    refined: bool
    flagged: np.ndarray         # (nt, ny) bool, healed non-monotone slices
    detached: np.ndarray        # (nt, ny) int, stopped nodes beyond a wide gap

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


HEAL_GAP = 1  # continuation holes this narrow inside the stop run are healed


def _extract_above(mask_slice: np.ndarray, x: np.ndarray, u_slice: np.ndarray,
                   atol: float, refine: bool) -> tuple[float, bool, int]:
    """Boundary along one x-slice, stop region against the low face.

    Interior columns only (the Dirichlet faces read as spurious exercise
    nodes).  The boundary is the top of the stop run connected to the low
    face; single-node continuation holes inside it are healed to the
    largest stopped x and flagged.  Stopped nodes separated from that run
    by a wide gap form a detached band (deep value-decay regions where the
    excess value sits inside the activation band); they are counted, not
    healed.  A slice with stopped nodes but none against the low face
    contradicts the orientation: flagged, healed conservatively.

    Returns (value, flagged, detached_count).
    """
    stopped = mask_slice[1:-1]
    xs = x[1:-1]
    if not stopped.any():
        return -np.inf, False, 0
    if stopped.all():
        return np.inf, False, 0
    idx_all = np.flatnonzero(stopped)
    if idx_all[0] != 0:
        return float(xs[idx_all[-1]]), True, 0
    # grow the face-connected run, healing gaps of width <= HEAL_GAP
    end = int(idx_all[0])
    healed = False
    for i in idx_all[1:]:
        gap = int(i) - end - 1
        if gap == 0:
            end = int(i)
        elif gap <= HEAL_GAP:
            end = int(i)
            healed = True
        else:
            break
    detached = int((idx_all > end).sum())
    b = float(xs[end])
    if not healed and refine and end + 1 < xs.size:
        u0 = float(u_slice[1 + end])
        u1 = float(u_slice[1 + end + 1])
        if u1 > atol >= u0:
            frac = (atol - u0) / (u1 - u0)
            b = float(xs[end] + frac * (xs[end + 1] - xs[end]))
    return b, healed, detached


def extract_boundary(res: SolveResult, refine: bool = True,
                     mismatch_fraction: float = 0.05) -> BoundarySurface:
    """Extract x*(t, y) from the exercise mask of a completed solve."""
    grid = res.grid
    above = res.spec.orientation == "continuation-above"
    mask = res.mask if above else res.mask[:, ::-1, :]
    u = res.u() if above else res.u()[:, ::-1, :]
    x = grid.x if above else -grid.x[::-1]
    atol = res.activation_tol

    values = np.empty((grid.nt, grid.ny))
    flagged = np.zeros((grid.nt, grid.ny), dtype=bool)
    detached = np.zeros((grid.nt, grid.ny), dtype=int)
    for k in range(grid.nt):
        for j in range(grid.ny):
            values[k, j], flagged[k, j], detached[k, j] = _extract_above(
                mask[k, :, j], x, u[k, :, j], atol, refine)
    if not above:
        values = -values

    two_phase = np.isfinite(values)
    n_two_phase = int(two_phase.sum())
    if n_two_phase and flagged.sum() > mismatch_fraction * n_two_phase:
        raise OrientationMismatch(
            f"mask contradicts orientation {res.spec.orientation!r} on "
            f"{int(flagged.sum())} of {n_two_phase} two-phase slices")

    return BoundarySurface(values=values, t=grid.t.copy(), y=grid.y.copy(),
                           orientation=res.spec.orientation, nt=grid.nt, nx=grid.nx,
                           ny=grid.ny, hx=grid.hx, extraction_tol=atol,
                           refined=refine, flagged=flagged, detached=detached)


def _window_select(b: BoundarySurface, window: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Surface restricted to the window; entries whose value exits it are masked."""
    kt = np.flatnonzero((b.t > window.t1) & (b.t < window.t2))
    jy = np.flatnonzero((b.y > window.y1) & (b.y < window.y2))
    sub = b.values[np.ix_(kt, jy)]
    inside = np.isfinite(sub) & (sub > window.x1) & (sub < window.x2)
    exits = int((np.isfinite(sub) & ~inside).sum())
    return sub, inside, (kt, jy), exits


def _axis_steps(sub: np.ndarray, inside: np.ndarray, axis: int) -> np.ndarray:
    """Differences between adjacent finite in-window entries along an axis."""
    a = np.where(inside, sub, np.nan)
    d = np.diff(a, axis=axis)
    return d[np.isfinite(d)]


@dataclass(frozen=True)
class ContinuityReport:
    declared: dict
    violations: dict            # per axis: count and worst wrong-direction step
    modulus: dict               # omega(m) for index offsets m in {1, 2, 4}
    max_step: dict              # largest |single step| per axis
    jump_factor: float
    flags: dict                 # per axis: discontinuity flag
    persistence: dict | None    # refined-step ratios when lineage was given
    exits: int                  # finite entries whose value leaves the window
    n_checked: int

    def any_flag(self) -> bool:
        return bool(self.flags["t"] or self.flags["y"])

    def to_dict(self) -> dict:
        return {
            "declared": self.declared,
            "violations": self.violations,
            "modulus": self.modulus,
            "max_step": self.max_step,
            "jump_factor": self.jump_factor,
            "flags": self.flags,
            "persistence": self.persistence,
            "exits": self.exits,
            "n_checked": self.n_checked,
        }


def _max_abs_step(sub, inside, axis):
    steps = _axis_steps(sub, inside, axis)
    return float(np.max(np.abs(steps))) if steps.size else 0.0


def continuity_report(b: BoundarySurface, window: Window,
                      declared_monotonicity: dict[str, str] | None = None,
                      jump_factor: float = DEFAULT_JUMP_FACTOR,
                      refined: BoundarySurface | None = None) -> ContinuityReport:
    """Monotonicity, modulus-of-continuity and discontinuity-flag diagnostics.

    ``declared_monotonicity`` maps axis name ('t', 'y') to 'inc' or 'dec'.
    When a refined surface from the lineage is supplied, a jump flag is only
    kept if the offending step survives refinement at >= 80% of its size.
    """
    declared = declared_monotonicity or {"t": "inc", "y": "inc"}
    sub, inside, _, exits = _window_select(b, window)

    scale = float(np.max(np.abs(sub[inside]))) if inside.any() else 0.0
    violations = {}
    for axis, name in ((0, "t"), (1, "y")):
        steps = _axis_steps(sub, inside, axis)
        sign = 1.0 if declared.get(name, "inc") == "inc" else -1.0
        eps = 1e-12 * (1.0 + scale)
        wrong = steps[sign * steps < -eps]
        violations[name] = {
            "count": int(wrong.size),
            "worst": float(np.max(np.abs(wrong))) if wrong.size else 0.0,
        }

    masked = np.where(inside, sub, np.nan)
    modulus = {}
    for m in (1, 2, 4):
        worst = 0.0
        for dk in range(-m, m + 1):
            for dj in range(-m, m + 1):
                if dk == 0 and dj == 0:
                    continue
                if abs(dk) >= masked.shape[0] or abs(dj) >= masked.shape[1]:
                    continue
                shifted = np.full_like(masked, np.nan)
                ks = slice(max(dk, 0), masked.shape[0] + min(dk, 0))
                kd = slice(max(-dk, 0), masked.shape[0] + min(-dk, 0))
                js = slice(max(dj, 0), masked.shape[1] + min(dj, 0))
                jd = slice(max(-dj, 0), masked.shape[1] + min(-dj, 0))
                shifted[kd, jd] = masked[ks, js]
                diff = np.abs(shifted - masked)
                if np.isfinite(diff).any():
                    worst = max(worst, float(np.nanmax(diff)))
        modulus[str(m)] = worst

    max_step = {"t": _max_abs_step(sub, inside, 0), "y": _max_abs_step(sub, inside, 1)}

    persistence = None
    flags = {}
    if refined is not None:
        sub_r, inside_r, _, _ = _window_select(refined, window)
        persistence = {}
        for axis, name in ((0, "t"), (1, "y")):
            coarse = max_step[name]
            fine = _max_abs_step(sub_r, inside_r, axis)
            persistence[name] = float(fine / coarse) if coarse > 0 else 0.0
    for name in ("t", "y"):
        raw = max_step[name] > jump_factor * b.hx
        if raw and persistence is not None:
            raw = persistence[name] >= PERSISTENCE_RATIO
        flags[name] = bool(raw)

    return ContinuityReport(declared=declared, violations=violations, modulus=modulus,
                            max_step=max_step, jump_factor=jump_factor, flags=flags,
                            persistence=persistence, exits=exits,
                            n_checked=int(inside.sum()))


def surface_distance(b1: BoundarySurface, b2: BoundarySurface, window: Window) -> float:
    """Sup-distance on the coarse surface's window nodes, interpolating the other.

    Entries that are not finite on both surfaces are skipped.
    """
    sub1, inside1, (kt, jy), _ = _window_select(b1, window)
    worst = 0.0
    any_pair = False
    for a, k in enumerate(kt):
        for c, j in enumerate(jy):
            if not inside1[a, c]:
                continue
            v2 = _bilinear_surface(b2, float(b1.t[k]), float(b1.y[j]))
            if not np.isfinite(v2):
                continue
            any_pair = True
            worst = max(worst, abs(float(sub1[a, c]) - v2))
    if not any_pair:
        raise ValueError("no overlapping finite surface entries inside the window")
    return worst


def _bilinear_surface(b: BoundarySurface, t: float, y: float) -> float:
    it = int(np.clip(np.searchsorted(b.t, t) - 1, 0, b.t.size - 2))
    jt = int(np.clip(np.searchsorted(b.y, y) - 1, 0, b.y.size - 2))
    ft = (t - b.t[it]) / (b.t[it + 1] - b.t[it])
    fy = (y - b.y[jt]) / (b.y[jt + 1] - b.y[jt])
    ft = min(max(ft, 0.0), 1.0)
    fy = min(max(fy, 0.0), 1.0)
    q = b.values
    out = 0.0
    for w, v in (((1 - ft) * (1 - fy), q[it, jt]), (ft * (1 - fy), q[it + 1, jt]),
                 ((1 - ft) * fy, q[it, jt + 1]), (ft * fy, q[it + 1, jt + 1])):
        if w > 0.0:  # zero-weight corners may carry sentinels; never touch them
            out += w * float(v)
    return out


def smooth_fit_residual(res: SolveResult, b: BoundarySurface, window: Window) -> dict[str, float]:
    """Maxima of |u|, |du/dx|, |du/dy|, |du/dt| sampled one cell inside the
    continuation region along the extracted surface, over the window."""
    grid = res.grid
    u = res.u()
    side = 1 if res.spec.orientation == "continuation-above" else -1
    kt = np.flatnonzero((grid.t > window.t1) & (grid.t < window.t2))
    jy = np.flatnonzero((grid.y > window.y1) & (grid.y < window.y2))
    out = {"u": 0.0, "du_dx": 0.0, "du_dy": 0.0, "du_dt": 0.0}
    sampled = 0
    for k in kt:
        for j in jy:
            bv = b.values[k, j]
            if not np.isfinite(bv) or not (window.x1 < bv < window.x2):
                continue
            if side > 0:
                i = int(np.searchsorted(grid.x, bv + 1e-12 * (1 + abs(bv)), side="right"))
            else:
                i = int(np.searchsorted(grid.x, bv - 1e-12 * (1 + abs(bv)), side="left")) - 1
            if not 1 <= i <= grid.nx - 2 or not 1 <= k <= grid.nt - 2:
                continue
            sampled += 1
            out["u"] = max(out["u"], abs(float(u[k, i, j])))
            out["du_dx"] = max(out["du_dx"],
                               abs(float(u[k, i + 1, j] - u[k, i - 1, j])) / (2 * grid.hx))
            if 1 <= j <= grid.ny - 2:
                out["du_dy"] = max(out["du_dy"],
                                   abs(float(u[k, i, j + 1] - u[k, i, j - 1])) / (2 * grid.hy))
            out["du_dt"] = max(out["du_dt"],
                               abs(float(u[k + 1, i, j] - u[k - 1, i, j])) / (2 * grid.dt))
    if sampled == 0:
        raise ValueError("no finite boundary entries inside the window to sample")
    return out


def monotone_gradient_check(res: SolveResult, window: Window) -> float:
    """Minimum of the central-difference x-derivative of u = v - g over the window."""
    grid = res.grid
    kt, ix, jy = window.indices(grid)
    u = res.u()
    worst = np.inf
    for k in kt:
        du = (u[k, ix + 1][:, jy] - u[k, ix - 1][:, jy]) / (2 * grid.hx)
        worst = min(worst, float(np.min(du)))
    return worst
