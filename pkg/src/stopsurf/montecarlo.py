"""Pathwise validation of a solve: simulate the state dynamics, run the
solver's stopping rule on the paths, and cross-check the value two ways.

A batch can be spilled to a fixed-width binary record file for
reproducibility audits; see :func:`save_batch` for the layout.

The simulation is a vectorized Euler scheme driven by a counter-based
generator (Philox keyed by the seed), so a configuration reproduces its
batch bit for bit.  Jumps are finite-activity: per step and component the
event count is Poisson with the component's total mass, the atom is drawn
proportionally to its weight and the displacement is applied at the
pre-jump state.  When small jumps are compensated the same compensation
vector that enters the generator is subtracted from the drift.

Three consumers share a batch: policy evaluation (a lower-bound estimate
of the value by stopping at the solver's exercise set), a least-squares
regression estimate (an independent backward-induction oracle) and the
martingale diagnostics of the discounted value process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exprs
from .model import Grid, ProblemSpec
from .solver import SolveResult

__all__ = [
    "InfiniteActivityUnsupported",
    "MartingaleTable",
    "PathBatch",
    "PolicyEstimate",
    "SimConfig",
    "SpecMismatch",
    "evaluate_policy",
    "load_batch",
    "longstaff_schwartz",
    "martingale_check",
    "save_batch",
    "simulate_paths",
]

BATCH_MAGIC = b"SSPB0001"
_EDGE_CODES = {"absorb": 0, "reflect-report": 1}
_EDGE_NAMES = {v: k for k, v in _EDGE_CODES.items()}


class SpecMismatch(ValueError):
    pass


class InfiniteActivityUnsupported(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    dt_sim: float = 0.005
    seed: int = 0
    antithetic: bool = False
    edge_behavior: str = "absorb"  # absorb | reflect-report

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if self.dt_sim <= 0:
            raise ValueError("dt_sim must be positive")
        if self.edge_behavior not in ("absorb", "reflect-report"):
            raise ValueError("edge_behavior must be 'absorb' or 'reflect-report'")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")


@dataclass(frozen=True)
class PathBatch:
    t: np.ndarray          # (n_steps + 1,)
    x: np.ndarray          # (n_paths, n_steps + 1)
    y: np.ndarray
    jump_path: np.ndarray  # event log arrays, ordered by (step, path)
    jump_step: np.ndarray
    jump_component: np.ndarray
    jump_atom: np.ndarray
    exited: np.ndarray     # (n_paths,) bool
    exit_step: np.ndarray  # (n_paths,) int, n_steps when never exited
    reflections: int
    nonfinite: np.ndarray  # (n_paths,) bool, aborted by a non-finite state
    start: tuple[float, float, float]
    config: SimConfig
    spec: ProblemSpec

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1


@dataclass(frozen=True)
class PolicyEstimate:
    value: float
    std_error: float
    n_paths: int
    stop_histogram: np.ndarray  # counts per step index
    notes: str = ""

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error,
                "n_paths": self.n_paths,
                "stop_histogram": [int(c) for c in self.stop_histogram],
                "notes": self.notes}


def _eval_on_paths(e, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    v = exprs.evaluate(e, {"t": t, "x": x, "y": y})
    return np.broadcast_to(np.asarray(v, dtype=float), x.shape)


def simulate_paths(p: ProblemSpec, start: tuple[float, float, float],
                   cfg: SimConfig) -> PathBatch:
    """Euler scheme from ``start = (t0, x0, y0)`` to the horizon."""
    for jc in p.jumps:
        if not math.isfinite(jc.total_mass()):
            raise InfiniteActivityUnsupported(
                "jump component has non-finite total mass after discretization")

    t0, x0, y0 = start
    if not 0 <= t0 < p.horizon:
        raise ValueError("start time must lie in [0, horizon)")
    n_steps = max(1, int(math.ceil((p.horizon - t0) / cfg.dt_sim - 1e-12)))
    times = np.minimum(t0 + cfg.dt_sim * np.arange(n_steps + 1), p.horizon)
    times[-1] = p.horizon

    n = cfg.n_paths
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    X = np.full((n, n_steps + 1), float(x0))
    Y = np.full((n, n_steps + 1), float(y0))
    active = np.ones(n, dtype=bool)
    exited = np.zeros(n, dtype=bool)
    exit_step = np.full(n, n_steps, dtype=int)
    nonfinite = np.zeros(n, dtype=bool)
    reflections = 0
    jl_path: list[np.ndarray] = []
    jl_step: list[np.ndarray] = []
    jl_comp: list[np.ndarray] = []
    jl_atom: list[np.ndarray] = []

    rho = p.coefficients.rho
    rho_c = math.sqrt(max(0.0, 1.0 - rho * rho))
    half = n // 2

    for k in range(n_steps):
        dt = float(times[k + 1] - times[k])
        t = float(times[k])
        xk = X[:, k].copy()
        yk = Y[:, k].copy()
        was_active = active.copy()

        if cfg.antithetic:
            z1h = rng.standard_normal((half,))
            z2h = rng.standard_normal((half,))
            z1 = np.concatenate([z1h, -z1h])
            z2 = np.concatenate([z2h, -z2h])
        else:
            z1 = rng.standard_normal(n)
            z2 = rng.standard_normal(n)

        a1 = _eval_on_paths(p.coefficients.alpha1, t, xk, yk)
        a2 = _eval_on_paths(p.coefficients.alpha2, t, xk, yk)
        b1 = _eval_on_paths(p.coefficients.beta1, t, xk, yk)
        b2 = _eval_on_paths(p.coefficients.beta2, t, xk, yk)
        with np.errstate(invalid="ignore"):
            sig1 = np.sqrt(np.maximum(2.0 * b1, 0.0))
            sig2 = np.sqrt(np.maximum(2.0 * b2, 0.0))

        dB = math.sqrt(dt) * z1
        dW = math.sqrt(dt) * (rho * z1 + rho_c * z2)
        dx = a1 * dt + sig1 * dB
        dy = a2 * dt + sig2 * dW

        # compensated small jumps reduce the drift by the compensation vector
        for jc in p.jumps:
            if not jc.compensate_small_jumps:
                continue
            for atom in jc.atoms:
                if jc.gamma_bar_at(atom) < 1.0:
                    ctx = {"t": t, "x": xk, "y": yk, **jc.mark_ctx(atom)}
                    g1 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma1, ctx), float), xk.shape)
                    g2 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma2, ctx), float), xk.shape)
                    dx -= atom.w * g1 * dt
                    dy -= atom.w * g2 * dt

        xn = xk + np.where(active, dx, 0.0)
        yn = yk + np.where(active, dy, 0.0)

        # finite-activity jumps: Poisson count per component, atom by weight
        for ci, jc in enumerate(p.jumps):
            lam = jc.total_mass()
            counts = rng.poisson(lam * dt, size=n)
            if cfg.antithetic:
                counts[half:] = counts[:half]
            counts = np.where(active, counts, 0)
            weights = np.array([a.w for a in jc.atoms])
            cdf = np.cumsum(weights) / weights.sum()
            while np.any(counts > 0):
                hit = counts > 0
                draw = rng.random(n)
                if cfg.antithetic:
                    draw[half:] = draw[:half]
                atom_idx = np.searchsorted(cdf, draw[hit], side="right")
                idx_paths = np.flatnonzero(hit)
                for atom_i in np.unique(atom_idx):
                    sel = idx_paths[atom_idx == atom_i]
                    atom = jc.atoms[int(atom_i)]
                    ctx = {"t": t, "x": xn[sel], "y": yn[sel], **jc.mark_ctx(atom)}
                    g1 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma1, ctx), float), xn[sel].shape)
                    g2 = np.broadcast_to(np.asarray(exprs.evaluate(jc.gamma2, ctx), float), xn[sel].shape)
                    xn[sel] += g1
                    yn[sel] += g2
                    jl_path.append(sel)
                    jl_step.append(np.full(sel.size, k, dtype=int))
                    jl_comp.append(np.full(sel.size, ci, dtype=int))
                    jl_atom.append(np.full(sel.size, int(atom_i), dtype=int))
                counts = np.where(hit, counts - 1, counts)

        bad = ~np.isfinite(xn) | ~np.isfinite(yn)
        if np.any(bad & active):
            nonfinite |= bad & active
            exit_step[bad & active] = k
            xn = np.where(bad, xk, xn)
            yn = np.where(bad, yk, yn)
            active &= ~bad

        out = (xn < p.x_lo) | (xn > p.x_hi) | (yn < p.y_lo) | (yn > p.y_hi)
        out &= active
        if np.any(out):
            if cfg.edge_behavior == "absorb":
                xn = np.where(out, np.clip(xn, p.x_lo, p.x_hi), xn)
                yn = np.where(out, np.clip(yn, p.y_lo, p.y_hi), yn)
                exited |= out
                exit_step[out] = k + 1
                active &= ~out
            else:
                reflections += int(np.count_nonzero(out))
                for _ in range(4):  # a huge step may need several folds
                    xn = np.where(xn < p.x_lo, 2 * p.x_lo - xn, xn)
                    xn = np.where(xn > p.x_hi, 2 * p.x_hi - xn, xn)
                    yn = np.where(yn < p.y_lo, 2 * p.y_lo - yn, yn)
                    yn = np.where(yn > p.y_hi, 2 * p.y_hi - yn, yn)

        # paths already inactive at the start of the step stay frozen
        X[:, k + 1] = np.where(was_active, xn, X[:, k])
        Y[:, k + 1] = np.where(was_active, yn, Y[:, k])

    cat = lambda parts: (np.concatenate(parts) if parts else np.empty(0, dtype=int))
    return PathBatch(t=times, x=X, y=Y,
                     jump_path=cat(jl_path), jump_step=cat(jl_step),
                     jump_component=cat(jl_comp), jump_atom=cat(jl_atom),
                     exited=exited, exit_step=exit_step, reflections=reflections,
                     nonfinite=nonfinite, start=(float(t0), float(x0), float(y0)),
                     config=cfg, spec=p)


def _discount_increments(p: ProblemSpec, batch: PathBatch) -> np.ndarray:
    """Trapezoid integral of the discount rate along each path, per step."""
    n, m = batch.n_paths, batch.n_steps
    out = np.zeros((n, m))
    r_prev = _eval_on_paths(p.coefficients.discount, float(batch.t[0]),
                            batch.x[:, 0], batch.y[:, 0])
    for k in range(m):
        dt = float(batch.t[k + 1] - batch.t[k])
        r_next = _eval_on_paths(p.coefficients.discount, float(batch.t[k + 1]),
                                batch.x[:, k + 1], batch.y[:, k + 1])
        out[:, k] = 0.5 * (r_prev + r_next) * dt
        r_prev = r_next
    return out


def _nearest_indices(grid: Grid, t: float, x: np.ndarray, y: np.ndarray):
    kt = int(np.clip(round(t / grid.dt), 0, grid.nt - 1))
    ix = np.clip(np.round((x - grid.x[0]) / grid.hx).astype(int), 0, grid.nx - 1)
    jy = np.clip(np.round((y - grid.y[0]) / grid.hy).astype(int), 0, grid.ny - 1)
    return kt, ix, jy


def _stop_steps(batch: PathBatch, res: SolveResult) -> np.ndarray:
    """First step whose nearest grid node is in the exercise mask (else last)."""
    grid = res.grid
    n, m = batch.n_paths, batch.n_steps
    stop = np.full(n, m, dtype=int)
    undecided = np.ones(n, dtype=bool)
    for k in range(m + 1):
        if not undecided.any():
            break
        kt, ix, jy = _nearest_indices(grid, float(batch.t[k]),
                                      batch.x[undecided, k], batch.y[undecided, k])
        hit = res.mask[kt, ix, jy]
        idx = np.flatnonzero(undecided)[hit]
        stop[idx] = k
        undecided[idx] = False
    return stop


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def evaluate_policy(batch: PathBatch, res: SolveResult, p: ProblemSpec) -> PolicyEstimate:
    """Discounted gain of stopping at the solver's exercise set, pathwise.

    A feasible stopping rule, so the estimate is a lower bound for the
    value at the start point up to time-discretization bias.
    """
    if batch.spec != res.spec or batch.spec != p:
        raise SpecMismatch("batch, solve and problem do not share a spec")
    stop = _stop_steps(batch, res)
    disc_inc = _discount_increments(p, batch)
    cum = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(disc_inc, axis=1)],
                         axis=1)
    rows = np.arange(batch.n_paths)
    payoff = np.empty(batch.n_paths)
    for k in np.unique(stop):
        sel = stop == k
        g = _eval_on_paths(p.gain.g, float(batch.t[k]), batch.x[sel, k], batch.y[sel, k])
        payoff[sel] = g
    values = np.exp(-cum[rows, stop]) * payoff
    mean, se = _mean_se(values)
    hist = np.bincount(stop, minlength=batch.n_steps + 1)
    return PolicyEstimate(value=mean, std_error=se, n_paths=batch.n_paths,
                          stop_histogram=hist)


def _basis(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    cols = [np.ones_like(x)]
    for total in range(1, degree + 1):
        for a in range(total + 1):
            cols.append(x ** (total - a) * y**a)
    return np.stack(cols, axis=1)


def longstaff_schwartz(batch: PathBatch, p: ProblemSpec,
                       basis_degree: int = 2) -> PolicyEstimate:
    """In-sample regression estimate of the value at the batch start.

    Backward induction over the simulation steps: continuation values are
    regressed on a polynomial basis in (x, y); exercise replaces the
    cashflow where the immediate gain beats the fitted continuation.  A
    rank-deficient basis falls back to a lower degree (minimum-norm least
    squares at degree 1), noted on the estimate.
    """
    if basis_degree not in (2, 3):
        raise ValueError("basis_degree must be 2 or 3")
    n, m = batch.n_paths, batch.n_steps
    disc_inc = _discount_increments(p, batch)
    g_T = _eval_on_paths(p.gain.terminal_expr(), float(batch.t[m]),
                         batch.x[:, m], batch.y[:, m])
    cashflow = g_T.copy()
    notes = set()
    n_basis_max = len(_basis(np.zeros(1), np.zeros(1), basis_degree)[0])
    for k in range(m - 1, 0, -1):
        cashflow = cashflow * np.exp(-disc_inc[:, k])
        xk, yk = batch.x[:, k], batch.y[:, k]
        gain_k = _eval_on_paths(p.gain.g, float(batch.t[k]), xk, yk)
        # regress where exercising could pay: the strictly-positive-gain
        # paths for payoff-style gains, every path otherwise
        sel = gain_k > 0
        if sel.sum() < 5 * n_basis_max or sel.all():
            sel = np.ones(n, dtype=bool)
        if not sel.any():
            continue
        degree = basis_degree
        while True:
            A = _basis(xk[sel], yk[sel], degree)
            coef, _, rank, _ = np.linalg.lstsq(A, cashflow[sel], rcond=None)
            if rank == A.shape[1] or degree == 1:
                if rank < A.shape[1]:
                    notes.add("rank-deficient basis; minimum-norm fit at degree 1")
                break
            degree -= 1
            notes.add(f"rank-deficient basis; degree lowered to {degree}")
        continuation = A @ coef
        exercise = np.zeros(n, dtype=bool)
        exercise[sel] = gain_k[sel] >= continuation
        cashflow = np.where(exercise, gain_k, cashflow)
    cashflow = cashflow * np.exp(-disc_inc[:, 0])
    # immediate exercise at the start competes with the regressed estimate
    g0 = _eval_on_paths(p.gain.g, float(batch.t[0]), batch.x[:, 0], batch.y[:, 0])
    mean, se = _mean_se(cashflow)
    if float(np.mean(g0)) >= mean:
        mean, se = float(np.mean(g0)), 0.0
        notes.add("immediate exercise optimal at the start point")
    return PolicyEstimate(value=mean, std_error=se, n_paths=n,
                          stop_histogram=np.zeros(m + 1, dtype=int),
                          notes="; ".join(sorted(notes)))


@dataclass(frozen=True)
class MartingaleTable:
    checkpoints: np.ndarray
    stopped_mean: np.ndarray
    stopped_se: np.ndarray
    unstopped_mean: np.ndarray
    unstopped_se: np.ndarray

    def to_dict(self) -> dict:
        return {"checkpoints": [float(v) for v in self.checkpoints],
                "stopped_mean": [float(v) for v in self.stopped_mean],
                "stopped_se": [float(v) for v in self.stopped_se],
                "unstopped_mean": [float(v) for v in self.unstopped_mean],
                "unstopped_se": [float(v) for v in self.unstopped_se]}


def _interp_value(res: SolveResult, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the value field at the nearest time level."""
    grid = res.grid
    kt = int(np.clip(round(t / grid.dt), 0, grid.nt - 1))
    gx = np.clip((x - grid.x[0]) / grid.hx, 0.0, grid.nx - 1.0)
    gy = np.clip((y - grid.y[0]) / grid.hy, 0.0, grid.ny - 1.0)
    i0 = np.clip(np.floor(gx).astype(int), 0, grid.nx - 2)
    j0 = np.clip(np.floor(gy).astype(int), 0, grid.ny - 2)
    fx = gx - i0
    fy = gy - j0
    v = res.v[kt]
    return ((1 - fx) * (1 - fy) * v[i0, j0] + fx * (1 - fy) * v[i0 + 1, j0]
            + (1 - fx) * fy * v[i0, j0 + 1] + fx * fy * v[i0 + 1, j0 + 1])


def martingale_check(batch: PathBatch, res: SolveResult, p: ProblemSpec,
                     checkpoints: list[float]) -> MartingaleTable:
    """Means of the discounted value process at the checkpoints.

    The process stopped at the exercise rule should be mean-constant; the
    unstopped process should have nonincreasing means (within noise).
    """
    if batch.spec != res.spec or batch.spec != p:
        raise SpecMismatch("batch, solve and problem do not share a spec")
    stop = _stop_steps(batch, res)
    disc_inc = _discount_increments(p, batch)
    cum = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(disc_inc, axis=1)],
                         axis=1)
    rows = np.arange(batch.n_paths)

    sm, ss, um, us = [], [], [], []
    for s in checkpoints:
        k = int(np.clip(np.searchsorted(batch.t, s + 1e-12) - 1, 0, batch.n_steps))
        if batch.t[min(k + 1, batch.n_steps)] <= s + 1e-12:
            k = min(k + 1, batch.n_steps)
        # unstopped process at step k
        Zu = np.exp(-cum[:, k]) * _interp_value(res, float(batch.t[k]),
                                                batch.x[:, k], batch.y[:, k])
        mu, su_ = _mean_se(Zu)
        um.append(mu)
        us.append(su_)
        # stopped process: freeze each path at min(k, stop step)
        kk = np.minimum(stop, k)
        xs = batch.x[rows, kk]
        ys = batch.y[rows, kk]
        Zs = np.empty(batch.n_paths)
        for step in np.unique(kk):
            sel = kk == step
            Zs[sel] = np.exp(-cum[sel, step]) * _interp_value(
                res, float(batch.t[step]), xs[sel], ys[sel])
        ms, ses = _mean_se(Zs)
        sm.append(ms)
        ss.append(ses)
    return MartingaleTable(checkpoints=np.asarray(checkpoints, dtype=float),
                           stopped_mean=np.asarray(sm), stopped_se=np.asarray(ss),
                           unstopped_mean=np.asarray(um), unstopped_se=np.asarray(us))
