"""Direct action minimization over discretized curves.

Curves are broken segments with a uniform time step; the action uses the
midpoint rule, so the discrete Euler-Lagrange system is block
tridiagonal and Newton steps cost O(N n^3) via a banded solve.  Endpoint
and winding class are held fixed during a minimization; the cohomology
term -w.dx telescopes and only shifts reported action values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .model import LagrangianModel, TangentState, torus_delta, wrap

__all__ = [
    "DiscreteCurve",
    "LoopMinimizer",
    "CurveMinimizationError",
    "discrete_action",
    "el_residual",
    "initial_tangent",
    "minimize_endpoint",
    "h_t_direct",
    "minimize_loop",
    "sample_radial",
]

TIME_FLOOR = 1e-3


class CurveMinimizationError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DiscreteCurve:
    """Broken-segment curve: N+1 lifted nodes in R^n, uniform step delta."""

    nodes: np.ndarray
    delta: float

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[0] < 3:
            raise ValueError("need at least N = 2 segments (3 nodes)")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_segments(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.delta * self.n_segments

    @property
    def winding(self) -> np.ndarray:
        """Integer displacement class for loop curves."""
        return np.round(self.nodes[-1] - self.nodes[0]).astype(int)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def velocities(self) -> np.ndarray:
        return np.diff(self.nodes, axis=0) / self.delta

    def write_csv(self, path, float_fmt="%.17g"):
        n = self.nodes.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join(["t"] + [f"x{i+1}" for i in range(n)]) + "\n")
            for k, node in enumerate(self.nodes):
                vals = [k * self.delta] + list(node)
                fh.write(",".join(float_fmt % v for v in vals) + "\n")


@dataclass(frozen=True)
class LoopMinimizer:
    curve: DiscreteCurve
    winding: np.ndarray
    action: float
    initial_tangent: TangentState
    residual: float


def _segment_data(model: LagrangianModel, mids, vels):
    """Per-segment L_x, L_v over all segments at once."""
    Lv = vels @ model.A
    Lx = -model.potential.gradient(mids)
    if model.has_drift:
        Lv = Lv + model.b_value(mids)
        Db = model.b_jacobian(mids)  # (N, k, j) = d b_k / d x_j
        Lx = Lx + np.einsum("skj,sk->sj", Db, vels)
    return Lx, Lv


def discrete_action(model: LagrangianModel, curve: DiscreteCurve, w=None,
                    c_offset: float = 0.0) -> float:
    """Midpoint-rule action sum delta * [L(mid, dx/delta) - w.dx/delta + c]."""
    mids = curve.midpoints()
    vels = curve.velocities()
    d = curve.delta
    kin = 0.5 * np.einsum("si,ij,sj->s", vels, model.A, vels)
    val = kin - model.potential.value(mids)
    if model.has_drift:
        val = val + np.einsum("si,si->s", model.b_value(mids), vels)
    total = d * float(np.sum(val)) + c_offset * curve.duration
    if w is not None:
        total -= float(np.asarray(w, dtype=float) @ (curve.nodes[-1] - curve.nodes[0]))
    return total


def _interior_gradient(model, curve):
    """Gradient of the (untwisted) action w.r.t. interior nodes, (N-1, n)."""
    d = curve.delta
    Lx, Lv = _segment_data(model, curve.midpoints(), curve.velocities())
    return 0.5 * d * (Lx[:-1] + Lx[1:]) + Lv[:-1] - Lv[1:]


def el_residual(model: LagrangianModel, curve: DiscreteCurve) -> float:
    """Sup-norm of the discrete Euler-Lagrange system at interior nodes."""
    return float(np.max(np.abs(_interior_gradient(model, curve))))


def initial_tangent(model: LagrangianModel, curve: DiscreteCurve) -> TangentState:
    """Velocity at the left endpoint read from the first segment.

    Uses the discrete conjugate momentum p0 = L_v - (delta/2) L_x at the
    first midpoint, which matches the continuous momentum to O(delta^2).
    """
    d = curve.delta
    m0 = curve.midpoints()[:1]
    v0 = curve.velocities()[:1]
    Lx, Lv = _segment_data(model, m0, v0)
    p0 = Lv[0] - 0.5 * d * Lx[0]
    x0 = wrap(curve.nodes[0])
    u = p0 - model.b_value(x0) if model.has_drift else p0
    return TangentState(x0, model.A_inv @ u)


def _hessian_banded(model, curve, lam):
    """Banded (lower+upper = 2n-1) Hessian of the action at interior nodes."""
    d = curve.delta
    mids = curve.midpoints()
    vels = curve.velocities()
    N = curve.n_segments
    n = curve.nodes.shape[1]
    A = model.A
    Lxx = -model.potential.hessian(mids)
    if model.has_drift:
        Db = model.b_jacobian(mids)  # (N, k, j)
        for k, bk in enumerate(model.b):
            Lxx = Lxx + vels[:, k, None, None] * bk.hessian(mids)
        Lvx = Db  # (N, j<-v comp, k<-x comp): d^2 L / dv_j dx_k = d b_j / d x_k
        Lxv = np.transpose(Db, (0, 2, 1))
    else:
        Lvx = Lxv = np.zeros((N, n, n))
    q = d / 4.0 * Lxx
    r = 1.0 / d * A
    f_aa = q - 0.5 * Lxv - 0.5 * Lvx + r
    f_ab = q + 0.5 * Lxv - 0.5 * Lvx - r
    f_bb = q + 0.5 * Lxv + 0.5 * Lvx + r

    m = (N - 1) * n
    band = 2 * n - 1
    ab = np.zeros((2 * band + 1, m))

    def put(i, j, val):
        ab[band + i - j, j] += val

    for s in range(1, N):  # interior node s -> unknown block s-1
        base = (s - 1) * n
        diag = f_bb[s - 1] + f_aa[s] + lam * np.eye(n)
        for a in range(n):
            for b_ in range(n):
                put(base + a, base + b_, diag[a, b_])
        if s < N - 1:
            off = f_ab[s]
            for a in range(n):
                for b_ in range(n):
                    put(base + a, base + n + b_, off[a, b_])
                    put(base + n + b_, base + a, off[a, b_])
    return ab, band


def minimize_endpoint(model: LagrangianModel, x, y, winding, T: float, N: int,
                      w=None, tol: float = 1e-8, max_iter: int = 200) -> DiscreteCurve:
    """Minimize the fixed-endpoint action in a fixed winding class.

    Parameters
    ----------
    x, y : torus points (any lift; reduced internally)
    winding : integer vector added to the minimal lift of y - x
    T, N : duration and number of segments (delta = T/N)
    w : cohomology class; only shifts the reported action, so the
        minimization itself is class-independent.

    The curve is seeded with the straight lift segment and polished by a
    Levenberg-damped Newton iteration on the discrete Euler-Lagrange
    system; on stall it falls back to gradient steps.  Raises
    CurveMinimizationError when the first-order residual cannot be
    brought below ``tol``.
    """
    if T <= TIME_FLOOR:
        raise ValueError(f"T = {T} at or below the time floor {TIME_FLOOR}")
    if N < 2:
        raise ValueError("need N >= 2 segments")
    x = wrap(np.atleast_1d(np.asarray(x, dtype=float)))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    disp = torus_delta(x, y) + np.asarray(winding, dtype=float)
    nodes = x[None, :] + np.linspace(0.0, 1.0, N + 1)[:, None] * disp[None, :]
    curve = DiscreteCurve(nodes, T / N)
    n = nodes.shape[1]

    def act(c):
        return discrete_action(model, c)

    a_cur = act(curve)
    lam = 0.0
    for _ in range(max_iter):
        g = _interior_gradient(model, curve)
        res = float(np.max(np.abs(g)))
        if res <= tol:
            return curve
        stepped = False
        for _ in range(40):
            ab, band = _hessian_banded(model, curve, lam)
            try:
                step = solve_banded((band, band), ab, -g.ravel())
            except np.linalg.LinAlgError:
                lam = max(10.0 * lam, 1e-8)
                continue
            trial_nodes = curve.nodes.copy()
            trial_nodes[1:-1] += step.reshape(N - 1, n)
            trial = DiscreteCurve(trial_nodes, curve.delta)
            a_try = act(trial)
            g_try = _interior_gradient(model, trial)
            if a_try < a_cur + 1e-14 or np.max(np.abs(g_try)) < res:
                curve, a_cur = trial, a_try
                lam = 0.0 if lam < 1e-8 else lam / 10.0
                stepped = True
                break
            lam = max(10.0 * lam, 1e-8)
        if not stepped:
            # gradient descent fallback with backtracking
            scale = curve.delta
            for _ in range(60):
                trial_nodes = curve.nodes.copy()
                trial_nodes[1:-1] -= scale * g
                trial = DiscreteCurve(trial_nodes, curve.delta)
                a_try = act(trial)
                if a_try < a_cur:
                    curve, a_cur = trial, a_try
                    stepped = True
                    break
                scale *= 0.5
            if not stepped:
                raise CurveMinimizationError(
                    f"endpoint minimization stalled at residual {res:.3e}", residual=res)
    res = el_residual(model, curve)
    if res > tol:
        raise CurveMinimizationError(
            f"no convergence after {max_iter} iterations (residual {res:.3e})",
            residual=res)
    return curve


def _default_segments(T: float) -> int:
    return max(32, int(math.ceil(32 * T)))


def _winding_lower_bound(model, disp, T, w):
    """Cheap lower bound for the twisted action in a winding class."""
    mu = float(np.linalg.eigvalsh(model.A)[0])
    d = float(np.linalg.norm(disp))
    u_max = model.potential.sampled_sup(64)
    wv = 0.0 if w is None else float(np.linalg.norm(np.asarray(w))) * d
    drift = 0.0
    if model.has_drift:
        drift = sum(bi.sampled_sup(64) for bi in model.b) * d
    return 0.5 * mu * d * d / T - wv - drift - u_max * T


def h_t_direct(model: LagrangianModel, x, y, T: float, w=None, c: float = 0.0,
               N: int | None = None, K_wind: int = 2) -> float:
    """Finite-time minimal twisted action h_t(x, y) by direct minimization.

    Minimizes over all winding classes |k|_inf <= K_wind and adds the
    per-time offset c.
    """
    if N is None:
        N = _default_segments(T)
    x = wrap(np.atleast_1d(np.asarray(x, dtype=float)))
    y = wrap(np.atleast_1d(np.asarray(y, dtype=float)))
    n = x.shape[0]
    best = np.inf
    for k in itertools.product(range(-K_wind, K_wind + 1), repeat=n):
        disp = torus_delta(x, y) + np.array(k, dtype=float)
        if _winding_lower_bound(model, disp, T, w) + c * T >= best:
            continue
        curve = minimize_endpoint(model, x, y, np.array(k), T, N, w=w)
        a = discrete_action(model, curve, w=w, c_offset=c)
        best = min(best, a)
    return float(best)


def minimize_loop(model: LagrangianModel, x, T: float, N: int | None = None,
                  w=None, K_wind: int = 2, tie_tol: float = 1e-6):
    """All loop minimizers at base point x over winding classes |k| <= K_wind.

    Returns the LoopMinimizers whose twisted action is within ``tie_tol``
    of the best one (the action offset c plays no role in the argmin).
    """
    if N is None:
        N = _default_segments(T)
    x = wrap(np.atleast_1d(np.asarray(x, dtype=float)))
    n = x.shape[0]
    candidates = []
    best = np.inf
    for k in itertools.product(range(-K_wind, K_wind + 1), repeat=n):
        disp = np.array(k, dtype=float)
        if _winding_lower_bound(model, disp, T, w) >= best + tie_tol:
            continue
        curve = minimize_endpoint(model, x, x, np.array(k), T, N, w=w)
        a = discrete_action(model, curve, w=w)
        best = min(best, a)
        candidates.append((a, np.array(k, dtype=int), curve))
    out = []
    for a, k, curve in candidates:
        if a <= best + tie_tol:
            out.append(LoopMinimizer(curve, k, a, initial_tangent(model, curve),
                                     el_residual(model, curve)))
    out.sort(key=lambda m: m.action)
    return out


def sample_radial(model: LagrangianModel, w, T: float, base_grid,
                  N: int | None = None, K_wind: int = 2):
    """Initial tangents of loop minimizers over a lattice of base points.

    ``base_grid`` is either a per-axis resolution or an iterable of torus
    points.  The returned tangents sample the T-radially-transformed
    minimizing set for the class w.
    """
    n = model.dim
    if isinstance(base_grid, (int, np.integer)):
        axes = [np.arange(base_grid) / base_grid] * n
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    else:
        points = np.atleast_2d(np.asarray(base_grid, dtype=float))
    tangents = []
    for pt in points:
        for mini in minimize_loop(model, pt, T, N=N, w=w, K_wind=K_wind):
            tangents.append(mini.initial_tangent)
    return tangents
