"""Hamiltonian flow integration, linearization, and periodic orbits.

Fixed-step classical RK4 on Hamilton's equations; the variational system
is integrated with the same stepper so transported frames approximate
the flow differential.  Energy drift is measured and stored rather than
structurally suppressed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (
    CotangentState,
    LagrangianModel,
    eval_hamiltonian,
    hamiltonian_vector_field,
    torus_delta,
    wrap,
)

__all__ = [
    "Trajectory",
    "PeriodicOrbit",
    "FlowError",
    "NoConvergenceError",
    "integrate",
    "integrate_variational",
    "frames_along",
    "find_periodic",
    "orbit_is_graph",
    "symplectic_defect",
    "standard_symplectic_matrix",
    "DEFAULT_H_INT",
    "MAX_STEPS",
]

DEFAULT_H_INT = 1e-3
MAX_STEPS = 10**7


class FlowError(RuntimeError):
    pass


class NoConvergenceError(FlowError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Trajectory:
    """Sampled orbit of the Hamiltonian flow.

    ``xs`` holds the continuous lift of the base coordinates (not reduced
    mod 1), so windings are readable from the endpoints.
    """

    t0: float
    times: np.ndarray
    xs: np.ndarray
    ps: np.ndarray
    h_int: float
    energy: np.ndarray
    energy_drift: float

    @property
    def final(self) -> CotangentState:
        return CotangentState(wrap(self.xs[-1]), self.ps[-1])

    def state(self, i: int) -> CotangentState:
        return CotangentState(wrap(self.xs[i]), self.ps[i])

    def __len__(self):
        return len(self.times)

    def write_csv(self, path, float_fmt="%.17g"):
        n = self.xs.shape[1]
        header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)] + ["H"]
        data = np.column_stack([self.times, self.xs, self.ps, self.energy])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in data:
                fh.write(",".join(float_fmt % v for v in row) + "\n")


@dataclass(frozen=True)
class PeriodicOrbit:
    anchor: CotangentState
    period: float
    monodromy: np.ndarray
    floquet: np.ndarray
    residual: float
    trajectory: Trajectory


def _nsteps(t: float, h_int: float) -> int:
    if h_int <= 0:
        raise ValueError("h_int must be positive")
    steps = max(1, math.ceil(abs(t) / h_int))
    if steps > MAX_STEPS:
        raise FlowError(f"|t|/h_int = {steps} exceeds the step cap {MAX_STEPS}")
    return steps


def integrate(model: LagrangianModel, start: CotangentState, t: float,
              h_int: float = DEFAULT_H_INT, keep_every: int = 1) -> Trajectory:
    """Flow (x, p) for time t (either sign); 4th-order accurate in h_int."""
    if t == 0.0:
        z = start.as_vector()
        e = eval_hamiltonian(model, start)
        n = model.dim
        return Trajectory(0.0, np.zeros(1), z[None, :n].copy(), z[None, n:].copy(),
                          h_int, np.array([e]), 0.0)
    steps = _nsteps(t, h_int)
    tables = model.flow_tables()
    samples = _kernels.rk4_flow(start.as_vector(), float(t), steps, int(keep_every), *tables)
    n = model.dim
    xs = samples[:, :n]
    ps = samples[:, n:]
    kept = np.arange(0, steps + 1, keep_every)
    if kept[-1] != steps:
        kept = np.append(kept, steps)
    times = kept * (t / steps)
    energies = _energy_along(model, xs, ps)
    drift = float(np.max(np.abs(energies - energies[0])))
    return Trajectory(0.0, times, xs, ps, h_int, energies, drift)


def _energy_along(model: LagrangianModel, xs, ps) -> np.ndarray:
    u = ps - model.b_value(xs) if model.has_drift else ps
    kin = 0.5 * np.einsum("ij,jk,ik->i", u, model.A_inv, u)
    return kin + model.potential.value(xs)


def integrate_variational(model: LagrangianModel, start: CotangentState, t: float,
                          h_int: float = DEFAULT_H_INT):
    """Integrate the flow and its linearization; returns (Trajectory, frame).

    The frame approximates DPhi_t(start) in (dx, dp) coordinates.
    """
    n = model.dim
    if t == 0.0:
        return integrate(model, start, 0.0, h_int), np.eye(2 * n)
    steps = _nsteps(t, h_int)
    tables = model.flow_tables()
    keep = max(1, steps // 512)
    idx = np.arange(0, steps + 1, keep)
    if idx[-1] != steps:
        idx = np.append(idx, steps)
    zs, Ms = _kernels.rk4_flow_variational(
        start.as_vector(), np.eye(2 * n), float(t), steps, idx.astype(np.int64), *tables)
    xs = zs[:, :n]
    ps = zs[:, n:]
    times = idx * (t / steps)
    energies = _energy_along(model, xs, ps)
    drift = float(np.max(np.abs(energies - energies[0])))
    traj = Trajectory(0.0, times, xs, ps, h_int, energies, drift)
    return traj, Ms[-1]


def frames_along(model: LagrangianModel, start: CotangentState, times,
                 h_int: float = DEFAULT_H_INT):
    """States and frames DPhi_t(start) at the requested times.

    All times must share one sign (a single integration sweep).  Times
    are snapped to the step grid of h_int; returns (times, states
    (m, 2n), frames (m, 2n, 2n)) ordered by |t|.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("need at least one sample time")
    if np.any(times > 0) and np.any(times < 0):
        raise ValueError("frames_along needs times of a single sign")
    sign = -1.0 if np.any(times < 0) else 1.0
    mags = np.sort(np.abs(times))
    t_end = float(mags[-1])
    if t_end == 0.0:
        z = start.as_vector()
        return times, z[None, :], np.eye(2 * model.dim)[None, :, :]
    steps = _nsteps(t_end, h_int)
    idx = np.unique(np.clip(np.round(mags / t_end * steps).astype(np.int64), 0, steps))
    tables = model.flow_tables()
    zs, Ms = _kernels.rk4_flow_variational(
        start.as_vector(), np.eye(2 * model.dim), sign * t_end, steps, idx, *tables)
    return sign * idx * (t_end / steps), zs, Ms


def standard_symplectic_matrix(n: int) -> np.ndarray:
    """J for the form omega = sum dx_i ^ dp_i: omega(u, v) = u.J v."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def symplectic_defect(frame: np.ndarray) -> float:
    """sup-norm of M^T J M - J; zero for an exact flow differential."""
    n = frame.shape[0] // 2
    J = standard_symplectic_matrix(n)
    return float(np.max(np.abs(frame.T @ J @ frame - J)))


def _wrapped_residual(model, z_end: np.ndarray, z0: np.ndarray) -> np.ndarray:
    n = model.dim
    r = np.empty(2 * n)
    r[:n] = torus_delta(z0[:n], z_end[:n])
    r[n:] = z_end[n:] - z0[n:]
    return r


def _shoot_symmetric(model, z, T, h_int):
    """Residual Phi_{T/2}(z) - Phi_{-T/2}(z) and its derivatives.

    A zero of this map lies on a T-periodic orbit; splitting the period
    halves the exponential error amplification near hyperbolic orbits.
    """
    n = model.dim
    state = CotangentState(z[:n], z[n:])
    traj_f, M_f = integrate_variational(model, state, T / 2.0, h_int)
    traj_b, M_b = integrate_variational(model, state, -T / 2.0, h_int)
    z_f = np.concatenate([traj_f.xs[-1], traj_f.ps[-1]])
    z_b = np.concatenate([traj_b.xs[-1], traj_b.ps[-1]])
    R = _wrapped_residual(model, z_f, z_b)
    X_f = hamiltonian_vector_field(model, traj_f.final)
    X_b = hamiltonian_vector_field(model, traj_b.final)
    return R, M_f - M_b, 0.5 * (X_f + X_b)


def find_periodic(model: LagrangianModel, guess: CotangentState, T_guess: float,
                  h_int: float = DEFAULT_H_INT, tol: float = 1e-9,
                  max_iter: int = 60, fix_period: bool = False) -> PeriodicOrbit:
    """Levenberg-Marquardt search for a periodic orbit near (guess, T_guess).

    The flow-direction null space is removed by freezing the base
    coordinate with the largest velocity component at the guess; the
    remaining 2n-1 phase-space coordinates (plus the period, unless
    ``fix_period`` pins T = T_guess as the second gauge) are the unknowns
    of the shooting system.  ``fix_period`` selects a member of a
    degenerate family, e.g. orbits with p.T = const on product models.
    """
    n = model.dim
    if T_guess <= 0:
        raise ValueError("T_guess must be positive")
    v0 = hamiltonian_vector_field(model, guess)[:n]
    frozen = int(np.argmax(np.abs(v0)))
    free = [i for i in range(2 * n) if i != frozen]

    z = guess.as_vector().copy()
    T = float(T_guess)
    lam = 1e-10
    R, dM, X_mid = _shoot_symmetric(model, z, T, h_int)
    res = float(np.linalg.norm(R))
    # the half-period residual only needs to beat tol/2; the invariant is
    # re-checked on the full period below
    for _ in range(max_iter):
        if res <= 0.25 * tol:
            break
        J = dM[:, free] if fix_period else np.column_stack([dM[:, free], X_mid])
        JtJ = J.T @ J
        JtR = J.T @ R
        accepted = False
        for _ in range(30):
            lhs = JtJ + lam * np.diag(np.maximum(np.diag(JtJ), 1e-12))
            try:
                step = np.linalg.solve(lhs, -JtR)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            z_try = z.copy()
            z_try[free] += step[: len(free)]
            T_try = T if fix_period else T + float(step[-1])
            if T_try <= 10 * h_int:
                lam *= 10.0
                continue
            R_t, dM_t, X_t = _shoot_symmetric(model, z_try, T_try, h_int)
            res_t = float(np.linalg.norm(R_t))
            if res_t < res:
                z, T, R, dM, X_mid, res = z_try, T_try, R_t, dM_t, X_t, res_t
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            raise NoConvergenceError("periodic-orbit search stalled", residual=res)
    if res > 0.25 * tol:
        raise NoConvergenceError(
            f"no periodic orbit found after {max_iter} iterations (residual {res:.3e})",
            residual=res)

    anchor = CotangentState(z[:n], z[n:])
    traj, monodromy = integrate_variational(model, anchor, T, h_int)
    z_end = np.concatenate([traj.xs[-1], traj.ps[-1]])
    residual = float(np.linalg.norm(_wrapped_residual(model, z_end, z)))
    if residual > tol:
        raise NoConvergenceError(
            f"full-period residual {residual:.3e} exceeds tolerance", residual=residual)
    floquet = np.linalg.eigvals(monodromy)
    return PeriodicOrbit(anchor, T, monodromy, floquet, residual, traj)


def orbit_is_graph(orbit: PeriodicOrbit, resolution: float = 1e-3,
                   max_samples: int = 400) -> bool:
    """True iff no two orbit samples share a base point with distinct momenta.

    Base coincidence and momentum separation are both judged at
    ``resolution`` (flat torus metric for the base).
    """
    xs = wrap(orbit.trajectory.xs)
    ps = orbit.trajectory.ps
    if len(xs) > max_samples:
        stride = len(xs) // max_samples + 1
        xs, ps = xs[::stride], ps[::stride]
    d = xs[:, None, :] - xs[None, :, :]
    d -= np.round(d)
    base_close = np.linalg.norm(d, axis=-1) <= resolution
    mom_far = np.linalg.norm(ps[:, None, :] - ps[None, :, :], axis=-1) > resolution
    return not bool(np.any(base_close & mom_far))
