"""Min-plus grid engine: finite-time action kernels, critical values,
Peierls barrier, Mane potential, and projected Aubry sets.

The one-step kernel K[i, j] is the midpoint-rule action of the cheapest
straight step between grid points (minimized over integer lifts, capped
at speed v_max); tropical powers of K realize minimal actions over
longer times.  The critical value is the negative minimum mean cycle of
K per unit time, computed exactly with Karp's algorithm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import karp_table, minplus_matmul
from .model import LagrangianModel, TangentState, wrap

__all__ = [
    "StateGrid",
    "ActionKernel",
    "KernelFactory",
    "BarrierTable",
    "CriticalValueResult",
    "AubryLift",
    "KernelError",
    "build_kernel",
    "tropical_identity",
    "tropical_power",
    "minplus_power",
    "critical_value",
    "peierls_barrier",
    "mane_potential",
    "projected_aubry",
    "aubry_lift",
    "default_v_max",
    "lipschitz_time_floor",
    "sup_lagrangian_unit_ball",
]

TIGHT_EPS = 1e-9


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class StateGrid:
    """Uniform G^n lattice on the torus, C-order flat indexing."""

    dim: int
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("grid size must be at least 2")

    @property
    def npoints(self) -> int:
        return self.size**self.dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.size

    def cell_indices(self) -> np.ndarray:
        """(V, n) integer lattice coordinates."""
        axes = [np.arange(self.size)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def points(self) -> np.ndarray:
        return self.cell_indices() / self.size

    def point(self, i: int) -> np.ndarray:
        return np.array(np.unravel_index(i, (self.size,) * self.dim)) / self.size

    def index_of(self, x) -> int:
        """Flat index of the nearest lattice point."""
        cells = np.mod(np.round(np.asarray(x, dtype=float) * self.size).astype(int), self.size)
        return int(np.ravel_multi_index(tuple(cells), (self.size,) * self.dim))


def default_v_max(w=None) -> float:
    """A-priori velocity cap 4 (1 + max |w_i|)."""
    if w is None:
        return 4.0
    return 4.0 * (1.0 + float(np.max(np.abs(np.asarray(w, dtype=float)))))


class KernelFactory:
    """Shared displacement tables for kernels that differ only in w.

    The class w enters each edge weight linearly through -w.dx, so the
    per-displacement base costs are computed once and re-dotted for
    every w (the alpha sweep rebuilds weights, not geometry).
    """

    def __init__(self, model: LagrangianModel, grid: StateGrid, delta: float,
                 v_max: float):
        if delta <= 0:
            raise ValueError("delta must be positive")
        if grid.dim != model.dim:
            raise ValueError("grid dimension does not match the model")
        reach = v_max * delta
        if reach < grid.spacing:
            raise KernelError(
                f"band too narrow: v_max*delta = {reach:.4g} < grid spacing "
                f"{grid.spacing:.4g}; the kernel graph would be disconnected")
        self.model = model
        self.grid = grid
        self.delta = float(delta)
        self.v_max = float(v_max)

        G = grid.size
        n = grid.dim
        B = int(np.floor(reach * G))
        offs = [np.arange(-B, B + 1)] * n
        cells = np.stack(np.meshgrid(*offs, indexing="ij"), axis=-1).reshape(-1, n)
        disp = cells / G
        keep = np.linalg.norm(disp, axis=1) <= reach + 1e-12
        self.cells = cells[keep]
        self.disp = disp[keep]
        self.n_disp = len(self.cells)

        # base costs delta * L(x + d/2, d/delta) for every displacement row
        pts = grid.points()
        V = grid.npoints
        vels = self.disp / delta
        kin = 0.5 * np.einsum("ri,ij,rj->r", vels, model.A, vels)
        mids = pts[None, :, :] + 0.5 * self.disp[:, None, :]
        cost = kin[:, None] - model.potential.value(mids)
        if model.has_drift:
            cost = cost + np.einsum("rvi,ri->rv", model.b_value(mids), vels)
        self.cost0 = delta * cost  # (n_disp, V)

        # group displacement rows by column-offset class (cells mod G)
        cls_cells = np.mod(self.cells, G)
        cls_flat = np.ravel_multi_index(tuple(cls_cells.T), (G,) * n)
        self.class_of = cls_flat
        self.class_members: dict[int, np.ndarray] = {}
        for c in np.unique(cls_flat):
            self.class_members[int(c)] = np.flatnonzero(cls_flat == c)
        # column map per class: col[i] = flat((cell_i + class_offset) mod G)
        base_cells = grid.cell_indices()
        self._class_cols = {}
        shape = (G,) * n
        for c, members in self.class_members.items():
            off = np.unravel_index(c, shape)
            cols = np.ravel_multi_index(
                tuple((base_cells[:, k] + off[k]) % G for k in range(n)), shape)
            self._class_cols[c] = cols.astype(np.int64)
        self._V = V

    def kernel(self, w=None) -> "ActionKernel":
        V = self._V
        K = np.full((V, V), np.inf)
        if w is None:
            wdot = np.zeros(self.n_disp)
        else:
            wdot = self.disp @ np.asarray(w, dtype=float)
        rows = np.arange(V)
        for c, members in self.class_members.items():
            vals = self.cost0[members] - wdot[members, None]
            K[rows, self._class_cols[c]] = vals.min(axis=0) if len(members) > 1 else vals[0]
        return ActionKernel(self.grid, self.delta,
                            None if w is None else np.asarray(w, dtype=float),
                            self.v_max, K, self)

    def best_displacement(self, i: int, j: int, w=None):
        """Minimizing lift displacement and cost for the step i -> j."""
        G = self.grid.size
        n = self.grid.dim
        ci = np.array(np.unravel_index(i, (G,) * n))
        cj = np.array(np.unravel_index(j, (G,) * n))
        cls = int(np.ravel_multi_index(tuple((cj - ci) % G), (G,) * n))
        members = self.class_members.get(cls)
        if members is None:
            return None, np.inf
        costs = self.cost0[members, i]
        if w is not None:
            costs = costs - self.disp[members] @ np.asarray(w, dtype=float)
        best = int(np.argmin(costs))
        return self.disp[members[best]], float(costs[best])


@dataclass(frozen=True)
class ActionKernel:
    """One-step min-plus kernel of the twisted Lagrangian on a grid."""

    grid: StateGrid
    delta: float
    w: np.ndarray | None
    v_max: float
    matrix: np.ndarray
    factory: KernelFactory

    @property
    def npoints(self) -> int:
        return self.grid.npoints

    def with_offset(self, c: float) -> np.ndarray:
        """Kernel matrix with the per-step offset c*delta on finite entries."""
        K = self.matrix.copy()
        finite = np.isfinite(K)
        K[finite] += c * self.delta
        return K


def build_kernel(model: LagrangianModel, grid: StateGrid, delta: float,
                 w=None, v_max: float | None = None) -> ActionKernel:
    """One-shot kernel construction (use KernelFactory for w sweeps)."""
    if v_max is None:
        v_max = default_v_max(w)
    return KernelFactory(model, grid, delta, v_max).kernel(w)


def tropical_identity(V: int) -> np.ndarray:
    I = np.full((V, V), np.inf)
    np.fill_diagonal(I, 0.0)
    return I


def tropical_power(M: np.ndarray, k: int) -> np.ndarray:
    """Min-plus matrix power by repeated squaring."""
    if k < 0:
        raise ValueError("power must be non-negative")
    V = M.shape[0]
    result = None
    base = M
    while k > 0:
        if k & 1:
            result = base.copy() if result is None else minplus_matmul(result, base)
        k >>= 1
        if k:
            base = minplus_matmul(base, base)
    return tropical_identity(V) if result is None else result


def minplus_power(kernel: ActionKernel, t_steps: int, c: float = 0.0) -> np.ndarray:
    """Discrete h_{t_steps*delta} table: t_steps-fold min-plus product of
    the kernel with the additive offset c*delta per step."""
    if t_steps < 1:
        raise ValueError("t_steps must be at least 1")
    return tropical_power(kernel.with_offset(c), t_steps)


@dataclass(frozen=True)
class CriticalValueResult:
    """Critical value c = -(min mean cycle)/delta plus the optimal cycle."""

    c: float
    cycle_mean: float
    cycle: np.ndarray
    degenerate: bool

    def __float__(self):
        return self.c


def _tight_adjacency(W, potentials, lam, eps):
    T = potentials[:, None] + W - lam - potentials[None, :] <= eps
    T &= np.isfinite(W)
    return T


def critical_value(kernel: ActionKernel) -> CriticalValueResult:
    """Exact minimum mean cycle of the kernel graph via Karp's algorithm.

    Returns c = -lambda/delta together with one optimal cycle (walked in
    the subgraph of tight edges of the lambda-reduced weights).  The
    ``degenerate`` flag is set when the tight subgraph is strictly larger
    than the returned cycle, i.e. the optimal cycle is not unique.
    """
    W = kernel.matrix
    V = W.shape[0]
    F = karp_table(W)
    ks = np.arange(V)
    with np.errstate(invalid="ignore"):
        ratios = (F[V][None, :] - F[:V]) / (V - ks)[:, None]
    per_node = np.max(ratios, axis=0)
    lam = float(np.min(per_node))

    # shortest-path potentials of the reduced weights W - lam
    potentials = np.min(F - lam * np.arange(V + 1)[:, None], axis=0)
    eps = TIGHT_EPS * (1.0 + abs(lam)) * max(1.0, np.sqrt(V))
    tight = _tight_adjacency(W, potentials, lam, eps)

    keep = np.ones(V, dtype=bool)
    for _ in range(V):
        t = tight & keep[None, :] & keep[:, None]
        new = keep & t.any(axis=1) & t.any(axis=0)
        if np.array_equal(new, keep):
            break
        keep = new
    if not keep.any():
        raise KernelError("no tight cycle found; kernel may be malformed")

    start = int(np.argmax(keep))
    succ = {}
    node = start
    seen = {node: 0}
    order = [node]
    for _ in range(V + 1):
        nxt = int(np.argmax(tight[node] & keep))
        succ[node] = nxt
        if nxt in seen:
            cycle = order[seen[nxt]:]
            break
        seen[nxt] = len(order)
        order.append(nxt)
        node = nxt
    else:
        raise KernelError("tight-subgraph walk failed to close")

    cyc = np.array(cycle, dtype=int)
    weights = W[cyc, np.roll(cyc, -1)]
    mean = float(np.mean(weights))
    if abs(mean - lam) > 1e-7 * (1.0 + abs(lam)):
        raise KernelError(
            f"cycle mean {mean:.3e} disagrees with Karp value {lam:.3e}")
    degenerate = int(keep.sum()) > len(cyc)
    return CriticalValueResult(c=-lam / kernel.delta, cycle_mean=lam,
                               cycle=cyc, degenerate=degenerate)


@dataclass(frozen=True)
class BarrierTable:
    """Windowed Peierls barrier h on the grid (running min over [T0, T1])."""

    h: np.ndarray
    grid: StateGrid
    delta: float
    w: np.ndarray | None
    c_used: float
    t_window: tuple
    residual: float
    converged: bool

    def diagonal(self) -> np.ndarray:
        return np.diag(self.h).copy()

    def value(self, x, y) -> float:
        return float(self.h[self.grid.index_of(x), self.grid.index_of(y)])

    def save(self, directory, stem: str = "barrier", float_fmt="%.17g"):
        """Row-major binary dump plus a JSON sidecar; CSV when dim <= 2."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        bin_path = directory / f"{stem}.bin"
        self.h.astype(np.float64).tofile(bin_path)
        sidecar = {
            "grid": {"dim": self.grid.dim, "size": self.grid.size},
            "delta": self.delta,
            "w": None if self.w is None else [float(v) for v in self.w],
            "c": self.c_used,
            "window": [float(self.t_window[0]), float(self.t_window[1])],
            "residual": self.residual,
            "converged": bool(self.converged),
            "shape": list(self.h.shape),
            "dtype": "float64",
            "order": "row-major",
        }
        (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        if self.grid.dim <= 2:
            with open(directory / f"{stem}.csv", "w") as fh:
                for row in self.h:
                    fh.write(",".join(float_fmt % v for v in row) + "\n")
        return bin_path


def _closure_base(Kc: np.ndarray) -> np.ndarray:
    Cl = Kc.copy()
    d = np.diag_indices_from(Cl)
    Cl[d] = np.minimum(Cl[d], 0.0)
    return Cl


def peierls_barrier(kernel: ActionKernel, c: float | None = None,
                    t0: float = 4.0, t1: float = 64.0,
                    conv_tol: float = 1e-2) -> BarrierTable:
    """Running minimum of the offset power over step counts in [t0, t1].

    The window minimum is assembled as K^s0 (x) (I ^min K)^(s1-s0), so the
    cost is O(log(s1) ) tropical products.  The residual is the sup-norm
    drop contributed by the second half of the window; the table is
    flagged non-converged when it exceeds ``conv_tol``.
    """
    if c is None:
        c = critical_value(kernel).c
    delta = kernel.delta
    s0 = max(1, int(round(t0 / delta)))
    s1 = max(s0 + 2, int(round(t1 / delta)))
    Kc = kernel.with_offset(c)
    P = tropical_power(Kc, s0)
    Cl = _closure_base(Kc)
    half = (s1 - s0) // 2
    rem = (s1 - s0) - 2 * half
    Ch = tropical_power(Cl, half)
    Wa = minplus_matmul(P, Ch)
    Wb = minplus_matmul(Wa, Ch)
    if rem:
        Wb = minplus_matmul(Wb, Cl)
    residual = float(np.max(Wa - Wb))
    return BarrierTable(Wb, kernel.grid, delta, kernel.w, float(c),
                        (s0 * delta, s1 * delta), residual, residual <= conv_tol)


def mane_potential(kernel: ActionKernel, c: float | None = None,
                   t1: float = 64.0) -> np.ndarray:
    """Entrywise min of the offset powers over all step counts in [1, t1/delta]."""
    if c is None:
        c = critical_value(kernel).c
    s1 = max(1, int(round(t1 / kernel.delta)))
    Kc = kernel.with_offset(c)
    if s1 == 1:
        return Kc
    return minplus_matmul(Kc, tropical_power(_closure_base(Kc), s1 - 1))


def projected_aubry(table: BarrierTable, tol: float):
    """Grid points with h(x, x) <= tol and their flat indices."""
    idx = np.flatnonzero(table.diagonal() <= tol)
    return table.grid.points()[idx], idx


@dataclass(frozen=True)
class AubryLift:
    tangents: list
    ties: list


def aubry_lift(model: LagrangianModel, table: BarrierTable, tol: float,
               kernel: ActionKernel) -> AubryLift:
    """Velocity lift of the projected Aubry set.

    For each Aubry base point the velocity comes from the first step of
    the cheapest kernel excursion that returns at barrier cost, i.e. the
    argmin over j of K_c(i, j) + h(j, i).  Near-ties whose velocities
    spread more than one grid cell per step are reported (they would
    violate the Lipschitz-graph property) but not fatal.
    """
    _, idx = projected_aubry(table, tol)
    Kc = kernel.with_offset(table.c_used)
    factory = kernel.factory
    pts = table.grid.points()
    resolution = table.grid.spacing / kernel.delta
    tangents = []
    ties = []
    for i in idx:
        score = Kc[i] + table.h[:, i]
        j_best = int(np.argmin(score))
        tie_eps = 1e-9 * (1.0 + abs(score[j_best]))
        js = np.flatnonzero(score <= score[j_best] + tie_eps)
        vels = []
        for j in js:
            d, _ = factory.best_displacement(i, int(j), kernel.w)
            if d is not None:
                vels.append(d / kernel.delta)
        vels = np.array(vels)
        if len(vels) > 1:
            spread = np.max(np.linalg.norm(vels - vels[0], axis=1))
            if spread > 1.5 * resolution:
                ties.append((int(i), vels))
        d, _ = factory.best_displacement(i, j_best, kernel.w)
        tangents.append(TangentState(pts[i], d / kernel.delta))
    return AubryLift(tangents, ties)


def lipschitz_time_floor(model: LagrangianModel, delta: float, c: float,
                         x_res: int = 128) -> float:
    """Discretization floor for the Mane-potential Lipschitz bound.

    Grid paths cannot spend less than one step of duration delta, so the
    potential between nearby points is bounded below (and above) only up
    to delta * sup_x (L(x, 0) + c), the cost of dwelling one step at the
    worst base point.  This vanishes as delta -> 0.
    """
    n = model.dim
    axes = [np.arange(x_res) / x_res] * n
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    rest_sup = float(np.max(-model.potential.value(xs)))  # sup_x L(x, 0)
    return delta * max(0.0, rest_sup + c)


def sup_lagrangian_unit_ball(model: LagrangianModel, x_res: int = 64,
                             v_res: int = 9) -> float:
    """M1 = sup { L(x, v) : |v| <= 1 } sampled on x- and v-grids."""
    n = model.dim
    axes = [np.arange(x_res) / x_res] * n
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    vax = [np.linspace(-1, 1, v_res)] * n
    vs = np.stack(np.meshgrid(*vax, indexing="ij"), axis=-1).reshape(-1, n)
    vs = vs[np.linalg.norm(vs, axis=1) <= 1.0 + 1e-12]
    kin = 0.5 * np.einsum("ri,ij,rj->r", vs, model.A, vs)
    val = kin[:, None] - model.potential.value(xs)[None, :]
    if model.has_drift:
        val = val + np.einsum("xi,ri->rx", model.b_value(xs), vs)
    return float(np.max(val))
