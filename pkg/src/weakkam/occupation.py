"""Discrete occupation measures, Mather's alpha function, and diagnostics.

A minimizing holonomic measure is realized as the uniform probability on
an optimal mean cycle of the action kernel: flow conservation holds
node-wise by construction, and the measure's mean twisted action per
unit time is -alpha(w).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .barrier import (
    ActionKernel,
    KernelFactory,
    StateGrid,
    critical_value,
    default_v_max,
)
from .model import FourierField, LagrangianModel

__all__ = [
    "DiscreteMeasure",
    "AlphaSample",
    "GridParams",
    "mather_measure",
    "mather_support",
    "alpha",
    "alpha_grid",
    "convexity_check",
    "perturbation_continuity",
    "ConvexityReport",
    "ContinuityReport",
]


@dataclass(frozen=True)
class GridParams:
    """Grid discretization bundle passed around the alpha/barrier pipeline."""

    size: int = 32
    delta: float = 0.1
    v_max: float | None = None  # None -> 4 (1 + max |w|) over the sweep

    def grid(self, dim: int) -> StateGrid:
        return StateGrid(dim, self.size)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Flow-conserving probability on kernel edges (an occupation measure)."""

    nodes: np.ndarray        # cycle nodes, in order
    edges: np.ndarray        # (m, 2) index pairs following the cycle
    weights: np.ndarray      # uniform 1/m
    mean_action: float       # mean twisted edge action per unit time
    rotation: np.ndarray     # mean displacement per unit time
    degenerate: bool         # other optimal cycles exist

    def conservation_defect(self, npoints: int) -> float:
        into = np.zeros(npoints)
        out = np.zeros(npoints)
        np.add.at(out, self.edges[:, 0], self.weights)
        np.add.at(into, self.edges[:, 1], self.weights)
        return float(np.max(np.abs(into - out)))


@dataclass(frozen=True)
class AlphaSample:
    w: np.ndarray
    alpha: float
    measure: DiscreteMeasure


def mather_measure(kernel: ActionKernel) -> DiscreteMeasure:
    """Uniform occupation measure on one optimal mean cycle of the kernel."""
    cv = critical_value(kernel)
    cyc = cv.cycle
    m = len(cyc)
    edges = np.column_stack([cyc, np.roll(cyc, -1)])
    weights = np.full(m, 1.0 / m)
    disp = np.zeros(kernel.grid.dim)
    for i, j in edges:
        d, _ = kernel.factory.best_displacement(int(i), int(j), kernel.w)
        disp += d
    rotation = disp / (m * kernel.delta)
    return DiscreteMeasure(cyc, edges, weights, cv.cycle_mean / kernel.delta,
                           rotation, cv.degenerate)


def mather_support(kernel: ActionKernel, eps: float = 1e-6) -> np.ndarray:
    """Edges lying on eps-optimal cycles: the Mather-set approximation.

    Returns the (m, 2) index pairs of kernel edges that are tight for the
    reduced weights within eps, restricted to the recurrent part.
    """
    from ._kernels import karp_table
    from .barrier import _tight_adjacency

    W = kernel.matrix
    V = W.shape[0]
    F = karp_table(W)
    ks = np.arange(V)
    lam = float(np.min(np.max((F[V][None, :] - F[:V]) / (V - ks)[:, None], axis=0)))
    pot = np.min(F - lam * np.arange(V + 1)[:, None], axis=0)
    tight = _tight_adjacency(W, pot, lam, eps)
    keep = np.ones(V, dtype=bool)
    for _ in range(V):
        t = tight & keep[None, :] & keep[:, None]
        new = keep & t.any(axis=1) & t.any(axis=0)
        if np.array_equal(new, keep):
            break
        keep = new
    t = tight & keep[None, :] & keep[:, None]
    return np.argwhere(t)


def _critical_with_escalation(factory: KernelFactory, w, max_escalations: int = 3):
    """Critical value with the v_max cap check (auto-escalate on contact)."""
    fac = factory
    for _ in range(max_escalations + 1):
        kernel = fac.kernel(w)
        cv = critical_value(kernel)
        speeds = []
        edges = np.column_stack([cv.cycle, np.roll(cv.cycle, -1)])
        for i, j in edges:
            d, _ = fac.best_displacement(int(i), int(j), w)
            speeds.append(np.linalg.norm(d) / fac.delta)
        if max(speeds) < 0.95 * fac.v_max:
            return kernel, cv
        fac = KernelFactory(fac.model, fac.grid, fac.delta, 1.5 * fac.v_max)
    return kernel, cv


def alpha(model: LagrangianModel, w, params: GridParams = GridParams()) -> AlphaSample:
    """alpha(w) = c(L - w.dx), with the minimizing occupation measure."""
    w = np.asarray(w, dtype=float)
    v_max = params.v_max if params.v_max is not None else default_v_max(w)
    factory = KernelFactory(model, params.grid(model.dim), params.delta, v_max)
    kernel, cv = _critical_with_escalation(factory, w)
    return AlphaSample(w, cv.c, mather_measure(kernel))


def _lattice(w_box: float, resolution: int, dim: int) -> np.ndarray:
    axis = np.linspace(-w_box, w_box, resolution) if resolution > 1 else np.array([0.0])
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def alpha_grid(model: LagrangianModel, w_box: float, resolution: int,
               params: GridParams = GridParams()) -> list:
    """Sample alpha on the lattice [-w_box, w_box]^n with a shared factory."""
    ws = _lattice(w_box, resolution, model.dim)
    v_max = params.v_max if params.v_max is not None else default_v_max([w_box] * model.dim)
    factory = KernelFactory(model, params.grid(model.dim), params.delta, v_max)
    samples = []
    for w in ws:
        kernel, cv = _critical_with_escalation(factory, w)
        samples.append(AlphaSample(w.copy(), cv.c, mather_measure(kernel)))
    return samples


@dataclass(frozen=True)
class ConvexityReport:
    checked: int
    worst_violation: float
    worst_triple: tuple | None

    @property
    def passed(self) -> bool:
        return self.worst_violation <= 0.0


def convexity_check(samples, tol: float = 0.0) -> ConvexityReport:
    """Midpoint convexity on the sample lattice.

    For every pair of sampled classes whose midpoint is also sampled,
    verifies alpha(w1) + alpha(w2) >= 2 alpha(mid) - tol and reports the
    worst violation (positive = violated by that amount beyond tol).
    """
    ws = np.array([s.w for s in samples])
    vals = np.array([s.alpha for s in samples])
    if len(ws) < 3:
        return ConvexityReport(0, -np.inf, None)
    index = {tuple(np.round(w, 12)): k for k, w in enumerate(ws)}
    checked = 0
    worst = -np.inf
    worst_triple = None
    for a, b in itertools.combinations(range(len(ws)), 2):
        mid = 0.5 * (ws[a] + ws[b])
        k = index.get(tuple(np.round(mid, 12)))
        if k is None or k in (a, b):
            continue
        checked += 1
        violation = 2.0 * vals[k] - vals[a] - vals[b] - tol
        if violation > worst:
            worst = violation
            worst_triple = (tuple(ws[a]), tuple(mid), tuple(ws[b]))
    return ConvexityReport(checked, worst, worst_triple)


@dataclass(frozen=True)
class ContinuityReport:
    c_base: float
    c_perturbed: float
    shift: float
    psi_sup: float
    bound: float

    @property
    def passed(self) -> bool:
        return abs(self.shift) <= self.bound


def perturbation_continuity(model: LagrangianModel, psi: FourierField,
                            params: GridParams = GridParams(),
                            grid_tol: float = 1e-9) -> ContinuityReport:
    """Check |c(L + psi) - c(L)| <= sup |psi| + grid_tol on one shared grid.

    The two critical values are computed with the same discretization, so
    the bound holds up to the sampled estimate of sup |psi| (the edge
    weights of the two kernels differ by at most delta * sup |psi|).
    """
    v_max = params.v_max if params.v_max is not None else default_v_max()
    grid = params.grid(model.dim)
    base = KernelFactory(model, grid, params.delta, v_max)
    pert = KernelFactory(model.add_to_lagrangian(psi), grid, params.delta, v_max)
    c0 = critical_value(base.kernel()).c
    c1 = critical_value(pert.kernel()).c
    sup = psi.sampled_sup(256 if model.dim == 1 else 128)
    return ContinuityReport(c0, c1, c1 - c0, sup, sup + grid_tol)
