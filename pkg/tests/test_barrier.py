"""Grid/min-plus engine: kernels, critical values, barriers, Aubry sets."""

import numpy as np
import pytest
from scipy.integrate import quad

from weakkam import barrier as B
from weakkam.model import builtin_model

FLAT = builtin_model("flat")
PEND = builtin_model("pendulum")
PROD = builtin_model("pendulum-product")

HALF_ROTATION = quad(lambda th: 2 * abs(np.sin(np.pi * th)), 0, 0.5)[0]  # = 2/pi


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def minplus_naive(A, Bm):
    n, k = A.shape
    m = Bm.shape[1]
    C = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(m):
            C[i, j] = np.min(A[i, :] + Bm[:, j])
    return C


def has_negative_cycle(W):
    V = W.shape[0]
    dist = np.zeros(V)
    for _ in range(V):
        new = np.minimum(dist, np.min(dist[:, None] + W, axis=0))
        if np.array_equal(new, dist):
            return False
        dist = new
    return bool(np.any(np.min(dist[:, None] + W, axis=0) < dist - 1e-12))


def min_mean_cycle_oracle(W):
    """Binary search on the mean via Bellman-Ford negative-cycle tests."""
    finite = W[np.isfinite(W)]
    lo, hi = float(finite.min()) - 1.0, float(finite.max()) + 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if has_negative_cycle(W - mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# grids and kernels
# ---------------------------------------------------------------------------

def test_grid_indexing_round_trip():
    g = B.StateGrid(2, 8)
    for i in (0, 5, 37, 63):
        assert g.index_of(g.point(i)) == i
    assert g.npoints == 64
    assert g.index_of([0.999, 0.001]) == 0  # rounds onto the origin cell


def test_kernel_entry_examples():
    g = B.StateGrid(2, 8)
    k = B.build_kernel(FLAT, g, 0.5)
    assert np.all(np.diag(k.matrix) == 0.0)
    j = g.index_of([1 / 8, 0])
    assert k.matrix[0, j] == pytest.approx(1 / 64)
    kw = B.build_kernel(FLAT, g, 0.5, w=[1, 0])
    assert kw.matrix[0, j] == pytest.approx(1 / 64 - 1 / 8)


def test_disconnected_kernel_rejected():
    with pytest.raises(B.KernelError):
        B.KernelFactory(FLAT, B.StateGrid(2, 64), 0.01, 1.0)  # reach < spacing


def test_minplus_matmul_against_naive():
    rng = np.random.default_rng(0)
    for _ in range(5):
        A = rng.random((17, 17))
        A[rng.random((17, 17)) < 0.3] = np.inf
        Bm = rng.random((17, 17))
        from weakkam._kernels import minplus_matmul
        assert np.allclose(minplus_matmul(A, Bm), minplus_naive(A, Bm))


def test_tropical_power_matches_iterated_product():
    rng = np.random.default_rng(1)
    M = rng.random((12, 12))
    P = M.copy()
    for k in range(2, 8):
        P = minplus_naive(P, M)
        assert np.allclose(B.tropical_power(M, k), P)
    assert np.allclose(B.tropical_power(M, 1), M)
    assert np.allclose(B.tropical_power(M, 0), B.tropical_identity(12))


def test_minplus_power_examples():
    g = B.StateGrid(2, 8)
    k = B.build_kernel(FLAT, g, 0.5)
    # one step with offset is the kernel plus c*delta
    P1 = B.minplus_power(k, 1, c=0.3)
    finite = np.isfinite(k.matrix)
    assert np.allclose(P1[finite], k.matrix[finite] + 0.15)
    # rest stays free forever
    P8 = B.minplus_power(k, 8)
    assert np.all(np.diag(P8) == 0.0)
    # flat d^2/(2t): x -> x + (0.5, 0) in time 1 at delta = 0.125
    g16 = B.StateGrid(2, 16)
    k16 = B.build_kernel(FLAT, g16, 0.125)
    P = B.minplus_power(k16, 8)
    assert P[0, g16.index_of([0.5, 0])] == pytest.approx(0.125, abs=0.02)


# ---------------------------------------------------------------------------
# critical values
# ---------------------------------------------------------------------------

def test_critical_value_flat_zero():
    k = B.build_kernel(FLAT, B.StateGrid(2, 8), 0.5)
    cv = B.critical_value(k)
    assert abs(cv.c) <= 1e-9
    assert cv.degenerate  # every rest point is optimal


def test_critical_value_pendulum():
    k = B.build_kernel(PEND, B.StateGrid(1, 64), 0.1)
    cv = B.critical_value(k)
    assert cv.c == pytest.approx(-0.5, abs=1e-2)
    # the optimal cycle is the rest point at the potential maximum
    assert np.array_equal(cv.cycle, [0])


def test_critical_value_flat_twisted():
    k = B.build_kernel(FLAT, B.StateGrid(2, 32), 0.1, w=[1.0, 0.0])
    cv = B.critical_value(k)
    assert cv.c == pytest.approx(0.5, abs=2e-2)


def test_critical_value_against_bellman_ford_oracle():
    rng = np.random.default_rng(7)
    g = B.StateGrid(1, 24)
    for _ in range(4):
        from weakkam.model import FourierField, LagrangianModel
        V = FourierField(1, {(1,): (rng.normal() * 0.5, rng.normal() * 0.5),
                             (2,): (rng.normal() * 0.2, 0.0)})
        model = LagrangianModel(1, np.eye(1), None, V)
        k = B.build_kernel(model, g, 0.25, w=[rng.normal() * 0.5])
        cv = B.critical_value(k)
        lam_oracle = min_mean_cycle_oracle(k.matrix)
        assert cv.cycle_mean == pytest.approx(lam_oracle, abs=1e-8)


# ---------------------------------------------------------------------------
# barrier, potential, Aubry sets
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pend_barrier():
    k = B.build_kernel(PEND, B.StateGrid(1, 64), 0.1)
    return k, B.peierls_barrier(k)


@pytest.fixture(scope="module")
def flat_barrier():
    k = B.build_kernel(FLAT, B.StateGrid(2, 16), 2.0, v_max=1.5)
    return k, B.peierls_barrier(k)


def test_barrier_flat_is_zero(flat_barrier):
    _, tab = flat_barrier
    assert tab.c_used == pytest.approx(0.0, abs=1e-9)
    assert np.max(np.abs(tab.h)) <= 0.02
    assert tab.converged


def test_barrier_pendulum_values(pend_barrier):
    _, tab = pend_barrier
    assert tab.value([0], [0]) == pytest.approx(0.0, abs=0.02)
    assert tab.value([0], [0.5]) == pytest.approx(HALF_ROTATION, abs=0.05)
    assert tab.converged


def test_mane_potential(pend_barrier, flat_barrier):
    k, tab = pend_barrier
    m = B.mane_potential(k, c=tab.c_used)
    g = k.grid
    assert m[g.index_of([0]), g.index_of([0.5])] == pytest.approx(HALF_ROTATION, abs=0.05)
    assert np.all(m <= tab.h + 1e-12)
    kf, tabf = flat_barrier
    mf = B.mane_potential(kf, c=tabf.c_used)
    assert np.max(np.abs(mf)) <= 0.02
    assert np.all(mf <= tabf.h + 1e-12)


def test_barrier_axioms_sampled(pend_barrier, flat_barrier):
    rng = np.random.default_rng(3)
    for k, tab in (pend_barrier, flat_barrier):
        V = k.npoints
        tol = max(tab.residual, 5e-3)
        h = tab.h
        i, j, l = rng.integers(0, V, size=(3, 100))
        assert np.all(h[i, l] - h[i, j] - h[j, l] <= 2 * tol)  # triangle
        assert np.all(h[i, j] + h[j, i] >= -2 * tol)  # symmetrized positivity


def test_mane_lipschitz_bound(pend_barrier):
    k, tab = pend_barrier
    m = B.mane_potential(k, c=tab.c_used)
    M1 = B.sup_lagrangian_unit_ball(PEND)
    assert M1 == pytest.approx(3.0, abs=1e-6)  # 1/2 + max(-V) = 1/2 + 5/2
    pts = k.grid.points()
    rng = np.random.default_rng(5)
    i, j = rng.integers(0, k.npoints, size=(2, 200))
    d = np.linalg.norm((pts[i] - pts[j]) - np.round(pts[i] - pts[j]), axis=1)
    tol = B.lipschitz_time_floor(PEND, k.delta, tab.c_used) + 5e-3
    bound = (M1 + tab.c_used) * d + tol
    assert np.all(np.abs(m[i, j]) <= bound)


def test_criticality_dichotomy(pend_barrier):
    # off-critical offsets tilt the diagonal linearly in the step count
    k, tab = pend_barrier
    c = tab.c_used
    for sign in (+1.0, -1.0):
        cp = c + sign * 0.1
        d20 = np.min(np.diag(B.minplus_power(k, 20, c=cp)))
        d40 = np.min(np.diag(B.minplus_power(k, 40, c=cp)))
        slope = (d40 - d20) / 20.0
        assert slope == pytest.approx(sign * 0.1 * k.delta, abs=1e-9)


def test_projected_aubry(pend_barrier, flat_barrier):
    kf, tabf = flat_barrier
    pts, idx = B.projected_aubry(tabf, 0.02)
    assert len(idx) == kf.npoints  # the whole torus
    k, tab = pend_barrier
    pts, idx = B.projected_aubry(tab, 1e-3)
    assert len(idx) == 1
    assert np.allclose(pts[0], [0.0])


def test_aubry_lift_pendulum(pend_barrier):
    k, tab = pend_barrier
    lift = B.aubry_lift(PEND, tab, 1e-3, k)
    assert len(lift.tangents) == 1
    t = lift.tangents[0]
    assert np.allclose(t.x, [0.0])
    assert np.allclose(t.v, [0.0])
    assert not lift.ties


def test_aubry_lift_flat_twisted():
    g = B.StateGrid(2, 16)
    fac = B.KernelFactory(FLAT, g, 0.25, B.default_v_max([1, 0]))
    k = fac.kernel([1.0, 0.0])
    cv = B.critical_value(k)
    tab = B.peierls_barrier(k, c=cv.c)
    lift = B.aubry_lift(FLAT, tab, 0.02, k)
    assert len(lift.tangents) == g.npoints
    quantum = g.spacing / k.delta
    for t in lift.tangents:
        assert np.linalg.norm(t.v - [1.0, 0.0]) <= quantum + 1e-9


def test_aubry_lift_product_small():
    g = B.StateGrid(2, 16)
    fac = B.KernelFactory(PROD, g, 0.25, 3.0)
    k = fac.kernel([0.0, 1.0])
    cv = B.critical_value(k)
    assert cv.c == pytest.approx(0.0, abs=2e-2)
    tab = B.peierls_barrier(k, c=cv.c)
    lift = B.aubry_lift(PROD, tab, 4e-3, k)
    pts = np.array([t.x for t in lift.tangents])
    vels = np.array([t.v for t in lift.tangents])
    assert len(pts) == 16  # theta1 = 0 row, all theta2
    assert np.allclose(pts[:, 0], 0.0)
    assert np.allclose(vels, [0.0, 1.0], atol=1e-12)


def test_barrier_save_round_trip(tmp_path, pend_barrier):
    _, tab = pend_barrier
    tab.save(tmp_path, "h")
    raw = np.fromfile(tmp_path / "h.bin").reshape(tab.h.shape)
    assert np.array_equal(raw, tab.h)
    import json
    side = json.loads((tmp_path / "h.json").read_text())
    assert side["grid"]["size"] == 64
    assert side["c"] == pytest.approx(-0.5, abs=1e-2)
    csv = np.loadtxt(tmp_path / "h.csv", delimiter=",")
    assert np.allclose(csv, tab.h)
