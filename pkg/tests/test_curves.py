"""Discrete action minimization: endpoint problems, loops, radial samples."""

import numpy as np
import pytest
from scipy.integrate import quad

from weakkam import curves
from weakkam.model import FourierField, LagrangianModel, builtin_model, torus_delta

FLAT = builtin_model("flat")
PEND = builtin_model("pendulum")
PROD = builtin_model("pendulum-product")

# Maupertuis oracle for the pendulum at critical energy: the rotation
# action of L + 1/2 equals the quadrature of the momentum 2|sin(pi th)|.
ROTATION_ACTION = quad(lambda th: 2 * abs(np.sin(np.pi * th)), 0, 1)[0]
HALF_ROTATION = quad(lambda th: 2 * abs(np.sin(np.pi * th)), 0, 0.5)[0]


def test_maupertuis_oracle_value():
    assert ROTATION_ACTION == pytest.approx(4 / np.pi, abs=1e-12)
    assert HALF_ROTATION == pytest.approx(2 / np.pi, abs=1e-12)


def straight(nodes):
    return curves.DiscreteCurve(np.asarray(nodes, dtype=float), 1.0 / (len(nodes) - 1))


def test_discrete_action_flat_values():
    seg = straight(np.linspace([0, 0], [1, 0], 11))
    assert curves.discrete_action(FLAT, seg) == pytest.approx(0.5)
    assert curves.discrete_action(FLAT, seg, w=[1, 0]) == pytest.approx(-0.5)


def test_discrete_action_constant_pendulum_curve():
    c = curves.DiscreteCurve(np.zeros((21, 1)), 0.1)  # rest at the saddle, T = 2
    assert curves.discrete_action(PEND, c, c_offset=-0.5) == pytest.approx(0.0, abs=1e-14)


def test_minimize_endpoint_flat():
    c = curves.minimize_endpoint(FLAT, [0, 0], [0, 0], [1, 0], 1.0, 40)
    assert curves.discrete_action(FLAT, c) == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(c.velocities(), [1.0, 0.0], atol=1e-10)
    c = curves.minimize_endpoint(FLAT, [0, 0], [0.5, 0], [0, 0], 1.0, 40)
    assert curves.discrete_action(FLAT, c) == pytest.approx(0.125, abs=1e-12)


def test_minimize_endpoint_pendulum_rotation():
    T, N = 6.0, 384
    c = curves.minimize_endpoint(PEND, [0], [0], [1], T, N)
    a = curves.discrete_action(PEND, c, c_offset=-0.5)
    assert a == pytest.approx(ROTATION_ACTION, abs=5e-3)
    assert curves.el_residual(PEND, c) <= 1e-8


def test_minimize_endpoint_rejects_degenerate_time():
    with pytest.raises(ValueError):
        curves.minimize_endpoint(FLAT, [0, 0], [0.5, 0], [0, 0], 1e-4, 10)


def test_h_t_direct_values():
    assert curves.h_t_direct(FLAT, [0, 0], [0, 0], 1.0) == pytest.approx(0.0, abs=1e-12)
    assert curves.h_t_direct(FLAT, [0, 0], [0.5, 0], 0.25) == pytest.approx(0.5, abs=1e-10)
    h = curves.h_t_direct(PEND, [0], [0], 8.0, c=-0.5)
    assert -1e-10 <= h <= 0.05


def test_subadditivity():
    rng = np.random.default_rng(1)
    for model in (FLAT, PEND):
        n = model.dim
        for _ in range(6):
            x, y, z = rng.random((3, n))
            t1, t2 = rng.uniform(0.5, 1.5, size=2)
            N1 = int(round(t1 * 64))
            N2 = int(round(t2 * 64))
            hxz = curves.h_t_direct(model, x, z, t1 + t2, N=N1 + N2)
            hxy = curves.h_t_direct(model, x, y, t1, N=N1)
            hyz = curves.h_t_direct(model, y, z, t2, N=N2)
            assert hxz <= hxy + hyz + 2e-3


def test_stationarity_of_minimizers():
    for mini in curves.minimize_loop(PEND, [0.25], 2.0):
        assert mini.residual <= 1e-8
        assert curves.el_residual(PEND, mini.curve) <= 1e-8


def test_refinement_is_second_order():
    # halving delta should shrink the action error by about 4
    vals = {}
    for N in (48, 96, 192):
        c = curves.minimize_endpoint(PEND, [0], [0], [1], 3.0, N)
        vals[N] = curves.discrete_action(PEND, c)
    r = (vals[48] - vals[96]) / (vals[96] - vals[192])
    assert 3.0 <= r <= 5.5


def test_class_invariance_telescopes():
    # adding the gradient of a periodic function to w changes nothing on loops
    f = FourierField(1, {(1,): (0.3, -0.4), (2,): (0.0, 0.2)})
    for mini in curves.minimize_loop(PEND, [0.1], 2.0, w=[0.7], K_wind=1):
        nodes = mini.curve.nodes
        gauge = float(f.value(nodes[-1:])[0] - f.value(nodes[:1])[0])
        assert abs(gauge) <= 1e-12  # telescoping of an exact form on a loop
        a = curves.discrete_action(PEND, mini.curve, w=[0.7])
        assert a - gauge == pytest.approx(a, abs=1e-15)


def test_minimize_loop_flat():
    mins = curves.minimize_loop(FLAT, [0.3, 0.8], 1.0)
    assert len(mins) == 1
    assert np.array_equal(mins[0].winding, [0, 0])
    assert mins[0].action == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(mins[0].initial_tangent.v, 0.0, atol=1e-10)

    mins = curves.minimize_loop(FLAT, [0.3, 0.8], 1.0, w=[1, 0])
    assert len(mins) == 1
    assert np.array_equal(mins[0].winding, [1, 0])
    assert mins[0].action == pytest.approx(-0.5, abs=1e-12)
    assert np.allclose(mins[0].initial_tangent.v, [1.0, 0.0], atol=1e-10)


def test_minimize_loop_product_orbit():
    mins = curves.minimize_loop(PROD, [0.0, 0.0], 1.0, w=[0, 1])
    assert len(mins) == 1
    assert np.array_equal(mins[0].winding, [0, 1])
    assert np.allclose(mins[0].initial_tangent.v, [0.0, 1.0], atol=1e-9)


def test_sample_radial_flat():
    tangents = curves.sample_radial(FLAT, [1.0, 0.0], 1.0, 3)
    assert len(tangents) == 9
    for t in tangents:
        assert np.allclose(t.v, [1.0, 0.0], atol=1e-9)
    tangents = curves.sample_radial(FLAT, None, 1.0, 2)
    for t in tangents:
        assert np.allclose(t.v, 0.0, atol=1e-9)


def test_sample_radial_pendulum_aubry_point():
    tangents = curves.sample_radial(PEND, None, 6.0, np.array([[0.0]]), K_wind=1)
    assert len(tangents) >= 1
    for t in tangents:
        assert abs(t.v[0]) <= 0.05
        assert np.linalg.norm(torus_delta(t.x, [0.0])) <= 1e-12
