"""Model-layer checks: Legendre duality, exact derivatives, twisting."""

import numpy as np
import pytest

from weakkam.model import (
    CotangentState,
    FourierField,
    LagrangianModel,
    TangentState,
    builtin_model,
    energy,
    eval_hamiltonian,
    eval_lagrangian,
    legendre,
    legendre_inverse,
    model_from_json,
    model_to_json,
    second_derivatives,
    torus_delta,
    torus_distance,
    wrap,
)

FLAT = builtin_model("flat")
PEND = builtin_model("pendulum")
PROD = builtin_model("pendulum-product")


def drift_model():
    # b1(x) = cos(2 pi x1), b2 = 0, plus a two-mode potential
    b1 = FourierField(2, {(1, 0): (1.0, 0.0)})
    b2 = FourierField.zero(2)
    V = FourierField(2, {(1, 0): (0.3, 0.1), (0, 1): (0.0, 0.2), (1, 1): (0.05, 0.0)})
    return LagrangianModel(2, np.array([[2.0, 0.3], [0.3, 1.0]]), (b1, b2), V)


def random_states(model, rng, count):
    for _ in range(count):
        x = rng.random(model.dim)
        v = rng.normal(size=model.dim) * 2.0
        yield TangentState(x, v)


def test_torus_geometry():
    assert np.allclose(wrap([1.25, -0.25]), [0.25, 0.75])
    assert np.allclose(torus_delta([0.9, 0.1], [0.1, 0.2]), [0.2, 0.1])
    assert torus_distance([0.0], [0.9]) == pytest.approx(0.1)


def test_eval_lagrangian_examples():
    assert eval_lagrangian(FLAT, TangentState([0, 0], [1, 0])) == pytest.approx(0.5)
    assert eval_lagrangian(FLAT, TangentState([0, 0], [1, 0]), w=[1, 0]) == pytest.approx(-0.5)
    # pendulum at the saddle with zero velocity: L = -V(0) = 1/2
    assert eval_lagrangian(PEND, TangentState([0.0], [0.0])) == pytest.approx(0.5)


def test_twist_identity_exact():
    rng = np.random.default_rng(7)
    for state in random_states(drift_model(), rng, 20):
        w = rng.normal(size=2)
        lhs = eval_lagrangian(drift_model(), state, w=w)
        rhs = eval_lagrangian(drift_model(), state) - w @ state.v
        assert lhs == rhs  # identical floating-point path


def test_legendre_examples():
    st = legendre(FLAT, TangentState([0.3, 0.4], [1, 2]))
    assert np.allclose(st.p, [1, 2])
    m = LagrangianModel(2, np.diag([2.0, 1.0]), None, FourierField.zero(2))
    assert np.allclose(legendre(m, TangentState([0, 0], [1, 1])).p, [2, 1])
    dm = drift_model()
    st = legendre(dm, TangentState([0, 0], [0, 0]))
    assert np.allclose(st.p, [1.0, 0.0])  # p = b(x), b1(0) = cos 0 = 1


def test_legendre_round_trip():
    rng = np.random.default_rng(3)
    for model in (FLAT, PEND, PROD, drift_model()):
        for state in random_states(model, rng, 25):
            back = legendre_inverse(model, legendre(model, state))
            assert np.allclose(back.x, state.x, atol=1e-12)
            assert np.allclose(back.v, state.v, atol=1e-12)


def test_eval_hamiltonian_examples():
    assert eval_hamiltonian(FLAT, CotangentState([0, 0], [1, 0])) == pytest.approx(0.5)
    # the section 5 product orbit lies in the zero energy level
    assert eval_hamiltonian(PROD, CotangentState([0.0, 0.37], [0.0, 1.0])) == pytest.approx(0.0)
    assert eval_hamiltonian(PEND, CotangentState([0.0], [0.0])) == pytest.approx(-0.5)


def test_energy_matches_hamiltonian_and_sup_formula():
    rng = np.random.default_rng(11)
    model = drift_model()
    for state in random_states(model, rng, 5):
        e = energy(model, state)
        assert e == eval_hamiltonian(model, legendre(model, state))
        # independent oracle: H(x, p) = sup_v (p.v - L(x, v)) on a v-grid
        p = legendre(model, state).p
        grid = np.linspace(-6, 6, 81)
        vv = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = vv @ p - np.array(
            [eval_lagrangian(model, TangentState(state.x, v)) for v in vv])
        assert e >= np.max(vals) - 1e-12
        assert e <= np.max(vals) + 0.05  # grid resolution slack


def test_fenchel_inequality():
    rng = np.random.default_rng(5)
    model = drift_model()
    for state in random_states(model, rng, 10):
        p = rng.normal(size=2) * 2
        L = eval_lagrangian(model, state)
        H = eval_hamiltonian(model, CotangentState(state.x, p))
        assert L + H >= p @ state.v - 1e-10
        p_eq = legendre(model, state).p
        H_eq = eval_hamiltonian(model, CotangentState(state.x, p_eq))
        assert L + H_eq == pytest.approx(p_eq @ state.v, abs=1e-10)


def test_second_derivatives_examples():
    Hxx, Hxp, Hpp = second_derivatives(FLAT, CotangentState([0.2, 0.8], [0.4, -1.0]))
    assert np.allclose(Hpp, np.eye(2))
    assert np.allclose(Hxx, 0)
    assert np.allclose(Hxp, 0)
    Hxx, Hxp, Hpp = second_derivatives(PEND, CotangentState([0.0], [0.0]))
    assert Hxx[0, 0] == pytest.approx(-4 * np.pi**2)
    assert Hpp[0, 0] == pytest.approx(1.0)
    assert Hxp[0, 0] == pytest.approx(0.0)
    m = LagrangianModel(2, np.diag([2.0, 1.0]), None, FourierField.zero(2))
    assert np.allclose(second_derivatives(m, CotangentState([0, 0], [0, 0]))[2],
                       np.diag([0.5, 1.0]))


def test_second_derivatives_against_finite_differences():
    # central differences of H as an independent oracle, drift included
    model = drift_model()
    rng = np.random.default_rng(13)
    h = 1e-5
    for _ in range(6):
        x = rng.random(2)
        p = rng.normal(size=2)
        Hxx, Hxp, Hpp = second_derivatives(model, CotangentState(x, p))

        def H(xx, pp):
            return eval_hamiltonian(model, CotangentState(xx, pp))

        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i], np.eye(2)[j]
                num = (H(x + h * ei + h * ej, p) - H(x + h * ei - h * ej, p)
                       - H(x - h * ei + h * ej, p) + H(x - h * ei - h * ej, p)) / (4 * h * h)
                assert Hxx[i, j] == pytest.approx(num, abs=2e-4)
                num = (H(x + h * ei, p + h * ej) - H(x + h * ei, p - h * ej)
                       - H(x - h * ei, p + h * ej) + H(x - h * ei, p - h * ej)) / (4 * h * h)
                assert Hxp[i, j] == pytest.approx(num, abs=2e-4)
                num = (H(x, p + h * ei + h * ej) - H(x, p + h * ei - h * ej)
                       - H(x, p - h * ei + h * ej) + H(x, p - h * ei - h * ej)) / (4 * h * h)
                assert Hpp[i, j] == pytest.approx(num, abs=2e-4)


def test_fourier_field_derivatives_are_exact():
    f = FourierField(2, {(1, 0): (0.5, -0.2), (2, 1): (0.1, 0.3)})
    rng = np.random.default_rng(2)
    x = rng.random((10, 2))
    h = 1e-6
    for i in range(2):
        e = np.eye(2)[i]
        num = (f.value(x + h * e) - f.value(x - h * e)) / (2 * h)
        assert np.allclose(f.gradient(x)[:, i], num, atol=1e-6)


def test_model_validation():
    with pytest.raises(ValueError):
        LagrangianModel(2, np.array([[1.0, 2.0], [0.0, 1.0]]), None, FourierField.zero(2))
    with pytest.raises(ValueError):
        LagrangianModel(2, -np.eye(2), None, FourierField.zero(2))


def test_json_round_trip():
    for model in (FLAT, PEND, PROD, drift_model()):
        back = model_from_json(model_to_json(model))
        assert back.dim == model.dim
        assert np.allclose(back.A, model.A)
        assert back.V == model.V
        assert back.psi == model.psi
        assert all(b1 == b2 for b1, b2 in zip(back.b, model.b))
    assert model_from_json("pendulum").dim == 1


def test_add_to_lagrangian_shifts_hamiltonian():
    phi = FourierField.constant(1, 0.3)
    pert = PEND.add_to_lagrangian(phi)
    st = CotangentState([0.2], [0.4])
    assert eval_hamiltonian(pert, st) == pytest.approx(eval_hamiltonian(PEND, st) - 0.3)
    ts = TangentState([0.2], [0.4])
    assert eval_lagrangian(pert, ts) == pytest.approx(eval_lagrangian(PEND, ts) + 0.3)
