"""Mechanical Lagrangians with drift on the flat torus T^n.

The model family is

    L(x, v) = 1/2 v.A v + b(x).v - V(x) - psi(x)

with A a constant symmetric positive-definite matrix, b a vector of
periodic drift coefficients and V, psi periodic potentials (psi is a
separate slot so perturbation experiments can leave V untouched).  The
dual Hamiltonian is

    H(x, p) = 1/2 (p - b(x)).A^{-1} (p - b(x)) + V(x) + psi(x).

All periodic data are finite Fourier sums, so every derivative used by
the variational and flow code is exact.  Cohomology classes of closed
1-forms are represented by their constant part ``w`` in R^n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FourierField",
    "TangentState",
    "CotangentState",
    "LagrangianModel",
    "wrap",
    "torus_delta",
    "torus_distance",
    "eval_lagrangian",
    "lagrangian_gradients",
    "legendre",
    "legendre_inverse",
    "eval_hamiltonian",
    "energy",
    "second_derivatives",
    "hamiltonian_vector_field",
    "builtin_model",
    "model_from_json",
    "model_to_json",
    "BUILTIN_MODELS",
]

TWO_PI = 2.0 * np.pi


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce torus coordinates to [0, 1)."""
    return np.mod(np.asarray(x, dtype=float), 1.0)


def torus_delta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest representative of b - a, component-wise in [-1/2, 1/2)."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return d - np.round(d)


def torus_distance(a: np.ndarray, b: np.ndarray) -> float | np.ndarray:
    """Flat metric on T^n: Euclidean norm of the minimal lift of b - a."""
    return np.linalg.norm(torus_delta(a, b), axis=-1)


class FourierField:
    """Real trigonometric polynomial on T^n with exact derivatives.

    ``modes`` maps integer frequency vectors k to (cos, sin) coefficient
    pairs; the field is sum_k  c_k cos(2 pi k.x) + s_k sin(2 pi k.x).
    Instances are immutable and hashable.
    """

    __slots__ = ("dim", "_modes", "_k", "_cc", "_cs")

    def __init__(self, dim: int, modes=None):
        self.dim = int(dim)
        items = []
        if modes:
            for k, (cc, cs) in dict(modes).items():
                k = tuple(int(ki) for ki in k)
                if len(k) != self.dim:
                    raise ValueError(f"mode {k} has wrong dimension (expected {self.dim})")
                if cc != 0.0 or cs != 0.0:
                    items.append((k, float(cc), float(cs)))
        items.sort()
        self._modes = tuple(items)
        if items:
            self._k = np.array([m[0] for m in items], dtype=float)
            self._cc = np.array([m[1] for m in items])
            self._cs = np.array([m[2] for m in items])
        else:
            self._k = np.zeros((0, self.dim))
            self._cc = np.zeros(0)
            self._cs = np.zeros(0)

    @classmethod
    def zero(cls, dim: int) -> "FourierField":
        return cls(dim, {})

    @classmethod
    def constant(cls, dim: int, value: float) -> "FourierField":
        return cls(dim, {(0,) * dim: (value, 0.0)})

    @property
    def modes(self):
        return {k: (cc, cs) for k, cc, cs in self._modes}

    @property
    def max_frequency(self) -> int:
        if not self._modes:
            return 0
        return int(np.max(np.abs(self._k)))

    def is_zero(self) -> bool:
        return not self._modes

    def tables(self):
        """(k, cos-coef, sin-coef) arrays for compiled kernels."""
        return self._k, self._cc, self._cs

    def value(self, x) -> np.ndarray:
        """Evaluate at x of shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        if self._k.size == 0:
            return np.zeros(x.shape[:-1])
        ph = TWO_PI * (x @ self._k.T)
        return np.cos(ph) @ self._cc + np.sin(ph) @ self._cs

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._k.size == 0:
            return np.zeros(x.shape)
        ph = TWO_PI * (x @ self._k.T)
        d = TWO_PI * (-np.sin(ph) * self._cc + np.cos(ph) * self._cs)
        return d @ self._k

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out_shape = x.shape + (self.dim,)
        if self._k.size == 0:
            return np.zeros(out_shape)
        ph = TWO_PI * (x @ self._k.T)
        dd = TWO_PI**2 * (-np.cos(ph) * self._cc - np.sin(ph) * self._cs)
        kk = self._k[:, :, None] * self._k[:, None, :]
        return np.einsum("...m,mij->...ij", dd, kk)

    def sampled_sup(self, samples_per_axis: int = 128) -> float:
        """sup |field| estimated on a uniform grid (exact for constants)."""
        if self._k.size == 0:
            return 0.0
        axes = [np.arange(samples_per_axis) / samples_per_axis] * self.dim
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return float(np.max(np.abs(self.value(grid))))

    def __add__(self, other: "FourierField") -> "FourierField":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        modes = dict(self.modes)
        for k, (cc, cs) in other.modes.items():
            c0, s0 = modes.get(k, (0.0, 0.0))
            modes[k] = (c0 + cc, s0 + cs)
        return FourierField(self.dim, modes)

    def __neg__(self) -> "FourierField":
        return FourierField(self.dim, {k: (-cc, -cs) for k, (cc, cs) in self.modes.items()})

    def __sub__(self, other: "FourierField") -> "FourierField":
        return self + (-other)

    def __mul__(self, scalar: float) -> "FourierField":
        s = float(scalar)
        return FourierField(self.dim, {k: (s * cc, s * cs) for k, (cc, cs) in self.modes.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return isinstance(other, FourierField) and self._modes == other._modes and self.dim == other.dim

    def __hash__(self):
        return hash((self.dim, self._modes))

    def __repr__(self):
        return f"FourierField(dim={self.dim}, modes={self.modes!r})"


def _frozen_array(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TangentState:
    """Point (x, v) of TT^n; x is stored reduced to [0, 1)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_array(wrap(self.x)))
        object.__setattr__(self, "v", _frozen_array(self.v))


@dataclass(frozen=True)
class CotangentState:
    """Point (x, p) of T*T^n; x is stored reduced to [0, 1)."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_array(wrap(self.x)))
        object.__setattr__(self, "p", _frozen_array(self.p))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])


@dataclass(frozen=True)
class LagrangianModel:
    """Tonelli Lagrangian L = 1/2 v.Av + b(x).v - V(x) - psi(x) on T^n."""

    dim: int
    A: np.ndarray
    b: tuple
    V: FourierField
    psi: FourierField = None  # type: ignore[assignment]

    def __post_init__(self):
        n = self.dim
        A = np.array(self.A, dtype=float).reshape(n, n)
        if not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("kinetic matrix A must be symmetric")
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise ValueError("kinetic matrix A must be positive definite") from None
        object.__setattr__(self, "A", _frozen_array(A))
        b = tuple(self.b) if self.b else tuple(FourierField.zero(n) for _ in range(n))
        if len(b) != n:
            raise ValueError(f"need {n} drift components, got {len(b)}")
        object.__setattr__(self, "b", b)
        if self.V is None:
            object.__setattr__(self, "V", FourierField.zero(n))
        if self.psi is None:
            object.__setattr__(self, "psi", FourierField.zero(n))
        object.__setattr__(self, "_A_inv", _frozen_array(np.linalg.inv(A)))
        object.__setattr__(self, "_U", self.V + self.psi)
        object.__setattr__(self, "_has_b", any(not bi.is_zero() for bi in b))

    @property
    def A_inv(self) -> np.ndarray:
        return self._A_inv

    @property
    def potential(self) -> FourierField:
        """Combined potential V + psi (enters H with a plus sign)."""
        return self._U

    @property
    def has_drift(self) -> bool:
        return self._has_b

    def b_value(self, x) -> np.ndarray:
        """Drift vector b(x); x of shape (..., n) -> (..., n)."""
        x = np.asarray(x, dtype=float)
        if not self._has_b:
            return np.zeros(x.shape)
        return np.stack([bi.value(x) for bi in self.b], axis=-1)

    def b_jacobian(self, x) -> np.ndarray:
        """Db with Db[..., k, j] = d b_k / d x_j."""
        x = np.asarray(x, dtype=float)
        if not self._has_b:
            return np.zeros(x.shape + (self.dim,))
        return np.stack([bi.gradient(x) for bi in self.b], axis=-2)

    def with_psi(self, psi: FourierField) -> "LagrangianModel":
        """Same model with the psi slot replaced."""
        return LagrangianModel(self.dim, self.A, self.b, self.V, psi)

    def add_to_lagrangian(self, phi: FourierField) -> "LagrangianModel":
        """Model of the perturbed Lagrangian L + phi (dually H - phi)."""
        return self.with_psi(self.psi - phi)

    def flow_tables(self):
        """Packed arrays consumed by the compiled integrators."""
        uk, ucc, ucs = self._U.tables()
        if self._has_b:
            rows, idx = [], []
            for comp, bi in enumerate(self.b):
                bk, bcc, bcs = bi.tables()
                for t in range(bk.shape[0]):
                    rows.append((bk[t], bcc[t], bcs[t]))
                    idx.append(comp)
            bk = np.array([r[0] for r in rows]).reshape(-1, self.dim)
            bcc = np.array([r[1] for r in rows])
            bcs = np.array([r[2] for r in rows])
            bidx = np.array(idx, dtype=np.int64)
        else:
            bk = np.zeros((0, self.dim))
            bcc = np.zeros(0)
            bcs = np.zeros(0)
            bidx = np.zeros(0, dtype=np.int64)
        return (np.ascontiguousarray(self._A_inv), uk, ucc, ucs, bk, bcc, bcs, bidx)


def eval_lagrangian(model: LagrangianModel, state: TangentState, w=None) -> float:
    """L(x, v) - w.v, the Lagrangian twisted by the class w (w may be None)."""
    x, v = state.x, state.v
    val = 0.5 * v @ model.A @ v - model.potential.value(x)
    if model.has_drift:
        val += model.b_value(x) @ v
    if w is not None:
        val -= np.asarray(w, dtype=float) @ v
    return float(val)


def lagrangian_gradients(model: LagrangianModel, x, v):
    """(dL/dx, dL/dv) of the untwisted L, vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    Lv = v @ model.A
    Lx = -model.potential.gradient(x)
    if model.has_drift:
        Lv = Lv + model.b_value(x)
        Db = model.b_jacobian(x)
        Lx = Lx + np.einsum("...kj,...k->...j", Db, v)
    return Lx, Lv


def legendre(model: LagrangianModel, state: TangentState) -> CotangentState:
    """Fiberwise Legendre map (x, v) -> (x, Av + b(x))."""
    p = model.A @ state.v
    if model.has_drift:
        p = p + model.b_value(state.x)
    return CotangentState(state.x, p)


def legendre_inverse(model: LagrangianModel, state: CotangentState) -> TangentState:
    """Inverse Legendre map (x, p) -> (x, A^{-1}(p - b(x)))."""
    u = state.p
    if model.has_drift:
        u = u - model.b_value(state.x)
    return TangentState(state.x, model.A_inv @ u)


def eval_hamiltonian(model: LagrangianModel, state: CotangentState) -> float:
    u = state.p
    if model.has_drift:
        u = u - model.b_value(state.x)
    return float(0.5 * u @ model.A_inv @ u + model.potential.value(state.x))


def energy(model: LagrangianModel, state: TangentState) -> float:
    """E(x, v) = dL/dv . v - L, i.e. H composed with the Legendre map."""
    return eval_hamiltonian(model, legendre(model, state))


def second_derivatives(model: LagrangianModel, state: CotangentState):
    """Exact Hessian blocks (H_xx, H_xp, H_pp) at (x, p).

    Index convention: H_xp[j, k] = d^2 H / dx_j dp_k.
    """
    x, p = state.x, state.p
    n = model.dim
    H_pp = model.A_inv.copy()
    H_xx = model.potential.hessian(x)
    H_xp = np.zeros((n, n))
    if model.has_drift:
        u = p - model.b_value(x)
        mu = model.A_inv @ u  # = velocity
        Db = model.b_jacobian(x)
        H_xp = -Db.T @ model.A_inv
        H_xx = H_xx + Db.T @ model.A_inv @ Db
        for k, bk in enumerate(model.b):
            H_xx = H_xx - mu[k] * bk.hessian(x)
    return H_xx, H_xp, H_pp


def hamiltonian_vector_field(model: LagrangianModel, state: CotangentState) -> np.ndarray:
    """(dx/dt, dp/dt) = (H_p, -H_x) as a flat 2n vector."""
    x, p = state.x, state.p
    u = p - model.b_value(x) if model.has_drift else p
    v = model.A_inv @ u
    gU = model.potential.gradient(x)
    pdot = -gU
    if model.has_drift:
        pdot = pdot + model.b_jacobian(x).T @ v
    return np.concatenate([v, pdot])


# ---------------------------------------------------------------------------
# Built-in models and JSON (de)serialization
# ---------------------------------------------------------------------------

def _flat(n: int = 2) -> LagrangianModel:
    return LagrangianModel(n, np.eye(n), None, FourierField.zero(n))


def _pendulum() -> LagrangianModel:
    # H = p^2/2 + cos(2 pi theta) - 3/2; the rest point theta = 0 is a saddle
    # of the flow and the maximum of V, so c(L) = -1/2.
    V = FourierField(1, {(1,): (1.0, 0.0), (0,): (-1.5, 0.0)})
    return LagrangianModel(1, np.eye(1), None, V)


def _pendulum_product() -> LagrangianModel:
    # Product of the pendulum with the circle geodesic flow:
    # H = (p1^2 + p2^2)/2 + cos(2 pi theta1) - 3/2.
    V = FourierField(2, {(1, 0): (1.0, 0.0), (0, 0): (-1.5, 0.0)})
    return LagrangianModel(2, np.eye(2), None, V)


BUILTIN_MODELS = {
    "flat": _flat,
    "flat1d": lambda: _flat(1),
    "pendulum": _pendulum,
    "pendulum-product": _pendulum_product,
}


def builtin_model(name: str) -> LagrangianModel:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None


def _field_records(f: FourierField):
    return [{"k": list(k), "cos": cc, "sin": cs} for k, (cc, cs) in sorted(f.modes.items())]


def _field_from_records(dim: int, records) -> FourierField:
    modes = {}
    for r in records or []:
        k = tuple(int(v) for v in r["k"])
        cc, cs = modes.get(k, (0.0, 0.0))
        modes[k] = (cc + float(r.get("cos", 0.0)), cs + float(r.get("sin", 0.0)))
    return FourierField(dim, modes)


def model_to_json(model: LagrangianModel) -> dict:
    return {
        "dim": model.dim,
        "A": [float(v) for v in np.asarray(model.A).ravel()],
        "b": [_field_records(bi) for bi in model.b],
        "V": _field_records(model.V),
        "psi": _field_records(model.psi),
    }


def model_from_json(spec) -> LagrangianModel:
    """Build a model from a dict, JSON string, file path, or built-in name."""
    if isinstance(spec, LagrangianModel):
        return spec
    if isinstance(spec, (str, Path)):
        s = str(spec)
        if s in BUILTIN_MODELS:
            return builtin_model(s)
        p = Path(s)
        if p.exists():
            spec = json.loads(p.read_text())
        else:
            spec = json.loads(s)
    n = int(spec["dim"])
    A = np.array(spec["A"], dtype=float).reshape(n, n)
    b_rec = spec.get("b") or [[] for _ in range(n)]
    b = tuple(_field_from_records(n, r) for r in b_rec)
    V = _field_from_records(n, spec.get("V"))
    psi = _field_from_records(n, spec.get("psi"))
    return LagrangianModel(n, A, b, V, psi)
