"""Compiled inner loops: tropical matrix products, Karp tables, RK4 flows.

Everything here takes plain ndarrays (no model objects) so numba can
compile it once and cache the result.  The Fourier-sum evaluation is
duplicated from model.FourierField on purpose: the flow integrators call
it millions of times per run and must stay allocation-free.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# Min-plus (tropical) linear algebra
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def minplus_matmul(A, B):
    # C[i, j] = min_k A[i, k] + B[k, j].  The k-loop streams rows of B so
    # the innermost loop is contiguous; this is the cache-blocking that
    # makes repeated tropical squaring affordable at G^n ~ 1000.
    n, K = A.shape
    m = B.shape[1]
    C = np.empty((n, m))
    for i in range(n):
        Ci = C[i]
        for j in range(m):
            Ci[j] = np.inf
        for k in range(K):
            a = A[i, k]
            if not np.isfinite(a):
                continue
            Bk = B[k]
            for j in range(m):
                v = a + Bk[j]
                if v < Ci[j]:
                    Ci[j] = v
    return C


@njit(cache=True, fastmath=True)
def minplus_vecmat(f, W):
    # out[j] = min_i f[i] + W[i, j]
    V = W.shape[0]
    out = np.empty(V)
    for j in range(V):
        out[j] = np.inf
    for i in range(V):
        fi = f[i]
        if not np.isfinite(fi):
            continue
        Wi = W[i]
        for j in range(V):
            v = fi + Wi[j]
            if v < out[j]:
                out[j] = v
    return out


@njit(cache=True, fastmath=True)
def karp_table(W):
    # F[k, v] = min weight of a k-edge walk ending at v, from the uniform
    # super-source (F[0, .] = 0).  Needs every node to have some finite
    # in-edge; the action kernels always carry finite self-loops.
    V = W.shape[0]
    F = np.empty((V + 1, V))
    for j in range(V):
        F[0, j] = 0.0
    for k in range(V):
        Fk = F[k]
        Fn = F[k + 1]
        for j in range(V):
            Fn[j] = np.inf
        for i in range(V):
            f = Fk[i]
            Wi = W[i]
            for j in range(V):
                v = f + Wi[j]
                if v < Fn[j]:
                    Fn[j] = v
    return F


# ---------------------------------------------------------------------------
# Fourier-sum evaluation (scalar point, preallocated outputs)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _potential_grad(uk, ucc, ucs, x, g):
    n = x.shape[0]
    for j in range(n):
        g[j] = 0.0
    for t in range(uk.shape[0]):
        ph = 0.0
        for j in range(n):
            ph += uk[t, j] * x[j]
        ph *= TWO_PI
        d = TWO_PI * (-ucc[t] * np.sin(ph) + ucs[t] * np.cos(ph))
        for j in range(n):
            g[j] += d * uk[t, j]


@njit(cache=True, inline="always")
def _potential_hess(uk, ucc, ucs, x, H):
    n = x.shape[0]
    for j in range(n):
        for l in range(n):
            H[j, l] = 0.0
    for t in range(uk.shape[0]):
        ph = 0.0
        for j in range(n):
            ph += uk[t, j] * x[j]
        ph *= TWO_PI
        dd = TWO_PI * TWO_PI * (-ucc[t] * np.cos(ph) - ucs[t] * np.sin(ph))
        for j in range(n):
            for l in range(n):
                H[j, l] += dd * uk[t, j] * uk[t, l]


@njit(cache=True, inline="always")
def _drift_eval(bk, bcc, bcs, bidx, x, b, Db):
    # b[k] and Db[k, j] = d b_k / d x_j accumulated over stacked modes
    n = x.shape[0]
    for k in range(n):
        b[k] = 0.0
        for j in range(n):
            Db[k, j] = 0.0
    for t in range(bk.shape[0]):
        ph = 0.0
        for j in range(n):
            ph += bk[t, j] * x[j]
        ph *= TWO_PI
        c = np.cos(ph)
        s = np.sin(ph)
        comp = bidx[t]
        b[comp] += bcc[t] * c + bcs[t] * s
        d = TWO_PI * (-bcc[t] * s + bcs[t] * c)
        for j in range(n):
            Db[comp, j] += d * bk[t, j]


@njit(cache=True)
def hamilton_rhs(z, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, out):
    """out = (H_p, -H_x) at z = (x, p)."""
    n = Ainv.shape[0]
    x = z[:n]
    b = np.empty(n)
    Db = np.empty((n, n))
    if bk.shape[0] > 0:
        _drift_eval(bk, bcc, bcs, bidx, x, b, Db)
    else:
        for k in range(n):
            b[k] = 0.0
            for j in range(n):
                Db[k, j] = 0.0
    g = np.empty(n)
    _potential_grad(uk, ucc, ucs, x, g)
    # v = Ainv (p - b)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Ainv[i, j] * (z[n + j] - b[j])
        out[i] = acc
    # pdot = Db^T v - grad U
    for j in range(n):
        acc = -g[j]
        for k in range(n):
            acc += Db[k, j] * out[k]
        out[n + j] = acc


@njit(cache=True)
def _variational_matrix(z, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, B):
    # B = [[-Ainv Db, Ainv], [-H_xx, (Ainv Db)^T]] so that d/dt (dx, dp) = B (dx, dp)
    n = Ainv.shape[0]
    x = z[:n]
    b = np.empty(n)
    Db = np.empty((n, n))
    has_b = bk.shape[0] > 0
    if has_b:
        _drift_eval(bk, bcc, bcs, bidx, x, b, Db)
    H = np.empty((n, n))
    _potential_hess(uk, ucc, ucs, x, H)
    for i in range(2 * n):
        for j in range(2 * n):
            B[i, j] = 0.0
    for i in range(n):
        for j in range(n):
            B[i, n + j] = Ainv[i, j]
    if has_b:
        # velocity for the sum_k v_k Hess b_k term
        v = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Ainv[i, j] * (z[n + j] - b[j])
            v[i] = acc
        AinvDb = Ainv @ Db
        for i in range(n):
            for j in range(n):
                B[i, j] = -AinvDb[i, j]
                B[n + i, n + j] = AinvDb[j, i]
        # H_xx += Db^T Ainv Db - sum_k v_k Hess b_k
        H += Db.T @ AinvDb
        for t in range(bk.shape[0]):
            ph = 0.0
            for j in range(n):
                ph += bk[t, j] * x[j]
            ph *= TWO_PI
            dd = TWO_PI * TWO_PI * (-bcc[t] * np.cos(ph) - bcs[t] * np.sin(ph))
            comp = bidx[t]
            for j in range(n):
                for l in range(n):
                    H[j, l] -= v[comp] * dd * bk[t, j] * bk[t, l]
    for i in range(n):
        for j in range(n):
            B[n + i, j] = -H[i, j]


@njit(cache=True)
def rk4_flow(z0, t, nsteps, keep_every, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx):
    """Classical RK4 on Hamilton's equations; returns samples (m, 2n).

    Sample 0 is z0; every keep_every-th step is stored plus the final one.
    """
    d = z0.shape[0]
    h = t / nsteps
    nkeep = nsteps // keep_every + (1 if nsteps % keep_every else 0) + 1
    out = np.empty((nkeep, d))
    z = z0.copy()
    out[0] = z
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    m = 1
    for s in range(nsteps):
        hamilton_rhs(z, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k1)
        for i in range(d):
            tmp[i] = z[i] + 0.5 * h * k1[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k2)
        for i in range(d):
            tmp[i] = z[i] + 0.5 * h * k2[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k3)
        for i in range(d):
            tmp[i] = z[i] + h * k3[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k4)
        for i in range(d):
            z[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (s + 1) % keep_every == 0 or s == nsteps - 1:
            out[m] = z
            m += 1
    return out[:m]


@njit(cache=True)
def rk4_flow_variational(z0, M0, t, nsteps, sample_idx,
                         Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx):
    """Jointly integrate the state and the linearized flow.

    sample_idx: sorted step indices (0..nsteps) at which to record
    (state, frame); index nsteps is the endpoint.  Returns
    (states (m, 2n), frames (m, 2n, 2n)).
    """
    d = z0.shape[0]
    h = t / nsteps
    z = z0.copy()
    M = M0.copy()
    nsam = sample_idx.shape[0]
    zs = np.empty((nsam, d))
    Ms = np.empty((nsam, d, d))
    ptr = 0
    if nsam > 0 and sample_idx[0] == 0:
        zs[0] = z
        Ms[0] = M
        ptr = 1
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    B1 = np.empty((d, d))
    B2 = np.empty((d, d))
    B3 = np.empty((d, d))
    B4 = np.empty((d, d))
    for s in range(nsteps):
        hamilton_rhs(z, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k1)
        _variational_matrix(z, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, B1)
        K1 = B1 @ M
        for i in range(d):
            tmp[i] = z[i] + 0.5 * h * k1[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k2)
        _variational_matrix(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, B2)
        K2 = B2 @ (M + 0.5 * h * K1)
        for i in range(d):
            tmp[i] = z[i] + 0.5 * h * k2[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k3)
        _variational_matrix(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, B3)
        K3 = B3 @ (M + 0.5 * h * K2)
        for i in range(d):
            tmp[i] = z[i] + h * k3[i]
        hamilton_rhs(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, k4)
        _variational_matrix(tmp, Ainv, uk, ucc, ucs, bk, bcc, bcs, bidx, B4)
        K4 = B4 @ (M + h * K3)
        for i in range(d):
            z[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        M = M + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if ptr < nsam and sample_idx[ptr] == s + 1:
            zs[ptr] = z
            Ms[ptr] = M
            ptr += 1
    return zs[:ptr], Ms[:ptr]
