"""Compiled fast path for the backward/forward recursion on event-free grids.

The functions here operate on the stage-stacked arrays only and mirror the
general implementation in ``riccati``; the two are cross-checked in the test
suite. Everything is written as explicit loops over the small state/control
dimensions so the compiled code stays allocation-free inside the stage loop.
When numba is unavailable the same source runs as plain Python.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _chol(G, L):
    """Lower-triangular Cholesky factor into L; returns False when not PD."""
    n = G.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for i in range(n):
        for j in range(i + 1):
            acc = G[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return True


@njit(cache=True)
def _chol_solve_inplace(L, y):
    """Solve (L L^T) x = y in place for a (n, m) right-hand side."""
    n = L.shape[0]
    m = y.shape[1]
    for c in range(m):
        for i in range(n):
            acc = y[i, c]
            for k in range(i):
                acc -= L[i, k] * y[k, c]
            y[i, c] = acc / L[i, i]
        for i in range(n - 1, -1, -1):
            acc = y[i, c]
            for k in range(i + 1, n):
                acc -= L[k, i] * y[k, c]
            y[i, c] = acc / L[i, i]


@njit(cache=True)
def backward_kernel(Qxx, Qxu, Quu, A, B, f, hx, hu, hbar, lx, lu, xbar,
                    Qtt, qhat, starts, counts, modify, dt_max):
    N = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    K = starts.shape[0] - 1
    P = np.zeros((N + 1, nx, nx))
    sv = np.zeros((N + 1, nx))
    Psi = np.zeros((N + 1, nx))
    Phi = np.zeros((N + 1, nx))
    xi = np.zeros(N + 1)
    chi = np.zeros(N + 1)
    rho = np.zeros(N + 1)
    eta = np.zeros(N + 1)
    iota = np.zeros(N + 1)
    Kg = np.zeros((N, nu, nx))
    kg = np.zeros((N, nu))
    Tg = np.zeros((N, nu))
    Wg = np.zeros((N, nu))
    gmin = np.zeros(N)
    Ksz = max(K, 1)
    sig_raw = np.zeros(Ksz)
    sig_use = np.zeros(Ksz)
    sig_mod = np.zeros(Ksz, np.bool_)
    Pt = np.zeros((K + 1, nx, nx))
    st = np.zeros((K + 1, nx))
    Phit = np.zeros((K + 1, nx))
    rhot = np.zeros(K + 1)
    iotat = np.zeros(K + 1)

    # carried state and stage workspaces, reused across the whole sweep
    Pc = Qxx[N].copy()
    sc = np.empty(nx)
    Psic = np.zeros(nx)
    Phic = np.zeros(nx)
    PA = np.empty((nx, nx))
    PB = np.empty((nx, nu))
    Fm = np.empty((nx, nx))
    Hm = np.empty((nx, nu))
    G = np.empty((nu, nu))
    L = np.empty((nu, nu))
    v1 = np.empty(nx)
    Pxs = np.empty(nx)
    psix = np.empty(nx)
    phix = np.empty(nx)
    rhs = np.empty((nu, nx + 3))
    psiu_0 = np.empty(nu)
    phiu_0 = np.empty(nu)
    Pn = np.empty((nx, nx))
    sn = np.empty(nx)
    Psin = np.empty(nx)
    Phin = np.empty(nx)

    for a in range(nx):
        sc[a] = -lx[N, a]
        P[N, a] = Pc[a]
        sv[N, a] = sc[a]
    xic = 0.0
    chic = 0.0
    rhoc = 0.0
    etac = 0.0
    iotac = 0.0

    for p in range(K, -1, -1):
        if K >= 1:
            xic += Qtt[p]
            etac -= qhat[p]
        for i in range(starts[p] + counts[p] - 1, starts[p] - 1, -1):
            for a in range(nx):
                for b in range(nx):
                    acc = 0.0
                    for c in range(nx):
                        acc += Pc[a, c] * A[i, c, b]
                    PA[a, b] = acc
                for b in range(nu):
                    acc = 0.0
                    for c in range(nx):
                        acc += Pc[a, c] * B[i, c, b]
                    PB[a, b] = acc
            for a in range(nx):
                for b in range(nx):
                    acc = Qxx[i, a, b]
                    for c in range(nx):
                        acc += A[i, c, a] * PA[c, b]
                    Fm[a, b] = acc
                for b in range(nu):
                    acc = Qxu[i, a, b]
                    for c in range(nx):
                        acc += A[i, c, a] * PB[c, b]
                    Hm[a, b] = acc
            for a in range(nu):
                for b in range(nu):
                    acc = Quu[i, a, b]
                    for c in range(nx):
                        acc += B[i, c, a] * PB[c, b]
                    G[a, b] = acc
            if not _chol(G, L):
                return (P, sv, Psi, Phi, xi, chi, rho, eta, iota, Kg, kg, Tg, Wg,
                        gmin, sig_raw, sig_use, sig_mod, Pt, st, Phit, rhot,
                        iotat, 1, i)
            dmin = L[0, 0]
            for d in range(1, nu):
                if L[d, d] < dmin:
                    dmin = L[d, d]
            gmin[i] = dmin
            for a in range(nx):
                acc = Psic[a]
                accx = -sc[a]
                for c in range(nx):
                    acc += Pc[a, c] * f[i, c]
                    accx += Pc[a, c] * xbar[i, c]
                v1[a] = acc
                Pxs[a] = accx
            for a in range(nx):
                accp = hx[i, a]
                accf = 0.0
                for c in range(nx):
                    accp += A[i, c, a] * v1[c]
                    accf += A[i, c, a] * Phic[c]
                psix[a] = accp
                phix[a] = accf
            # rhs columns: state feedback, duration channel, boundary channel,
            # affine term
            for a in range(nu):
                accp = hu[i, a]
                accf = 0.0
                acck = lu[i, a]
                for c in range(nx):
                    accp += B[i, c, a] * v1[c]
                    accf += B[i, c, a] * Phic[c]
                    acck += B[i, c, a] * Pxs[c]
                rhs[a, nx] = accp
                rhs[a, nx + 1] = accf
                rhs[a, nx + 2] = acck
                psiu_0[a] = accp
                phiu_0[a] = accf
                for b in range(nx):
                    rhs[a, b] = Hm[b, a]
            _chol_solve_inplace(L, rhs)
            for a in range(nu):
                for b in range(nx):
                    Kg[i, a, b] = -rhs[a, b]
                Tg[i, a] = -rhs[a, nx]
                Wg[i, a] = -rhs[a, nx + 1]
                kg[i, a] = -rhs[a, nx + 2]
            for a in range(nx):
                for b in range(nx):
                    acc = Fm[a, b]
                    for c in range(nu):
                        acc += Kg[i, c, a] * Hm[b, c]
                    Pn[a, b] = acc
            for a in range(nx):
                for b in range(a, nx):
                    m = 0.5 * (Pn[a, b] + Pn[b, a])
                    Pc[a, b] = m
                    Pc[b, a] = m
            for a in range(nx):
                acc = -lx[i, a]
                for c in range(nx):
                    acc -= A[i, c, a] * Pxs[c]
                for c in range(nu):
                    acc -= Hm[a, c] * kg[i, c]
                sn[a] = acc
            for a in range(nx):
                accp = psix[a]
                accf = phix[a]
                for c in range(nu):
                    accp += Kg[i, c, a] * psiu_0[c]
                    accf += Kg[i, c, a] * phiu_0[c]
                Psin[a] = accp
                Phin[a] = accf
            xin = xic
            etan = etac + hbar[i]
            chin = chic
            rhon = rhoc
            iotan = iotac
            for c in range(nx):
                xin += f[i, c] * (v1[c] + Psic[c])
                etan += f[i, c] * Pxs[c] + Psic[c] * xbar[i, c]
                chin += Phic[c] * f[i, c]
                iotan += Phic[c] * xbar[i, c]
            for c in range(nu):
                xin += psiu_0[c] * Tg[i, c]
                etan += psiu_0[c] * kg[i, c]
                chin += psiu_0[c] * Wg[i, c]
                rhon += phiu_0[c] * Wg[i, c]
                iotan += phiu_0[c] * kg[i, c]
            for a in range(nx):
                sc[a] = sn[a]
                Psic[a] = Psin[a]
                Phic[a] = Phin[a]
                P[i, a] = Pc[a]
                sv[i, a] = sc[a]
                Psi[i, a] = Psic[a]
                Phi[i, a] = Phic[a]
            xic = xin
            chic = chin
            rhoc = rhon
            etac = etan
            iotac = iotan
            xi[i] = xic
            chi[i] = chic
            rho[i] = rhoc
            eta[i] = etac
            iota[i] = iotac
        if p + 1 <= K:
            sig = xic - 2.0 * chic + rhoc
            sig_raw[p] = sig
            if modify:
                sbar = abs(etac - iotac) / dt_max
                if sig <= sbar:
                    sig_use[p] = abs(sig) + sbar
                    sig_mod[p] = True
                else:
                    sig_use[p] = sig
            else:
                if sig <= 0.0:
                    return (P, sv, Psi, Phi, xi, chi, rho, eta, iota, Kg, kg, Tg,
                            Wg, gmin, sig_raw, sig_use, sig_mod, Pt, st, Phit,
                            rhot, iotat, 2, p + 1)
                sig_use[p] = sig
        if p >= 1:
            inv = 0.0
            if p + 1 <= K:
                inv = 1.0 / sig_use[p]
            modP = modify and (p + 1 <= K)
            for a in range(nx):
                da = Psic[a] - Phic[a]
                for b in range(nx):
                    if modP:
                        Pt[p, a, b] = Pc[a, b]
                    else:
                        Pt[p, a, b] = Pc[a, b] - inv * da * (Psic[b] - Phic[b])
                st[p, a] = sc[a] + inv * (etac - iotac) * da
                Phit[p, a] = Psic[a] - inv * (xic - chic) * da
            rhot[p] = xic - inv * (xic - chic) ** 2
            iotat[p] = etac - inv * (xic - chic) * (etac - iotac)
            for a in range(nx):
                for b in range(nx):
                    Pc[a, b] = Pt[p, a, b]
                sc[a] = st[p, a]
                Phic[a] = Phit[p, a]
                Psic[a] = 0.0
            rhoc = rhot[p]
            iotac = iotat[p]
            xic = 0.0
            chic = 0.0
            etac = 0.0
    return (P, sv, Psi, Phi, xi, chi, rho, eta, iota, Kg, kg, Tg, Wg, gmin,
            sig_raw, sig_use, sig_mod, Pt, st, Phit, rhot, iotat, 0, -1)


@njit(cache=True)
def forward_kernel(A, B, f, xbar, x0_res, P, sv, Psi, Phi, xi, chi, eta, iota,
                   Kg, kg, Tg, Wg, sig_use, starts, counts):
    N = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    K = starts.shape[0] - 1
    dx = np.zeros((N + 1, nx))
    du = np.zeros((N, nu))
    dlam = np.zeros((N + 1, nx))
    dts = np.zeros(K + 2)
    for a in range(nx):
        dx[0, a] = -x0_res[a]
    for p in range(K + 1):
        i0 = starts[p]
        if p + 1 <= K:
            acc = (eta[i0] - iota[i0]) - (xi[i0] - chi[i0]) * dts[p]
            for a in range(nx):
                acc += (Psi[i0, a] - Phi[i0, a]) * dx[i0, a]
            dts[p + 1] = -acc / sig_use[p]
        c2 = dts[p + 1] - dts[p]
        c1 = -dts[p + 1]
        for i in range(i0, i0 + counts[p]):
            for a in range(nu):
                acc = kg[i, a] + Tg[i, a] * c2 + Wg[i, a] * c1
                for c in range(nx):
                    acc += Kg[i, a, c] * dx[i, c]
                du[i, a] = acc
            for a in range(nx):
                acc = -sv[i, a] + Psi[i, a] * c2 + Phi[i, a] * c1
                for c in range(nx):
                    acc += P[i, a, c] * dx[i, c]
                dlam[i, a] = acc
            for a in range(nx):
                acc = f[i, a] * c2 + xbar[i, a]
                for c in range(nx):
                    acc += A[i, a, c] * dx[i, c]
                for c in range(nu):
                    acc += B[i, a, c] * du[i, c]
                dx[i + 1, a] = acc
    for a in range(nx):
        acc = -sv[N, a]
        for c in range(nx):
            acc += P[N, a, c] * dx[N, c]
        dlam[N, a] = acc
    return dx, du, dts[1:K + 1], dlam
