"""Shared generators and reference implementations for the test suite."""
import numpy as np
import pytest

from swocp.kkt import CondKKT, JumpKKT, KKTData
from swocp.model import PhaseSpec, SwitchedOCP


def random_kkt_data(rng, nx, nu, counts, jump_switches=(), cond_switches=(),
                    h_scale=0.3, qtt_scale=1.0, zero_residuals=False):
    """Synthetic stage-stacked system with Assumption-1 style Hessian blocks."""
    counts = tuple(counts)
    K = len(counts) - 1
    N = sum(counts)
    starts = np.cumsum([0, *counts[:-1]]).astype(np.int64)

    def psd_pair():
        M = rng.standard_normal((nx + nu, nx + nu))
        S = M.T @ M / (nx + nu)
        S[nx:, nx:] += 0.3 * np.eye(nu)
        return S[:nx, :nx], S[:nx, nx:], S[nx:, nx:]

    Qxx = np.zeros((N + 1, nx, nx))
    Qxu = np.zeros((N, nx, nu))
    Quu = np.zeros((N, nu, nu))
    for i in range(N):
        Qxx[i], Qxu[i], Quu[i] = psd_pair()
    Mn = rng.standard_normal((nx, nx))
    Qxx[N] = Mn.T @ Mn / nx

    def vec(*shape, scale=1.0):
        if zero_residuals:
            return np.zeros(shape)
        return rng.standard_normal(shape) * scale

    data = KKTData(
        nx=nx, nu=nu, N=N, K=K,
        starts=starts, counts=np.asarray(counts, dtype=np.int64),
        Qxx=Qxx, Qxu=Qxu, Quu=Quu,
        A=rng.standard_normal((N, nx, nx)) * 0.5 + np.eye(nx),
        B=rng.standard_normal((N, nx, nu)) * 0.5,
        f=rng.standard_normal((N, nx)) * 0.5,
        hx=rng.standard_normal((N, nx)) * h_scale,
        hu=rng.standard_normal((N, nu)) * h_scale,
        hbar=vec(N, scale=h_scale),
        lx=vec(N + 1, nx),
        lu=vec(N, nu),
        xbar=vec(N, nx),
        x0_res=vec(nx),
        Q_tt=np.abs(rng.standard_normal(K + 1)) * qtt_scale if K else np.zeros(0),
        q_t_bar=vec(K + 1) if K else np.zeros(0),
        q_t_hat=vec(K + 1) if K else np.zeros(0),
        g_val=[np.zeros((c, 0)) for c in counts],
        g_x=[np.zeros((c, 0, nx)) for c in counts],
        g_u=[np.zeros((c, 0, nu)) for c in counts],
        r_dwell=np.zeros(K + 1) if K else np.zeros(0),
        rw=np.zeros(K + 1) if K else np.zeros(0),
    )
    for s in jump_switches:
        data.jumps[s] = JumpKKT(
            switch=s,
            A_pre=rng.standard_normal((nx, nx)) * 0.4 + np.eye(nx),
            Q_xx_pre=(lambda M: M.T @ M / nx)(rng.standard_normal((nx, nx))),
            x_bar_pre=vec(nx),
            l_x_pre=vec(nx))
    for s in cond_switches:
        ne = 1
        stage = int(starts[s - 1] + counts[s - 1] - 2)
        D = rng.standard_normal((ne, nu))
        while np.linalg.norm(D) < 0.2:
            D = rng.standard_normal((ne, nu))
        data.conds[s] = CondKKT(
            switch=s, stage=stage,
            C=rng.standard_normal((ne, nx)), D=D,
            E=rng.standard_normal(ne), e_bar=vec(ne),
            zeta=vec(ne))
    return data


def textbook_lqr_step(data):
    """Independent time-varying LQR solve of a K=0 instance (value-function
    recursion in the standard cost-to-go form), used as a reference."""
    N, nx = data.N, data.nx
    P = data.Qxx[N].copy()
    p = data.lx[N].copy()
    gains = []
    for i in range(N - 1, -1, -1):
        A, B = data.A[i], data.B[i]
        Qxx_hat = data.Qxx[i] + A.T @ P @ A
        Qux = data.Qxu[i].T + B.T @ P @ A
        Quu_hat = data.Quu[i] + B.T @ P @ B
        qx = data.lx[i] + A.T @ (p + P @ data.xbar[i])
        qu = data.lu[i] + B.T @ (p + P @ data.xbar[i])
        Kd = -np.linalg.solve(Quu_hat, Qux)
        dd = -np.linalg.solve(Quu_hat, qu)
        gains.append((Kd, dd))
        P = Qxx_hat + Qux.T @ Kd
        P = 0.5 * (P + P.T)
        p = qx + Qux.T @ dd
    gains.reverse()
    dx = np.zeros((N + 1, nx))
    du = np.zeros((N, data.nu))
    dlam = np.zeros((N + 1, nx))
    dx[0] = -data.x0_res
    Ps, ps = [], []
    # recompute value functions forward for the costates
    P = data.Qxx[N].copy()
    p = data.lx[N].copy()
    vals = [(P, p)]
    for i in range(N - 1, -1, -1):
        A, B = data.A[i], data.B[i]
        Qxx_hat = data.Qxx[i] + A.T @ P @ A
        Qux = data.Qxu[i].T + B.T @ P @ A
        Quu_hat = data.Quu[i] + B.T @ P @ B
        qx = data.lx[i] + A.T @ (p + P @ data.xbar[i])
        qu = data.lu[i] + B.T @ (p + P @ data.xbar[i])
        Kd = -np.linalg.solve(Quu_hat, Qux)
        dd = -np.linalg.solve(Quu_hat, qu)
        P = Qxx_hat + Qux.T @ Kd
        P = 0.5 * (P + P.T)
        p = qx + Qux.T @ dd
        vals.append((P.copy(), p.copy()))
    vals.reverse()
    for i in range(N):
        Kd, dd = gains[i]
        du[i] = Kd @ dx[i] + dd
        dlam[i] = vals[i][0] @ dx[i] + vals[i][1]
        dx[i + 1] = data.A[i] @ dx[i] + data.B[i] @ du[i] + data.xbar[i]
    dlam[N] = vals[N][0] @ dx[N] + vals[N][1]
    return dx, du, dlam


def scalar_ocp(with_bound: bool = False):
    """One-phase scalar problem: integrator dynamics, quadratic costs."""
    ng = 1 if with_bound else 0
    ph = PhaseSpec(
        f=lambda x, u: u.copy(),
        f_x=lambda x, u: np.zeros((1, 1)),
        f_u=lambda x, u: np.eye(1),
        f_hess_xx=lambda x, u, lam: np.zeros((1, 1)),
        f_hess_xu=lambda x, u, lam: np.zeros((1, 1)),
        f_hess_uu=lambda x, u, lam: np.zeros((1, 1)),
        l=lambda x, u: 0.5 * float(x @ x + u @ u),
        l_x=lambda x, u: x.copy(),
        l_u=lambda x, u: u.copy(),
        l_xx=lambda x, u: np.eye(1),
        l_xu=lambda x, u: np.zeros((1, 1)),
        l_uu=lambda x, u: np.eye(1),
        ng=ng,
        g=(lambda x, u: u - 1.0) if with_bound else None,
        g_x=(lambda x, u: np.zeros((1, 1))) if with_bound else None,
        g_u=(lambda x, u: np.eye(1)) if with_bound else None,
    )
    return SwitchedOCP(
        phases=[ph],
        terminal_cost=lambda x: 0.5 * float(x @ x),
        terminal_cost_grad=lambda x: x.copy(),
        terminal_cost_hess=lambda x: np.eye(1),
        t0=0.0, tf=1.0, nx=1, nu=1, x0=np.array([1.0]),
    )


@pytest.fixture(scope="session")
def three_subsystem_converged():
    """Solved benchmark iterate at N=10, shared across tests."""
    from swocp import interior_point as ip
    from swocp import problems, solver, transcription

    ocp = problems.three_subsystem()
    grid = transcription.build_grid(ocp, problems.three_subsystem_split(10),
                                    problems.THREE_SUBSYSTEM_T0)
    init = ip.initialize_iterate(ocp, grid)
    opts = solver.SolverOptions(hessian_mode="gauss_newton", modify=False,
                                rescue=True, tol=1e-7)
    it, log, status = solver.solve_nlp(ocp, grid, init, opts)
    assert status == "converged"
    return ocp, grid, it, log
