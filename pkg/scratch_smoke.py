"""Scratch driver: oracle-vs-recursion equivalence on synthetic instances."""
import numpy as np

from swocp.kkt import KKTData, JumpKKT, CondKKT
from swocp import riccati, oracle


def random_kkt_data(rng, nx, nu, counts, jump_switches=(), cond_switches=(),
                    h_scale=0.3, qtt_scale=1.0):
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
    data = KKTData(
        nx=nx, nu=nu, N=N, K=K,
        starts=starts, counts=np.asarray(counts, dtype=np.int64),
        Qxx=Qxx, Qxu=Qxu, Quu=Quu,
        A=rng.standard_normal((N, nx, nx)) * 0.5 + np.eye(nx),
        B=rng.standard_normal((N, nx, nu)) * 0.5,
        f=rng.standard_normal((N, nx)) * 0.5,
        hx=rng.standard_normal((N, nx)) * h_scale,
        hu=rng.standard_normal((N, nu)) * h_scale,
        hbar=rng.standard_normal(N) * h_scale,
        lx=rng.standard_normal((N + 1, nx)),
        lu=rng.standard_normal((N, nu)),
        xbar=rng.standard_normal((N, nx)),
        x0_res=rng.standard_normal(nx),
        Q_tt=np.abs(rng.standard_normal(K + 1)) * qtt_scale if K else np.zeros(0),
        q_t_bar=rng.standard_normal(K + 1) if K else np.zeros(0),
        q_t_hat=rng.standard_normal(K + 1) if K else np.zeros(0),
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
            x_bar_pre=rng.standard_normal(nx),
            l_x_pre=rng.standard_normal(nx))
    for s in cond_switches:
        ne = 1
        stage = int(starts[s - 1] + counts[s - 1] - 2)
        D = rng.standard_normal((ne, nu))
        while np.linalg.matrix_rank(D) < ne:
            D = rng.standard_normal((ne, nu))
        data.conds[s] = CondKKT(
            switch=s, stage=stage,
            C=rng.standard_normal((ne, nx)), D=D,
            E=rng.standard_normal(ne), e_bar=rng.standard_normal(ne),
            zeta=rng.standard_normal(ne))
    return data


def run_case(seed, nx, nu, counts, jumps=(), conds=(), use_kernel=False):
    rng = np.random.default_rng(seed)
    data = random_kkt_data(rng, nx, nu, counts, jumps, conds)
    try:
        step, rep = riccati.solve_step(
            data, riccati.RiccatiOptions(modify=False, use_kernel=use_kernel))
    except riccati.RiccatiError as e:
        return ("riccati-fail", str(e))
    dense = oracle.solve_dense(oracle.assemble_dense(data))
    cmp = oracle.compare(step, dense, 1e-8)
    return ("ok" if cmp.passed else "MISMATCH", cmp.max_deviation(), cmp.failing_groups())


if __name__ == "__main__":
    print("K=0 plain:", run_case(0, 3, 2, (5,)))
    print("K=1:", run_case(1, 2, 1, (3, 4)))
    print("K=2:", run_case(2, 3, 2, (3, 2, 4)))
    print("K=3:", run_case(3, 4, 2, (2, 3, 2, 3)))
    print("jump:", run_case(4, 3, 2, (3, 3), jumps=(1,)))
    print("cond:", run_case(5, 3, 2, (3, 3), conds=(1,)))
    print("jump+cond:", run_case(6, 2, 1, (3, 3), jumps=(1,), conds=(1,)))
    print("all, K=3:", run_case(7, 3, 2, (3, 3, 2, 3), jumps=(1, 3), conds=(1,)))
    print("kernel K=2:", run_case(2, 3, 2, (3, 2, 4), use_kernel=True))
