import numpy as np
import pytest

from conftest import random_kkt_data, textbook_lqr_step
from swocp import oracle, riccati
from swocp.riccati import RiccatiError, RiccatiOptions


def test_scalar_stage_hand_values():
    # one scalar stage against a unit value function
    rng = np.random.default_rng(0)
    data = random_kkt_data(rng, 1, 1, (1,))
    data.Qxx[:] = 1.0
    data.Quu[:] = 1.0
    data.Qxu[:] = 0.0
    data.A[:] = 1.0
    data.B[:] = 1.0
    data.Qxx[1] = 1.0  # terminal value matrix P' = 1
    fact = riccati.backward(data, RiccatiOptions(use_kernel=False))
    G = 1.0 + 1.0 * 1.0 * 1.0
    assert np.isclose(G, 2.0)
    assert np.isclose(fact.Kg[0][0, 0], -0.5)
    assert np.isclose(fact.P[0][0, 0], 1.5)


def test_sigma_definition_and_modification_arithmetic():
    # curvature scalar from its three carried pieces
    assert np.isclose(3.0 - 2.0 * 1.0 + 1.0, 2.0)
    sig, modified = riccati._sigma_guard(
        -0.5, 0.2, 0.0, switch=1, opts=RiccatiOptions(modify=True, dt_max=0.1))
    assert modified
    assert np.isclose(sig, 2.5)  # |sigma| + |eta - iota| / dt_max
    sig, modified = riccati._sigma_guard(
        5.0, 0.2, 0.0, switch=1, opts=RiccatiOptions(modify=True, dt_max=0.1))
    assert not modified and sig == 5.0


def test_sigma_matches_carried_scalars():
    rng = np.random.default_rng(1)
    data = random_kkt_data(rng, 2, 1, (3, 4))
    fact = riccati.backward(data, RiccatiOptions(modify=True, use_kernel=False))
    i0 = int(data.starts[0])
    assert np.isclose(fact.sigma_raw[0],
                      fact.xi[i0] - 2.0 * fact.chi[i0] + fact.rho[i0])


def test_sigma_nonpositive_raises_without_modification():
    rng = np.random.default_rng(2)
    data = random_kkt_data(rng, 2, 1, (2, 2))
    # poison the switching curvature with a strongly concave coupling
    data.Q_tt[:] = 0.0
    data.hx[:] = 0.0
    data.hu[:] = 3.0
    with pytest.raises(RiccatiError) as err:
        riccati.backward(data, RiccatiOptions(modify=False, use_kernel=False))
    assert err.value.kind in ("sigma_nonpositive", "sosc_violated")
    riccati.backward(data, RiccatiOptions(modify=True, use_kernel=False))


def test_cholesky_failure_names_stage():
    rng = np.random.default_rng(3)
    data = random_kkt_data(rng, 2, 1, (4,))
    data.Quu[2] = -np.eye(1)
    data.B[2] = 0.0
    with pytest.raises(RiccatiError) as err:
        riccati.backward(data, RiccatiOptions(use_kernel=False))
    assert err.value.kind == "sosc_violated"
    assert err.value.stage == 2


def test_licq_failure_on_rank_deficient_condition():
    rng = np.random.default_rng(4)
    data = random_kkt_data(rng, 2, 1, (3, 3), cond_switches=(1,))
    data.conds[1].D = np.zeros((1, 1))
    with pytest.raises(RiccatiError) as err:
        riccati.backward(data, RiccatiOptions(use_kernel=False))
    assert err.value.kind == "licq_failure"


def test_zero_residuals_give_zero_step():
    rng = np.random.default_rng(5)
    data = random_kkt_data(rng, 3, 2, (2, 3, 2), jump_switches=(2,),
                           cond_switches=(1,), zero_residuals=True)
    step, _ = riccati.solve_step(data, RiccatiOptions(modify=True, use_kernel=False))
    assert step.max_abs() <= 1e-14


def test_initial_state_row_is_exact():
    rng = np.random.default_rng(6)
    data = random_kkt_data(rng, 2, 1, (4,))
    data.x0_res = np.array([1.0, -2.0])
    step, _ = riccati.solve_step(data)
    assert np.allclose(step.dx[0], [-1.0, 2.0])


def test_matches_textbook_lqr_on_single_phase():
    rng = np.random.default_rng(7)
    data = random_kkt_data(rng, 3, 2, (9,))
    step, _ = riccati.solve_step(data, RiccatiOptions(use_kernel=False))
    dx, du, dlam = textbook_lqr_step(data)
    assert np.allclose(step.dx, dx, atol=1e-10)
    assert np.allclose(step.du, du, atol=1e-10)
    # costate sign convention: value gradient equals the multiplier
    assert np.allclose(step.dlam, dlam, atol=1e-10)


@pytest.mark.parametrize("seed", range(8))
def test_small_instances_match_dense_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    nx = int(rng.integers(2, 5))
    nu = int(rng.integers(1, 3))
    K = int(rng.integers(0, 4))
    counts = tuple(int(rng.integers(2, 5)) for _ in range(K + 1))
    jumps = tuple(s for s in range(1, K + 1) if rng.random() < 0.5)
    conds = tuple(s for s in jumps if rng.random() < 0.5)
    data = random_kkt_data(rng, nx, nu, counts, jumps, conds)
    try:
        step, _ = riccati.solve_step(data, RiccatiOptions(modify=False,
                                                          use_kernel=False))
    except RiccatiError:
        pytest.skip("instance landed outside the positive-curvature region")
    dense = oracle.solve_dense(oracle.assemble_dense(data))
    rep = oracle.compare(step, dense, tol=1e-8)
    assert rep.passed, rep.deviations


def test_kernel_and_general_paths_agree():
    rng = np.random.default_rng(8)
    data = random_kkt_data(rng, 4, 2, (2, 3, 2, 3))
    s_py, rep_py = riccati.solve_step(data, RiccatiOptions(modify=False, use_kernel=False))
    s_k, rep_k = riccati.solve_step(data, RiccatiOptions(modify=False, use_kernel=True))
    assert np.allclose(s_py.dx, s_k.dx, atol=1e-12)
    assert np.allclose(s_py.du, s_k.du, atol=1e-12)
    assert np.allclose(s_py.dts, s_k.dts, atol=1e-12)
    assert np.allclose(s_py.dlam, s_k.dlam, atol=1e-12)
    assert np.allclose(rep_py.sigma_raw, rep_k.sigma_raw, atol=1e-12)
    assert np.allclose(rep_py.g_chol_min, rep_k.g_chol_min, atol=1e-12)


def test_value_matrices_stay_symmetric():
    rng = np.random.default_rng(9)
    data = random_kkt_data(rng, 3, 2, (3, 3, 3))
    fact = riccati.backward(data, RiccatiOptions(modify=True))
    for i in range(data.N + 1):
        asym = np.max(np.abs(fact.P[i] - fact.P[i].T))
        assert asym <= 1e-12 * max(1.0, np.max(np.abs(fact.P[i])))


def _materialized_stage_subproblem(data, fact, i, p, dx, c1, c2):
    """Stage decision by brute force: minimize the one-stage quadratic plus
    the stored tail value over the control direction."""
    nxt = fact.P[i + 1], fact.s[i + 1], fact.Psi[i + 1], fact.Phi[i + 1]
    P1, s1, Psi1, Phi1 = nxt
    xi1, chi1, rho1 = fact.xi[i + 1], fact.chi[i + 1], fact.rho[i + 1]
    eta1, iota1 = fact.eta[i + 1], fact.iota[i + 1]

    def total(du):
        xn = data.A[i] @ dx + data.B[i] @ du + data.f[i] * c2 + data.xbar[i]
        stage = (0.5 * dx @ data.Qxx[i] @ dx + dx @ data.Qxu[i] @ du
                 + 0.5 * du @ data.Quu[i] @ du
                 + c2 * (data.hx[i] @ dx + data.hu[i] @ du)
                 + data.lx[i] @ dx + data.lu[i] @ du + data.hbar[i] * c2)
        tail = (0.5 * xn @ P1 @ xn - s1 @ xn
                + c2 * (Psi1 @ xn) + c1 * (Phi1 @ xn)
                + 0.5 * (xi1 * c2 * c2 + rho1 * c1 * c1) + chi1 * c1 * c2
                + eta1 * c2 + iota1 * c1)
        return stage + tail

    nu = data.nu
    # dense stationary point of the quadratic in du
    H = np.zeros((nu, nu))
    g0 = np.zeros(nu)
    base = total(np.zeros(nu))
    for a in range(nu):
        e = np.zeros(nu)
        e[a] = 1.0
        g0[a] = (total(e) - total(-e)) / 2.0
        H[a, a] = total(e) + total(-e) - 2.0 * base
        for b in range(a):
            eb = np.zeros(nu)
            eb[b] = 1.0
            cross = total(e + eb) - total(e) - total(eb) + base
            H[a, b] = H[b, a] = cross
    return np.linalg.solve(H, -g0)


def test_stage_decision_solves_materialized_subproblem():
    # brute-force argmin of the one-stage quadratic matches the stored gains
    rng = np.random.default_rng(10)
    data = random_kkt_data(rng, 2, 2, (3, 3))
    fact = riccati.backward(data, RiccatiOptions(modify=False, use_kernel=False))
    for (i, p) in ((4, 1), (1, 0)):
        dx = rng.standard_normal(2)
        if p == 1:
            c1, c2 = 0.0, -0.37          # last phase: boundary change only
        else:
            c1, c2 = -0.37, 0.37 - 0.21
        du_dp = _materialized_stage_subproblem(data, fact, i, p, dx, c1, c2)
        du_rec = fact.Kg[i] @ dx + fact.kg[i] + fact.Tg[i] * c2 + fact.Wg[i] * c1
        assert np.allclose(du_dp, du_rec, atol=1e-9)


def test_switch_decision_minimizes_cost_to_go():
    # the eliminated switching-time direction is the scalar argmin of the
    # carried quadratic value at the phase's first stage
    rng = np.random.default_rng(11)
    data = random_kkt_data(rng, 2, 1, (3, 3))
    fact = riccati.backward(data, RiccatiOptions(modify=False, use_kernel=False))
    i0 = int(data.starts[0])
    dx = rng.standard_normal(2)
    dt_prev = 0.0

    def value(dt):
        c2 = dt - dt_prev
        c1 = -dt
        return (0.5 * (fact.xi[i0] * c2 * c2 + fact.rho[i0] * c1 * c1)
                + fact.chi[i0] * c1 * c2
                + c2 * (fact.Psi[i0] @ dx) + c1 * (fact.Phi[i0] @ dx)
                + fact.eta[i0] * c2 + fact.iota[i0] * c1)

    h = 1e-5
    grid = np.linspace(-3, 3, 2001)
    dt_best = grid[np.argmin([value(t) for t in grid])]
    dt_rec = -((fact.Psi[i0] - fact.Phi[i0]) @ dx
               - (fact.xi[i0] - fact.chi[i0]) * dt_prev
               + (fact.eta[i0] - fact.iota[i0])) / fact.sigma_used[0]
    assert abs(value(dt_rec + h) - value(dt_rec - h)) <= 1e-8  # stationary
    assert abs(dt_best - dt_rec) <= 2 * (grid[1] - grid[0])


def test_modified_pass_keeps_value_matrices_psd():
    for seed in range(6):
        rng = np.random.default_rng(200 + seed)
        data = random_kkt_data(rng, 3, 2, (3, 3, 3), h_scale=4.0)
        fact = riccati.backward(data, RiccatiOptions(modify=True, use_kernel=False))
        for i in range(data.N + 1):
            assert np.linalg.eigvalsh(fact.P[i]).min() >= -1e-10
        assert np.all(fact.sigma_used > 0)


def test_linear_residual_of_unmodified_step_vanishes():
    rng = np.random.default_rng(12)
    data = random_kkt_data(rng, 3, 1, (3, 2, 3), jump_switches=(1,), cond_switches=(1,))
    step, _ = riccati.solve_step(data, RiccatiOptions(modify=False, use_kernel=False))
    sys = oracle.assemble_dense(data)
    vec = np.zeros(sys.dim)
    for i in range(data.N + 1):
        vec[sys.sl("x", i)] = step.dx[i]
        vec[sys.sl("lam", i)] = step.dlam[i]
    for i in range(data.N):
        vec[sys.sl("u", i)] = step.du[i]
    for s in range(1, data.K + 1):
        vec[sys.sl("t", s)] = step.dts[s - 1]
    for s in step.dx_pre:
        vec[sys.sl("x_pre", s)] = step.dx_pre[s]
        vec[sys.sl("lam_pre", s)] = step.dlam_pre[s]
    for s in step.dzeta:
        vec[sys.sl("zeta", s)] = step.dzeta[s]
    scale = 1.0 + max(np.max(np.abs(sys.matrix)), np.max(np.abs(sys.rhs)))
    assert np.max(np.abs(sys.matrix @ vec + sys.rhs)) <= 1e-10 * scale


def test_solve_step_report_contents():
    rng = np.random.default_rng(13)
    data = random_kkt_data(rng, 2, 1, (3, 3))
    step, report = riccati.solve_step(data, RiccatiOptions(modify=True))
    assert report.g_chol_min.shape == (data.N,)
    assert np.all(report.g_chol_min > 0)
    assert report.sigma_raw.shape == (1,)
    assert report.modify_enabled
