import numpy as np
import pytest

from conftest import scalar_ocp
from swocp import interior_point as ip
from swocp import kkt, oracle, problems, transcription


def _scalar_iterate(with_bound=False, z=1.0, nu=2.0, eps=1.0):
    ocp = scalar_ocp(with_bound)
    grid = transcription.build_grid(ocp, (1,), ())
    it = kkt.Iterate(
        xs=np.array([[1.0], [1.0]]), us=np.array([[0.0]]), ts=np.zeros(0),
        lams=np.zeros((2, 1)),
        zs=[np.array([[z]]) if with_bound else np.zeros((1, 0))],
        nus=[np.array([[nu]]) if with_bound else np.zeros((1, 0))],
        ws=np.zeros(0), upss=np.zeros(0), eps=eps)
    return ocp, grid, it


def test_scalar_residual_hand_values():
    # f = u, l = (x^2 + u^2)/2, V_f = x^2/2, step 1, x(0) target 1
    ocp, grid, it = _scalar_iterate()
    res = kkt.eval_residual(ocp, grid, it)
    assert np.isclose(res.rx[1, 0], 1.0)   # terminal: grad V_f - lam_N
    assert np.isclose(res.rx[0, 0], 1.0)   # x*dt + lam_1 - lam_0
    assert np.isclose(res.ru[0, 0], 0.0)
    assert np.isclose(res.xbar[0, 0], 0.0)
    assert np.isclose(res.x0_res[0], 0.0)


def test_scalar_assemble_hand_values():
    ocp, grid, it = _scalar_iterate()
    data = kkt.assemble(ocp, grid, it, hessian_mode="exact")
    st = data.stages[0]
    assert np.isclose(st.Q_xx[0, 0], 1.0)
    assert np.isclose(st.Q_uu[0, 0], 1.0)
    assert np.isclose(st.A[0, 0], 1.0)
    assert np.isclose(st.B[0, 0], 1.0)
    assert np.isclose(st.f_vec[0], 0.0)
    assert np.isclose(data.Q_xx_N[0, 0], 1.0)


def test_condensation_adds_scaled_outer_product():
    # g = u - 1 <= 0 with z = 1, nu = 2 adds 2 to Q_uu
    ocp, grid, it = _scalar_iterate(with_bound=True, z=1.0, nu=2.0)
    plain = kkt.assemble(*(_scalar_iterate()[:2] + (_scalar_iterate()[2],)))
    data = kkt.assemble(ocp, grid, it)
    assert np.isclose(data.Quu[0, 0, 0] - plain.Quu[0, 0, 0], 2.0)


def test_central_path_complementarity_residual_vanishes():
    eps = 0.3
    root = np.sqrt(eps)
    ocp, grid, it = _scalar_iterate(with_bound=True, z=root, nu=root, eps=eps)
    res = kkt.eval_residual(ocp, grid, it)
    assert np.allclose(res.rz[0], 0.0)


def test_dwell_condensation_scalars():
    # Q_tt = ups / w
    ocp = problems.three_subsystem()
    grid = transcription.build_grid(ocp, (2, 2, 2), (1.0, 2.0))
    it = ip.initialize_iterate(ocp, grid)
    it.ws = np.array([0.5, 1.0, 2.0])
    it.upss = np.array([1.0, 1.0, 1.0])
    data = kkt.assemble(ocp, grid, it)
    assert np.isclose(data.Q_tt[0], 2.0)
    res = kkt.residual_from_eval(ocp, grid, it,
                                 kkt.evaluate(ocp, grid, it))
    expect = (it.upss * res.r_dwell - res.rw) / it.ws
    assert np.allclose(data.q_t_bar, expect)
    assert np.allclose(data.q_t_hat, expect + it.upss)


def test_exact_kkt_point_has_tiny_unperturbed_norm():
    # one Newton step on a pure-equality LQR lands on the exact solution
    ocp = scalar_ocp()
    grid = transcription.build_grid(ocp, (6,), ())
    it = ip.initialize_iterate(ocp, grid)
    data = kkt.assemble(ocp, grid, it, hessian_mode="exact")
    res = kkt.eval_residual(ocp, grid, it)
    dense = oracle.solve_dense(oracle.assemble_dense(data))
    new = ip.apply_step(it, ip.recover_bound_steps(it, dense, data, res), 1.0, 1.0)
    res2 = kkt.eval_residual(ocp, grid, new)
    assert res2.norms.unperturbed_max <= 1e-10


def test_assemble_residual_vectors_small_at_solution(three_subsystem_converged):
    ocp, grid, it, _ = three_subsystem_converged
    data = kkt.assemble(ocp, grid, it)
    tol = 2e-7
    assert np.max(np.abs(data.lx)) <= tol
    assert np.max(np.abs(data.lu)) <= tol
    assert np.max(np.abs(data.xbar)) <= tol
    assert np.max(np.abs(data.x0_res)) <= tol


def test_directional_derivative_consistency():
    # finite-difference slope of the residual map against the assembled
    # operator, on an unconstrained instance with exact Hessians
    ocp = problems.three_subsystem()
    grid = transcription.build_grid(ocp, (3, 2, 2), (1.0, 2.0))
    rng = np.random.default_rng(7)
    it = ip.initialize_iterate(ocp, grid)
    it.xs = rng.standard_normal(it.xs.shape)
    it.us = rng.standard_normal(it.us.shape)
    it.lams = rng.standard_normal(it.lams.shape)

    import copy

    data = copy.deepcopy(kkt.assemble(ocp, grid, it, hessian_mode="exact"))
    # the probe holds the dwell slacks/duals fixed, so the switching-time rows
    # see only the Hamiltonian couplings, not the condensed dwell block
    data.Q_tt = np.zeros_like(data.Q_tt)
    data.q_t_hat = np.zeros_like(data.q_t_hat)
    sys = oracle.assemble_dense(data)

    dvec = rng.standard_normal(sys.dim)

    def stacked_residual(jt):
        res = kkt.eval_residual(ocp, grid, jt)
        parts = [res.x0_res]
        for i in range(grid.N):
            parts.append(res.xbar[i])
        for i in range(grid.N + 1):
            parts.append(res.rx[i])
        for i in range(grid.N):
            parts.append(res.ru[i])
        parts.append(res.sto)
        return np.concatenate(parts)

    def order_rows(sys_mat, sys_rhs):
        rows = [sys.sl("lam", 0)]
        rows += [sys.sl("lam", i + 1) for i in range(grid.N)]
        rows += [sys.sl("x", i) for i in range(grid.N + 1)]
        rows += [sys.sl("u", i) for i in range(grid.N)]
        rows += [sys.sl("t", s) for s in range(1, grid.K + 1)]
        idx = np.concatenate([np.arange(r.start, r.stop) for r in rows])
        return sys_mat[idx], sys_rhs[idx]

    M, _ = order_rows(sys.matrix, sys.rhs)

    def perturbed(h):
        jt = it.copy()
        for i in range(grid.N + 1):
            jt.xs[i] += h * dvec[sys.sl("x", i)]
            jt.lams[i] += h * dvec[sys.sl("lam", i)]
        for i in range(grid.N):
            jt.us[i] += h * dvec[sys.sl("u", i)]
        for s in range(1, grid.K + 1):
            jt.ts[s - 1] += h * float(dvec[sys.sl("t", s)][0])
        return stacked_residual(jt)

    base = stacked_residual(it)
    applied = M @ dvec
    errs = []
    for h in (1e-4, 1e-5):
        fd = (perturbed(h) - base) / h
        errs.append(np.max(np.abs(fd - applied)))
    # error is O(h): shrinking h by 10 shrinks the error accordingly
    assert errs[0] <= 1e-2
    assert errs[1] <= errs[0] * 0.2


def test_stagewise_purity_shuffled_assembly():
    ocp = problems.three_subsystem()
    grid = transcription.build_grid(ocp, (3, 2, 2), (1.0, 2.0))
    rng = np.random.default_rng(11)
    it = ip.initialize_iterate(ocp, grid)
    it.xs = rng.standard_normal(it.xs.shape)
    it.us = rng.standard_normal(it.us.shape)
    it.lams = rng.standard_normal(it.lams.shape)
    order = rng.permutation(grid.N)
    ordered = [kkt.assemble_stage(ocp, grid, it, i) for i in range(grid.N)]
    shuffled = {i: kkt.assemble_stage(ocp, grid, it, int(i)) for i in order}
    for i in range(grid.N):
        a, b = ordered[i], shuffled[i]
        for name in ("Q_xx", "Q_xu", "Q_uu", "A", "B", "f_vec", "h_x", "h_u",
                     "l_x_bar", "l_u_bar", "x_bar"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), (i, name)
        assert a.h_bar == b.h_bar


def test_batch_assembly_matches_pointwise_stages():
    ocp = problems.three_subsystem()
    grid = transcription.build_grid(ocp, (3, 2, 2), (1.0, 2.0))
    rng = np.random.default_rng(13)
    it = ip.initialize_iterate(ocp, grid)
    it.xs = rng.standard_normal(it.xs.shape)
    it.us = rng.standard_normal(it.us.shape)
    it.lams = rng.standard_normal(it.lams.shape)
    data = kkt.assemble(ocp, grid, it, hessian_mode="exact")
    for i in range(grid.N):
        st = kkt.assemble_stage(ocp, grid, it, i, hessian_mode="exact")
        assert np.allclose(data.Qxx[i], st.Q_xx, atol=1e-13)
        assert np.allclose(data.Qxu[i], st.Q_xu, atol=1e-13)
        assert np.allclose(data.A[i], st.A, atol=1e-13)
        assert np.allclose(data.B[i], st.B, atol=1e-13)
        assert np.allclose(data.lx[i], st.l_x_bar, atol=1e-13)
        assert np.allclose(data.xbar[i], st.x_bar, atol=1e-13)
        assert np.isclose(data.hbar[i], st.h_bar, atol=1e-13)


def test_eval_residual_rejects_nonpositive_slack():
    ocp, grid, it = _scalar_iterate(with_bound=True)
    it.zs[0][0, 0] = -1.0
    with pytest.raises(ValueError, match="strictly positive"):
        kkt.eval_residual(ocp, grid, it)
