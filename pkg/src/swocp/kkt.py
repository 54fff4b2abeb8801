"""First-order optimality residuals and the condensed stage-wise linear system.

The interior-point treatment folds the path-constraint slacks and duals into
the stage Hessians, and the dwell-time slacks and duals into per-phase scalar
terms on the switching-time directions, leaving a stage-structured system in
the state, control, switching-time and costate directions only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .model import SwitchedOCP
from .transcription import TimeGrid

Array = np.ndarray

HESSIAN_MODES = ("exact", "gauss_newton")


@dataclass
class Iterate:
    """All primal and dual variables of the interior-point iteration.

    ``zs``/``nus`` hold the path-constraint slacks and duals per phase in
    (N_k, ng_k) blocks; ``ws``/``upss`` are the dwell-time slack/dual pairs,
    one per phase when the problem has switches and empty otherwise. ``x_pre``,
    ``lam_pre`` and ``zetas`` are keyed by the 1-based switch index.
    """

    xs: Array
    us: Array
    ts: Array
    lams: Array
    zs: list[Array]
    nus: list[Array]
    ws: Array
    upss: Array
    x_pre: dict[int, Array] = field(default_factory=dict)
    lam_pre: dict[int, Array] = field(default_factory=dict)
    zetas: dict[int, Array] = field(default_factory=dict)
    eps: float = 1e-1

    def copy(self) -> "Iterate":
        return Iterate(
            xs=self.xs.copy(), us=self.us.copy(), ts=self.ts.copy(),
            lams=self.lams.copy(),
            zs=[z.copy() for z in self.zs], nus=[n.copy() for n in self.nus],
            ws=self.ws.copy(), upss=self.upss.copy(),
            x_pre={k: v.copy() for k, v in self.x_pre.items()},
            lam_pre={k: v.copy() for k, v in self.lam_pre.items()},
            zetas={k: v.copy() for k, v in self.zetas.items()},
            eps=self.eps,
        )

    def check_positive(self) -> None:
        for k, (z, nu) in enumerate(zip(self.zs, self.nus)):
            if z.size and (np.any(z <= 0) or np.any(nu <= 0)):
                raise ValueError(f"phase {k}: slacks and duals must stay strictly positive")
        if self.ws.size and (np.any(self.ws <= 0) or np.any(self.upss <= 0)):
            raise ValueError("dwell-time slacks and duals must stay strictly positive")
        if self.eps <= 0:
            raise ValueError("barrier parameter must stay positive")


# ---------------------------------------------------------------------------
# batched evaluation of the user model along the iterate
# ---------------------------------------------------------------------------

def _batch(ph, key: str, X: Array, U: Array, shape: tuple, lam: Optional[Array] = None) -> Array:
    fn = ph.batch.get(key)
    if fn is not None:
        out = fn(X, U) if lam is None else fn(X, U, lam)
        return np.asarray(out, dtype=float).reshape(shape)
    base = getattr(ph, key)
    out = np.empty(shape)
    for j in range(X.shape[0]):
        out[j] = base(X[j], U[j]) if lam is None else base(X[j], U[j], lam[j])
    return out


@dataclass
class PhaseEval:
    f: Array
    fx: Array
    fu: Array
    l: Array
    lx: Array
    lu: Array
    lxx: Optional[Array] = None
    lxu: Optional[Array] = None
    luu: Optional[Array] = None
    g: Optional[Array] = None
    gx: Optional[Array] = None
    gu: Optional[Array] = None
    fh_xx: Optional[Array] = None
    fh_xu: Optional[Array] = None
    fh_uu: Optional[Array] = None


@dataclass
class EventEval:
    switch: int
    x_post: Array            # jump-map value at the pre-switch state
    A_pre: Array             # jump-map Jacobian
    lj: float = 0.0
    lj_x: Optional[Array] = None
    lj_xx: Optional[Array] = None
    e: Optional[Array] = None
    C: Optional[Array] = None
    D: Optional[Array] = None
    E: Optional[Array] = None
    cond_stage: int = -1


@dataclass
class EvalData:
    phases: list[PhaseEval]
    events: dict[int, EventEval]
    dt: Array
    lam_next: Array          # costate paired with each stage's outgoing equation
    terminal_grad: Array
    terminal_hess: Array


def _condition_terms(ph, ev, x: Array, u: Array, dtau: float, Nk: int):
    """Two-step forward prediction of the switch-time state and its derivatives."""
    nx = x.shape[0]
    I = np.eye(nx)
    f1 = np.asarray(ph.f(x, u), dtype=float)
    A1 = I + np.asarray(ph.f_x(x, u), dtype=float) * dtau
    B1 = np.asarray(ph.f_u(x, u), dtype=float) * dtau
    x1 = x + f1 * dtau
    f2 = np.asarray(ph.f(x1, u), dtype=float)
    A2 = I + np.asarray(ph.f_x(x1, u), dtype=float) * dtau
    B2 = np.asarray(ph.f_u(x1, u), dtype=float) * dtau
    x2 = x1 + f2 * dtau
    e = np.asarray(ev.switching_condition(x2), dtype=float)
    Je = np.asarray(ev.switching_condition_jac(x2), dtype=float)
    C = Je @ (A2 @ A1)
    D = Je @ (A2 @ B1 + B2)
    E = (Je @ (A2 @ f1 + f2)) / Nk
    return e, C, D, E


def evaluate(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate,
             hessian_mode: str = "gauss_newton", need_hessians: bool = True) -> EvalData:
    """Evaluate the model and its derivatives along the whole iterate."""
    if hessian_mode not in HESSIAN_MODES:
        raise ValueError(f"hessian_mode must be one of {HESSIAN_MODES}")
    nx, nu = ocp.nx, ocp.nu
    dt = grid.step_sizes(it.ts)
    lam_next = np.empty((grid.N, nx))
    phases = []
    for k, stages in enumerate(grid.stage_sets):
        ph = ocp.phases[k]
        lo, hi = stages[0], stages[-1] + 1
        X = it.xs[lo:hi]
        U = it.us[lo:hi]
        lam_next[lo:hi] = it.lams[lo + 1:hi + 1]
        if (k + 1) in grid.event_switches:
            lam_next[hi - 1] = it.lam_pre[k + 1]
        M = hi - lo
        pe = PhaseEval(
            f=_batch(ph, "f", X, U, (M, nx)),
            fx=_batch(ph, "f_x", X, U, (M, nx, nx)),
            fu=_batch(ph, "f_u", X, U, (M, nx, nu)),
            l=_batch(ph, "l", X, U, (M,)),
            lx=_batch(ph, "l_x", X, U, (M, nx)),
            lu=_batch(ph, "l_u", X, U, (M, nu)),
        )
        if need_hessians:
            pe.lxx = _batch(ph, "l_xx", X, U, (M, nx, nx))
            pe.lxu = _batch(ph, "l_xu", X, U, (M, nx, nu))
            pe.luu = _batch(ph, "l_uu", X, U, (M, nu, nu))
            if hessian_mode == "exact" and not np.all(pe.fx == 0):
                if not ph.has_exact_dynamics_hessians:
                    raise ValueError(
                        f"phase {k}: exact Hessian mode needs the contracted dynamics "
                        "second derivatives (f_hess_xx/xu/uu)")
                lam_blk = lam_next[lo:hi]
                pe.fh_xx = _batch(ph, "f_hess_xx", X, U, (M, nx, nx), lam_blk)
                pe.fh_xu = _batch(ph, "f_hess_xu", X, U, (M, nx, nu), lam_blk)
                pe.fh_uu = _batch(ph, "f_hess_uu", X, U, (M, nu, nu), lam_blk)
        if ph.ng > 0:
            pe.g = _batch(ph, "g", X, U, (M, ph.ng))
            pe.gx = _batch(ph, "g_x", X, U, (M, ph.ng, nx))
            pe.gu = _batch(ph, "g_u", X, U, (M, ph.ng, nu))
        phases.append(pe)

    events: dict[int, EventEval] = {}
    for s in grid.event_switches:
        k = s - 1
        ph = ocp.phases[k]
        ev = ph.exit_event
        xp = it.x_pre[s]
        ee = EventEval(switch=s, x_post=ev.apply_jump(xp), A_pre=ev.jump_jacobian(xp))
        if ev.jump_cost is not None:
            ee.lj = float(ev.jump_cost(xp))
            ee.lj_x = np.asarray(ev.jump_cost_grad(xp), dtype=float)
            if need_hessians and ev.jump_cost_hess is not None:
                ee.lj_xx = np.asarray(ev.jump_cost_hess(xp), dtype=float)
        if ev.has_condition:
            i = grid.condition_stages[s]
            ee.cond_stage = i
            ee.e, ee.C, ee.D, ee.E = _condition_terms(
                ph, ev, it.xs[i], it.us[i], dt[k], grid.counts[k])
        events[s] = ee
    return EvalData(
        phases=phases, events=events, dt=dt, lam_next=lam_next,
        terminal_grad=np.asarray(ocp.terminal_cost_grad(it.xs[grid.N]), dtype=float),
        terminal_hess=np.asarray(ocp.terminal_cost_hess(it.xs[grid.N]), dtype=float),
    )


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualNorms:
    perturbed_l2: float
    perturbed_max: float
    unperturbed_l2: float
    unperturbed_max: float


@dataclass
class KKTResidual:
    """All first-order residual blocks at one iterate.

    The complementarity blocks carry the barrier shift; the unperturbed norms
    re-evaluate them at zero barrier so that a vanishing max-norm certifies an
    exact solution of the original problem.
    """

    rx: Array                      # stationarity in x, stages 0..N
    ru: Array                      # stationarity in u, stages 0..N-1
    sto: Array                     # stationarity in the switching times, (K,)
    x0_res: Array                  # initial-state equation
    xbar: Array                    # state equations, (N, nx)
    rg: list[Array]                # path constraints per phase
    r_dwell: Array                 # dwell-time equations, per phase
    rz: list[Array]                # path complementarity (barrier-shifted)
    rw: Array                      # dwell complementarity (barrier-shifted)
    rx_pre: dict[int, Array] = field(default_factory=dict)
    xbar_pre: dict[int, Array] = field(default_factory=dict)
    e_res: dict[int, Array] = field(default_factory=dict)
    eps: float = 0.0
    norms: ResidualNorms = None

    def _stack(self, perturbed: bool) -> Array:
        parts = [self.rx.ravel(), self.ru.ravel(), self.sto, self.x0_res,
                 self.xbar.ravel(), self.r_dwell]
        parts += [b.ravel() for b in self.rg]
        for s in sorted(self.rx_pre):
            parts.append(self.rx_pre[s])
            parts.append(self.xbar_pre[s])
        for s in sorted(self.e_res):
            parts.append(self.e_res[s])
        shift = 0.0 if perturbed else self.eps
        parts += [b.ravel() + shift for b in self.rz]
        parts.append(self.rw + shift)
        return np.concatenate(parts) if parts else np.zeros(0)

    def compute_norms(self) -> None:
        p = self._stack(perturbed=True)
        u = self._stack(perturbed=False)
        self.norms = ResidualNorms(
            perturbed_l2=float(np.linalg.norm(p)),
            perturbed_max=float(np.max(np.abs(p), initial=0.0)),
            unperturbed_l2=float(np.linalg.norm(u)),
            unperturbed_max=float(np.max(np.abs(u), initial=0.0)),
        )


def _dwell_residuals(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate):
    if grid.K == 0:
        return np.zeros(0), np.zeros(0)
    bt = grid.boundary_times(it.ts)
    dwell = np.array([ph.min_dwell for ph in ocp.phases])
    r_dwell = bt[:-1] + dwell - bt[1:] + it.ws
    rw = it.ws * it.upss - it.eps
    return r_dwell, rw


def residual_from_eval(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate, ev: EvalData) -> KKTResidual:
    nx = ocp.nx
    N, K = grid.N, grid.K
    rx = np.empty((N + 1, nx))
    ru = np.empty((N, ocp.nu))
    xbar = np.empty((N, nx))
    rg: list[Array] = []
    rz: list[Array] = []
    hbar_sum = np.zeros(K + 1)

    for k, stages in enumerate(grid.stage_sets):
        pe = ev.phases[k]
        lo, hi = stages[0], stages[-1] + 1
        lam_n = ev.lam_next[lo:hi]
        dtau = ev.dt[k]
        Hx = pe.lx + np.einsum("mij,mi->mj", pe.fx, lam_n)
        Hu = pe.lu + np.einsum("mij,mi->mj", pe.fu, lam_n)
        rx[lo:hi] = Hx * dtau + lam_n - it.lams[lo:hi]
        ru[lo:hi] = Hu * dtau
        if pe.g is not None:
            rx[lo:hi] += np.einsum("mij,mi->mj", pe.gx, it.nus[k])
            ru[lo:hi] += np.einsum("mij,mi->mj", pe.gu, it.nus[k])
            rg.append(pe.g + it.zs[k])
            rz.append(it.zs[k] * it.nus[k] - it.eps)
        else:
            rg.append(np.zeros((hi - lo, 0)))
            rz.append(np.zeros((hi - lo, 0)))
        hbar_sum[k] = float(np.sum(pe.l + np.einsum("mi,mi->m", lam_n, pe.f))) / grid.counts[k]
        x_next = it.xs[lo + 1:hi + 1].copy()
        if (k + 1) in grid.event_switches:
            x_next[-1] = it.x_pre[k + 1]
        xbar[lo:hi] = it.xs[lo:hi] + pe.f * dtau - x_next

    rx[N] = ev.terminal_grad - it.lams[N]
    x0_res = it.xs[0] - (np.asarray(ocp.x0, dtype=float) if ocp.x0 is not None else it.xs[0])

    res = KKTResidual(
        rx=rx, ru=ru, sto=np.zeros(K), x0_res=x0_res, xbar=xbar,
        rg=rg, rz=rz, eps=it.eps,
        r_dwell=np.zeros(0), rw=np.zeros(0),
    )
    res.r_dwell, res.rw = _dwell_residuals(ocp, grid, it)

    for s, ee in ev.events.items():
        post = grid.starts[s]
        res.rx_pre[s] = ((ee.lj_x if ee.lj_x is not None else 0.0)
                         + ee.A_pre.T @ it.lams[post] - it.lam_pre[s])
        res.xbar_pre[s] = ee.x_post - it.xs[post]
        if ee.cond_stage >= 0:
            zeta = it.zetas[s]
            res.e_res[s] = ee.e
            rx[ee.cond_stage] += ee.C.T @ zeta
            ru[ee.cond_stage] += ee.D.T @ zeta

    if K:
        for s in range(1, K + 1):
            res.sto[s - 1] = (hbar_sum[s - 1] - hbar_sum[s]
                              - it.upss[s - 1] + it.upss[s])
        for s, ee in ev.events.items():
            if ee.cond_stage >= 0:
                # the predicted switch state depends on the step size of the
                # phase before switch s, hence on t_s (+) and t_{s-1} (-)
                coupling = float(ee.E @ it.zetas[s])
                res.sto[s - 1] += coupling
                if s >= 2:
                    res.sto[s - 2] -= coupling
    res.compute_norms()
    return res


def eval_residual(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate) -> KKTResidual:
    """Evaluate the barrier-perturbed optimality residuals at an iterate."""
    it.check_positive()
    ev = evaluate(ocp, grid, it, need_hessians=False)
    return residual_from_eval(ocp, grid, it, ev)


# ---------------------------------------------------------------------------
# condensed stage data
# ---------------------------------------------------------------------------

@dataclass
class CondKKT:
    switch: int
    stage: int
    C: Array
    D: Array
    E: Array
    e_bar: Array
    zeta: Array


@dataclass
class JumpKKT:
    switch: int
    A_pre: Array
    Q_xx_pre: Array
    x_bar_pre: Array
    l_x_pre: Array


@dataclass
class StageKKT:
    """Condensed data of one stage of the linearized system."""

    Q_xx: Array
    Q_xu: Array
    Q_uu: Array
    A: Array
    B: Array
    f_vec: Array
    h_x: Array
    h_u: Array
    h_bar: float
    l_x_bar: Array
    l_u_bar: Array
    x_bar: Array
    phase: int
    cond: Optional[CondKKT] = None


@dataclass
class KKTData:
    """Stage-stacked condensed system plus the switch-level couplings.

    The dwell scalars ``Q_tt``/``q_t_bar`` follow the interior-point
    condensation of the dwell slack/dual pairs; ``q_t_hat`` additionally folds
    the current dual value into the linear coefficient so that the assembled
    switching-time rows vanish exactly at a solution.
    """

    nx: int
    nu: int
    N: int
    K: int
    starts: Array
    counts: Array
    Qxx: Array
    Qxu: Array
    Quu: Array
    A: Array
    B: Array
    f: Array
    hx: Array
    hu: Array
    hbar: Array
    lx: Array
    lu: Array
    xbar: Array
    x0_res: Array
    Q_tt: Array
    q_t_bar: Array
    q_t_hat: Array
    jumps: dict[int, JumpKKT] = field(default_factory=dict)
    conds: dict[int, CondKKT] = field(default_factory=dict)
    # raw data needed to recover the eliminated bound directions
    g_val: list[Array] = field(default_factory=list)
    g_x: list[Array] = field(default_factory=list)
    g_u: list[Array] = field(default_factory=list)
    r_dwell: Array = None
    rw: Array = None

    @property
    def has_events(self) -> bool:
        return bool(self.jumps) or bool(self.conds)

    @cached_property
    def stages(self) -> list[StageKKT]:
        cond_by_stage = {c.stage: c for c in self.conds.values()}
        out = []
        for i in range(self.N):
            k = int(np.searchsorted(self.starts, i, side="right") - 1)
            out.append(StageKKT(
                Q_xx=self.Qxx[i], Q_xu=self.Qxu[i], Q_uu=self.Quu[i],
                A=self.A[i], B=self.B[i], f_vec=self.f[i],
                h_x=self.hx[i], h_u=self.hu[i], h_bar=float(self.hbar[i]),
                l_x_bar=self.lx[i], l_u_bar=self.lu[i], x_bar=self.xbar[i],
                phase=k, cond=cond_by_stage.get(i),
            ))
        return out

    @property
    def Q_xx_N(self) -> Array:
        return self.Qxx[self.N]

    @property
    def l_x_N(self) -> Array:
        return self.lx[self.N]


def assemble_from_eval(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate,
                       ev: EvalData, res: KKTResidual,
                       hessian_mode: str = "gauss_newton") -> KKTData:
    nx, nu = ocp.nx, ocp.nu
    N, K = grid.N, grid.K
    Qxx = np.zeros((N + 1, nx, nx))
    Qxu = np.zeros((N, nx, nu))
    Quu = np.zeros((N, nu, nu))
    A = np.zeros((N, nx, nx))
    B = np.zeros((N, nx, nu))
    fv = np.zeros((N, nx))
    hx = np.zeros((N, nx))
    hu = np.zeros((N, nu))
    hbar = np.zeros(N)
    lx = np.zeros((N + 1, nx))
    lu = np.zeros((N, nu))
    g_val, g_x, g_u = [], [], []
    I = np.eye(nx)

    for k, stages in enumerate(grid.stage_sets):
        pe = ev.phases[k]
        lo, hi = stages[0], stages[-1] + 1
        dtau = ev.dt[k]
        Nk = grid.counts[k]
        lam_n = ev.lam_next[lo:hi]
        A[lo:hi] = I[None, :, :] + pe.fx * dtau
        B[lo:hi] = pe.fu * dtau
        fv[lo:hi] = pe.f / Nk
        Hx = pe.lx + np.einsum("mij,mi->mj", pe.fx, lam_n)
        Hu = pe.lu + np.einsum("mij,mi->mj", pe.fu, lam_n)
        hx[lo:hi] = Hx / Nk
        hu[lo:hi] = Hu / Nk
        hbar[lo:hi] = (pe.l + np.einsum("mi,mi->m", lam_n, pe.f)) / Nk
        hxx, hxu, huu = pe.lxx, pe.lxu, pe.luu
        if hessian_mode == "exact" and pe.fh_xx is not None:
            hxx = hxx + pe.fh_xx
            hxu = hxu + pe.fh_xu
            huu = huu + pe.fh_uu
        Qxx[lo:hi] = hxx * dtau
        Qxu[lo:hi] = hxu * dtau
        Quu[lo:hi] = huu * dtau
        lx[lo:hi] = res.rx[lo:hi]
        lu[lo:hi] = res.ru[lo:hi]
        if pe.g is not None:
            scale = it.nus[k] / it.zs[k]                      # (M, ng)
            Qxx[lo:hi] += np.einsum("mri,mr,mrj->mij", pe.gx, scale, pe.gx)
            Qxu[lo:hi] += np.einsum("mri,mr,mrj->mij", pe.gx, scale, pe.gu)
            Quu[lo:hi] += np.einsum("mri,mr,mrj->mij", pe.gu, scale, pe.gu)
            rgk = res.rg[k]
            rzk = res.rz[k]
            corr = (it.nus[k] * rgk - rzk) / it.zs[k]         # (M, ng)
            lx[lo:hi] += np.einsum("mri,mr->mi", pe.gx, corr)
            lu[lo:hi] += np.einsum("mri,mr->mi", pe.gu, corr)
            g_val.append(pe.g)
            g_x.append(pe.gx)
            g_u.append(pe.gu)
        else:
            g_val.append(np.zeros((hi - lo, 0)))
            g_x.append(np.zeros((hi - lo, 0, nx)))
            g_u.append(np.zeros((hi - lo, 0, nu)))
    Qxx[N] = ev.terminal_hess
    lx[N] = res.rx[N]

    if K:
        Q_tt = it.upss / it.ws
        q_t_bar = (it.upss * res.r_dwell - res.rw) / it.ws
        q_t_hat = q_t_bar + it.upss
    else:
        Q_tt = q_t_bar = q_t_hat = np.zeros(0)

    data = KKTData(
        nx=nx, nu=nu, N=N, K=K,
        starts=np.asarray(grid.starts, dtype=np.int64),
        counts=np.asarray(grid.counts, dtype=np.int64),
        Qxx=Qxx, Qxu=Qxu, Quu=Quu, A=A, B=B, f=fv, hx=hx, hu=hu, hbar=hbar,
        lx=lx, lu=lu, xbar=res.xbar, x0_res=res.x0_res,
        Q_tt=Q_tt, q_t_bar=q_t_bar, q_t_hat=q_t_hat,
        g_val=g_val, g_x=g_x, g_u=g_u,
        r_dwell=res.r_dwell, rw=res.rw,
    )

    for s, ee in ev.events.items():
        Qpre = ee.lj_xx if ee.lj_xx is not None else np.zeros((nx, nx))
        data.jumps[s] = JumpKKT(
            switch=s, A_pre=ee.A_pre, Q_xx_pre=Qpre,
            x_bar_pre=res.xbar_pre[s], l_x_pre=res.rx_pre[s],
        )
        if ee.cond_stage >= 0:
            data.conds[s] = CondKKT(
                switch=s, stage=ee.cond_stage, C=ee.C, D=ee.D, E=ee.E,
                e_bar=res.e_res[s], zeta=it.zetas[s],
            )
    return data


def assemble(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate,
             hessian_mode: str = "gauss_newton") -> KKTData:
    """Assemble the condensed stage-wise linear system at an iterate."""
    it.check_positive()
    ev = evaluate(ocp, grid, it, hessian_mode=hessian_mode, need_hessians=True)
    res = residual_from_eval(ocp, grid, it, ev)
    return assemble_from_eval(ocp, grid, it, ev, res, hessian_mode=hessian_mode)


def assemble_stage(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate, i: int,
                   hessian_mode: str = "gauss_newton") -> StageKKT:
    """Assemble a single stage in isolation (pointwise evaluation path)."""
    k = grid.phase_of_stage(i)
    ph = ocp.phases[k]
    stages = grid.stage_sets[k]
    dtau = grid.step_sizes(it.ts)[k]
    Nk = grid.counts[k]
    x, u = it.xs[i], it.us[i]
    if i == stages[-1] and (k + 1) in grid.event_switches:
        lam_n = it.lam_pre[k + 1]
        x_next = it.x_pre[k + 1]
    else:
        lam_n = it.lams[i + 1]
        x_next = it.xs[i + 1]
    fxv = np.asarray(ph.f_x(x, u), dtype=float)
    fuv = np.asarray(ph.f_u(x, u), dtype=float)
    fval = np.asarray(ph.f(x, u), dtype=float)
    Hx = np.asarray(ph.l_x(x, u), dtype=float) + fxv.T @ lam_n
    Hu = np.asarray(ph.l_u(x, u), dtype=float) + fuv.T @ lam_n
    hxx = np.asarray(ph.l_xx(x, u), dtype=float)
    hxu = np.asarray(ph.l_xu(x, u), dtype=float)
    huu = np.asarray(ph.l_uu(x, u), dtype=float)
    if hessian_mode == "exact" and ph.has_exact_dynamics_hessians:
        hxx = hxx + np.asarray(ph.f_hess_xx(x, u, lam_n), dtype=float)
        hxu = hxu + np.asarray(ph.f_hess_xu(x, u, lam_n), dtype=float)
        huu = huu + np.asarray(ph.f_hess_uu(x, u, lam_n), dtype=float)
    Q_xx = hxx * dtau
    Q_xu = hxu * dtau
    Q_uu = huu * dtau
    rx = Hx * dtau + lam_n - it.lams[i]
    ru = Hu * dtau
    lxb = rx.copy()
    lub = ru.copy()
    if ph.ng > 0:
        j = i - stages[0]
        z, nu_d = it.zs[k][j], it.nus[k][j]
        gv = np.asarray(ph.g(x, u), dtype=float)
        gxv = np.asarray(ph.g_x(x, u), dtype=float)
        guv = np.asarray(ph.g_u(x, u), dtype=float)
        scale = nu_d / z
        Q_xx = Q_xx + gxv.T @ (scale[:, None] * gxv)
        Q_xu = Q_xu + gxv.T @ (scale[:, None] * guv)
        Q_uu = Q_uu + guv.T @ (scale[:, None] * guv)
        rg = gv + z
        rz = z * nu_d - it.eps
        lxb += gxv.T @ nu_d + gxv.T @ ((nu_d * rg - rz) / z)
        lub += guv.T @ nu_d + guv.T @ ((nu_d * rg - rz) / z)
    return StageKKT(
        Q_xx=Q_xx, Q_xu=Q_xu, Q_uu=Q_uu,
        A=np.eye(ocp.nx) + fxv * dtau, B=fuv * dtau, f_vec=fval / Nk,
        h_x=Hx / Nk, h_u=Hu / Nk,
        h_bar=float((np.asarray(ph.l(x, u)) + lam_n @ fval) / Nk),
        l_x_bar=lxb, l_u_bar=lub,
        x_bar=x + fval * dtau - x_next, phase=k,
    )
