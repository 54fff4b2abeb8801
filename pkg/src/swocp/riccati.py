"""Backward/forward recursion solving the condensed stage-wise system in O(N).

The backward pass eliminates controls stage by stage, carries the coupling of
each phase to its two adjacent switching-time directions in a handful of
vectors and scalars, and eliminates each switching time at the first stage of
the phase it terminates. The forward pass then recovers every direction in a
single sweep. Pre-switch points (state jumps) and transformed switching
conditions slot in as special stages without breaking the linear-time
structure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .kkt import KKTData

Array = np.ndarray


class RiccatiError(RuntimeError):
    """Structured backward-pass failure.

    ``kind`` is one of ``sosc_violated`` (a control-block factorization
    failed), ``sigma_nonpositive`` (a switching-time curvature was not
    positive with modifications disabled) or ``licq_failure`` (a switching
    condition with rank-deficient control Jacobian).
    """

    def __init__(self, kind: str, stage: Optional[int] = None,
                 switch: Optional[int] = None):
        self.kind = kind
        self.stage = stage
        self.switch = switch
        where = f"stage {stage}" if stage is not None else f"switch {switch}"
        super().__init__(f"{kind} at {where}")


@dataclass
class RiccatiOptions:
    """Options of the backward pass.

    ``modify`` enables the reduced-Hessian modification at phase transitions
    (keep the pre-elimination value matrix and shift non-positive switching
    curvatures); ``dt_max`` bounds the affine switching-time step implied by
    the shifted curvature. ``use_kernel`` selects the compiled fast path on
    event-free grids.
    """

    modify: bool = False
    dt_max: float = 0.5
    use_kernel: bool = True


@dataclass
class CondGains:
    M: Array
    m: Array
    L: Array
    Nvec: Array


@dataclass
class JumpFactor:
    P: Array
    s: Array
    Phi: Array
    rho: float
    iota: float


@dataclass
class Transition:
    boundary: int                    # switch index at which the frame changes
    eliminated_switch: Optional[int]  # switch whose direction was eliminated
    P: Array
    s: Array
    Phi: Array
    rho: float
    iota: float


@dataclass
class RiccatiStage:
    """Backward-recursion quantities of one stage (view into the stacked data)."""

    P: Array
    s: Array
    Psi: Array
    Phi: Array
    xi: float
    chi: float
    rho: float
    eta: float
    iota: float
    K: Array
    k: Array
    T: Array
    W: Array
    cond_gains: Optional[CondGains] = None


@dataclass
class RiccatiReport:
    g_chol_min: Array
    sigma_raw: Array
    sigma_used: Array
    sigma_modified: Array
    modify_enabled: bool

    @property
    def any_modification(self) -> bool:
        return bool(np.any(self.sigma_modified))


@dataclass
class RiccatiFactorization:
    """All stacked backward-pass outputs plus per-switch transition data."""

    P: Array
    s: Array
    Psi: Array
    Phi: Array
    xi: Array
    chi: Array
    rho: Array
    eta: Array
    iota: Array
    Kg: Array
    kg: Array
    Tg: Array
    Wg: Array
    sigma_raw: Array
    sigma_used: Array
    sigma_modified: Array
    transitions: dict[int, Transition] = field(default_factory=dict)
    jumps: dict[int, JumpFactor] = field(default_factory=dict)
    cond_gains: dict[int, CondGains] = field(default_factory=dict)
    report: RiccatiReport = None

    def stage(self, i: int) -> RiccatiStage:
        return RiccatiStage(
            P=self.P[i], s=self.s[i], Psi=self.Psi[i], Phi=self.Phi[i],
            xi=float(self.xi[i]), chi=float(self.chi[i]), rho=float(self.rho[i]),
            eta=float(self.eta[i]), iota=float(self.iota[i]),
            K=self.Kg[i], k=self.kg[i], T=self.Tg[i], W=self.Wg[i],
        )


@dataclass
class NewtonStep:
    """Newton directions of all variables; bound directions are filled in by
    the interior-point recovery."""

    dx: Array
    du: Array
    dts: Array
    dlam: Array
    dx_pre: dict[int, Array] = field(default_factory=dict)
    dlam_pre: dict[int, Array] = field(default_factory=dict)
    dzeta: dict[int, Array] = field(default_factory=dict)
    dz: list[Array] = field(default_factory=list)
    dnu: list[Array] = field(default_factory=list)
    dw: Array = None
    dups: Array = None

    def max_abs(self) -> float:
        vals = [np.max(np.abs(a), initial=0.0) for a in
                (self.dx, self.du, self.dts, self.dlam)]
        for d in (self.dx_pre, self.dlam_pre, self.dzeta):
            vals += [np.max(np.abs(v), initial=0.0) for v in d.values()]
        return max(vals)


def _sigma_guard(sig: float, eta_c: float, iota_c: float, switch: int,
                 opts: RiccatiOptions):
    if opts.modify:
        sbar = abs(eta_c - iota_c) / opts.dt_max
        if sig <= sbar:
            return abs(sig) + sbar, True
        return sig, False
    if sig <= 0.0:
        raise RiccatiError("sigma_nonpositive", switch=switch)
    return sig, False


def backward(data: KKTData, opts: Optional[RiccatiOptions] = None) -> RiccatiFactorization:
    """Run the backward recursion on assembled stage data.

    Raises ``RiccatiError`` when a control block is not positive definite,
    when a switching-time curvature is non-positive with modifications
    disabled, or when a switching-condition Jacobian loses row rank.
    """
    opts = opts or RiccatiOptions()
    if opts.use_kernel and not data.has_events:
        return _backward_fast(data, opts)
    return _backward_general(data, opts)


def _backward_fast(data: KKTData, opts: RiccatiOptions) -> RiccatiFactorization:
    out = _kernels.backward_kernel(
        data.Qxx, data.Qxu, data.Quu, data.A, data.B, data.f, data.hx, data.hu,
        data.hbar, data.lx, data.lu, data.xbar,
        data.Q_tt if data.K else np.zeros(1),
        data.q_t_hat if data.K else np.zeros(1),
        data.starts, data.counts, opts.modify, opts.dt_max)
    (P, sv, Psi, Phi, xi, chi, rho, eta, iota, Kg, kg, Tg, Wg, gmin,
     sig_raw, sig_use, sig_mod, Pt, st, Phit, rhot, iotat, status, fail_idx) = out
    if status == 1:
        raise RiccatiError("sosc_violated", stage=int(fail_idx))
    if status == 2:
        raise RiccatiError("sigma_nonpositive", switch=int(fail_idx))
    K = data.K
    fact = RiccatiFactorization(
        P=P, s=sv, Psi=Psi, Phi=Phi, xi=xi, chi=chi, rho=rho, eta=eta, iota=iota,
        Kg=Kg, kg=kg, Tg=Tg, Wg=Wg,
        sigma_raw=sig_raw[:K], sigma_used=sig_use[:K], sigma_modified=sig_mod[:K],
    )
    for b in range(1, K + 1):
        fact.transitions[b] = Transition(
            boundary=b, eliminated_switch=b + 1 if b + 1 <= K else None,
            P=Pt[b], s=st[b], Phi=Phit[b], rho=float(rhot[b]), iota=float(iotat[b]))
    fact.report = RiccatiReport(
        g_chol_min=gmin, sigma_raw=sig_raw[:K].copy(), sigma_used=sig_use[:K].copy(),
        sigma_modified=sig_mod[:K].copy(), modify_enabled=opts.modify)
    return fact


def _backward_general(data: KKTData, opts: RiccatiOptions) -> RiccatiFactorization:
    nx, nu, N, K = data.nx, data.nu, data.N, data.K
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
    sig_raw = np.zeros(K)
    sig_use = np.zeros(K)
    sig_mod = np.zeros(K, dtype=bool)
    fact = RiccatiFactorization(
        P=P, s=sv, Psi=Psi, Phi=Phi, xi=xi, chi=chi, rho=rho, eta=eta, iota=iota,
        Kg=Kg, kg=kg, Tg=Tg, Wg=Wg,
        sigma_raw=sig_raw, sigma_used=sig_use, sigma_modified=sig_mod,
    )
    cond_by_stage = {c.stage: c for c in data.conds.values()}

    Pc = data.Qxx[N].copy()
    sc = -data.lx[N].copy()
    Psic = np.zeros(nx)
    Phic = np.zeros(nx)
    xic = chic = rhoc = etac = iotac = 0.0
    P[N] = Pc
    sv[N] = sc

    for p in range(K, -1, -1):
        if K >= 1:
            xic += data.Q_tt[p]
            etac -= data.q_t_hat[p]
        lo = int(data.starts[p])
        hi = lo + int(data.counts[p])
        for i in range(hi - 1, lo - 1, -1):
            A, B, f = data.A[i], data.B[i], data.f[i]
            PA, PB, Pf = Pc @ A, Pc @ B, Pc @ f
            F = data.Qxx[i] + A.T @ PA
            Hm = data.Qxu[i] + A.T @ PB
            G = data.Quu[i] + B.T @ PB
            try:
                L = np.linalg.cholesky(G)
            except np.linalg.LinAlgError:
                raise RiccatiError("sosc_violated", stage=i) from None
            gmin[i] = float(np.min(np.diag(L)))
            psix = data.hx[i] + A.T @ (Pf + Psic)
            psiu = data.hu[i] + B.T @ (Pf + Psic)
            phix = A.T @ Phic
            phiu = B.T @ Phic
            Pxs = Pc @ data.xbar[i] - sc
            kappa = B.T @ Pxs + data.lu[i]
            cond = cond_by_stage.get(i)
            if cond is None:
                rhs = np.column_stack([Hm.T, psiu, phiu, kappa])
                sol = scipy.linalg.cho_solve((L, True), rhs)
                Kg[i] = -sol[:, :nx]
                Tg[i] = -sol[:, nx]
                Wg[i] = -sol[:, nx + 1]
                kg[i] = -sol[:, nx + 2]
                Pn = F + Kg[i].T @ Hm.T
                sc_new = -(data.lx[i] + A.T @ Pxs + Hm @ kg[i])
                Psin = psix + Kg[i].T @ psiu
                Phin = phix + Kg[i].T @ phiu
                xin = xic + f @ (Pf + 2.0 * Psic) + psiu @ Tg[i]
                etan = etac + data.hbar[i] + f @ Pxs + Psic @ data.xbar[i] + psiu @ kg[i]
                chin = chic + Phic @ f + psiu @ Wg[i]
                rhon = rhoc + phiu @ Wg[i]
                iotan = iotac + Phic @ data.xbar[i] + phiu @ kg[i]
            else:
                C, D, E = cond.C, cond.D, cond.E
                ne = C.shape[0]
                if np.linalg.matrix_rank(D) < ne:
                    raise RiccatiError("licq_failure", stage=i)
                bord = np.block([[G, D.T], [D, np.zeros((ne, ne))]])
                rhs = np.column_stack([
                    np.vstack([Hm.T, C]),
                    np.concatenate([psiu, E]),
                    np.concatenate([phiu, np.zeros(ne)]),
                    np.concatenate([kappa, cond.e_bar]),
                ])
                sol = scipy.linalg.solve(bord, rhs, assume_a="sym")
                Kfull, Mfull = -sol[:nu], -sol[nu:]
                Kg[i], Tg[i], Wg[i], kg[i] = (Kfull[:, :nx], Kfull[:, nx],
                                              Kfull[:, nx + 1], Kfull[:, nx + 2])
                Mg, Lg, Ng, mg = (Mfull[:, :nx], Mfull[:, nx],
                                  Mfull[:, nx + 1], Mfull[:, nx + 2])
                fact.cond_gains[cond.switch] = CondGains(M=Mg, m=mg, L=Lg, Nvec=Ng)
                Pn = F + Kg[i].T @ Hm.T + Mg.T @ C
                sc_new = -(data.lx[i] + A.T @ Pxs + Hm @ kg[i] + C.T @ mg)
                Psin = psix + Kg[i].T @ psiu + Mg.T @ E
                Phin = phix + Kg[i].T @ phiu
                xin = xic + f @ (Pf + 2.0 * Psic) + psiu @ Tg[i] + E @ Lg
                etan = (etac + data.hbar[i] + float(E @ cond.zeta) + f @ Pxs
                        + Psic @ data.xbar[i] + psiu @ kg[i] + E @ mg)
                chin = chic + Phic @ f + psiu @ Wg[i] + E @ Ng
                rhon = rhoc + phiu @ Wg[i]
                iotan = iotac + Phic @ data.xbar[i] + phiu @ kg[i]
            Pc = 0.5 * (Pn + Pn.T)
            sc = sc_new
            Psic, Phic = Psin, Phin
            xic, chic, rhoc, etac, iotac = xin, chin, rhon, etan, iotan
            P[i], sv[i], Psi[i], Phi[i] = Pc, sc, Psic, Phic
            xi[i], chi[i], rho[i], eta[i], iota[i] = xic, chic, rhoc, etac, iotac
        if p + 1 <= K:
            sig = xic - 2.0 * chic + rhoc
            sig_raw[p] = sig
            sig_use[p], sig_mod[p] = _sigma_guard(sig, etac, iotac, p + 1, opts)
        if p >= 1:
            inv = 1.0 / sig_use[p] if p + 1 <= K else 0.0
            d = Psic - Phic
            if opts.modify and p + 1 <= K:
                Pt = Pc.copy()
            else:
                Pt = Pc - inv * np.outer(d, d)
            tr = Transition(
                boundary=p, eliminated_switch=p + 1 if p + 1 <= K else None,
                P=Pt, s=sc + inv * (etac - iotac) * d,
                Phi=Psic - inv * (xic - chic) * d,
                rho=float(xic - inv * (xic - chic) ** 2),
                iota=float(etac - inv * (xic - chic) * (etac - iotac)))
            fact.transitions[p] = tr
            Pc, sc, Phic = tr.P.copy(), tr.s.copy(), tr.Phi.copy()
            rhoc, iotac = tr.rho, tr.iota
            Psic = np.zeros(nx)
            xic = chic = etac = 0.0
            if p in data.jumps:
                jp = data.jumps[p]
                Ap = jp.A_pre
                Pj = jp.Q_xx_pre + Ap.T @ (Pc @ Ap)
                jf = JumpFactor(
                    P=0.5 * (Pj + Pj.T),
                    s=Ap.T @ (sc - Pc @ jp.x_bar_pre) - jp.l_x_pre,
                    Phi=Ap.T @ Phic,
                    rho=rhoc,
                    iota=iotac + float(Phic @ jp.x_bar_pre))
                fact.jumps[p] = jf
                Pc, sc, Phic = jf.P.copy(), jf.s.copy(), jf.Phi.copy()
                rhoc, iotac = jf.rho, jf.iota
    fact.report = RiccatiReport(
        g_chol_min=gmin, sigma_raw=sig_raw.copy(), sigma_used=sig_use.copy(),
        sigma_modified=sig_mod.copy(), modify_enabled=opts.modify)
    return fact


def forward(fact: RiccatiFactorization, data: KKTData) -> NewtonStep:
    """Recover all Newton directions from a completed backward pass."""
    if not data.has_events and fact.jumps == {} and fact.cond_gains == {}:
        dx, du, dts, dlam = _kernels.forward_kernel(
            data.A, data.B, data.f, data.xbar, data.x0_res,
            fact.P, fact.s, fact.Psi, fact.Phi, fact.xi, fact.chi, fact.eta,
            fact.iota, fact.Kg, fact.kg, fact.Tg, fact.Wg,
            fact.sigma_used if data.K else np.zeros(1),
            data.starts, data.counts)
        return NewtonStep(dx=dx, du=du, dts=dts, dlam=dlam)
    return _forward_general(fact, data)


def _forward_general(fact: RiccatiFactorization, data: KKTData) -> NewtonStep:
    nx, nu, N, K = data.nx, data.nu, data.N, data.K
    dx = np.zeros((N + 1, nx))
    du = np.zeros((N, nu))
    dlam = np.zeros((N + 1, nx))
    dts = np.zeros(K + 2)
    step = NewtonStep(dx=dx, du=du, dts=dts[1:K + 1], dlam=dlam)
    cond_by_stage = {c.stage: c for c in data.conds.values()}
    dx[0] = -data.x0_res
    for p in range(K + 1):
        lo = int(data.starts[p])
        hi = lo + int(data.counts[p])
        if p + 1 <= K:
            dts[p + 1] = -((fact.Psi[lo] - fact.Phi[lo]) @ dx[lo]
                           - (fact.xi[lo] - fact.chi[lo]) * dts[p]
                           + (fact.eta[lo] - fact.iota[lo])) / fact.sigma_used[p]
        c2 = dts[p + 1] - dts[p]
        c1 = -dts[p + 1]
        for i in range(lo, hi):
            du[i] = fact.Kg[i] @ dx[i] + fact.kg[i] + fact.Tg[i] * c2 + fact.Wg[i] * c1
            cond = cond_by_stage.get(i)
            if cond is not None:
                cg = fact.cond_gains[cond.switch]
                step.dzeta[cond.switch] = (cg.M @ dx[i] + cg.m
                                           + cg.L * c2 + cg.Nvec * c1)
            dlam[i] = fact.P[i] @ dx[i] - fact.s[i] + fact.Psi[i] * c2 + fact.Phi[i] * c1
            nxt = data.A[i] @ dx[i] + data.B[i] @ du[i] + data.f[i] * c2 + data.xbar[i]
            if i == hi - 1 and (p + 1) in data.jumps:
                s = p + 1
                jp = data.jumps[s]
                jf = fact.jumps[s]
                step.dx_pre[s] = nxt
                step.dlam_pre[s] = jf.P @ nxt - jf.s + jf.Phi * (-dts[s])
                dx[lo + int(data.counts[p])] = jp.A_pre @ nxt + jp.x_bar_pre
            else:
                dx[i + 1] = nxt
    dlam[N] = fact.P[N] @ dx[N] - fact.s[N]
    step.dts = dts[1:K + 1].copy()
    return step


def solve_step(data: KKTData, opts: Optional[RiccatiOptions] = None
               ) -> tuple[NewtonStep, RiccatiReport]:
    """Backward elimination followed by the forward sweep."""
    fact = backward(data, opts)
    return forward(fact, data), fact.report
