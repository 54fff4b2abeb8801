"""Interior-point bookkeeping around the structured Newton step.

The Newton system eliminates the inequality slacks and duals; this module
recovers their directions, caps the step so every slack and dual stays
strictly positive, and schedules the barrier parameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kkt import Iterate, KKTData, KKTResidual
from .model import SwitchedOCP
from .riccati import NewtonStep
from .transcription import TimeGrid

Array = np.ndarray


@dataclass
class IPOptions:
    """Fraction-to-boundary margin, barrier schedule and slack initialization."""

    tau: float = 0.995
    eps0: float = 1e-1
    eps_decay: float = 1e-1
    decay_trigger: float = 1e-1
    eps_min: float = 1e-9
    slack_floor: float = 1e-4
    fixed_barrier: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 < self.eps_decay < 1.0:
            raise ValueError("eps_decay must lie in (0, 1)")
        if self.eps_min <= 0.0:
            raise ValueError("eps_min must be positive")


def recover_bound_steps(it: Iterate, step: NewtonStep, data: KKTData,
                        res: KKTResidual) -> NewtonStep:
    """Fill the eliminated slack/dual directions from the primal step."""
    K = data.K
    step.dz, step.dnu = [], []
    for p in range(K + 1):
        gx, gu = data.g_x[p], data.g_u[p]
        lo = int(data.starts[p])
        hi = lo + int(data.counts[p])
        if gx.shape[1] == 0:
            step.dz.append(np.zeros((hi - lo, 0)))
            step.dnu.append(np.zeros((hi - lo, 0)))
            continue
        dz = -(res.rg[p]
               + np.einsum("mri,mi->mr", gx, step.dx[lo:hi])
               + np.einsum("mri,mi->mr", gu, step.du[lo:hi]))
        dnu = -(it.nus[p] * dz + res.rz[p]) / it.zs[p]
        step.dz.append(dz)
        step.dnu.append(dnu)
    if K:
        dts_full = np.concatenate([[0.0], step.dts, [0.0]])
        step.dw = -res.r_dwell - dts_full[:-1] + dts_full[1:]
        step.dups = -(it.upss * step.dw + res.rw) / it.ws
    else:
        step.dw = np.zeros(0)
        step.dups = np.zeros(0)
    return step


def _ftb_alpha(v: Array, dv: Array, tau: float) -> float:
    if v.size == 0:
        return 1.0
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(tau * v[neg] / (-dv[neg]))))


def fraction_to_boundary(it: Iterate, step: NewtonStep, tau: float
                         ) -> tuple[float, float]:
    """Largest primal/dual step fractions keeping slacks and duals interior."""
    alpha_p = 1.0
    alpha_d = 1.0
    for p, (z, nu) in enumerate(zip(it.zs, it.nus)):
        if z.size:
            alpha_p = min(alpha_p, _ftb_alpha(z.ravel(), step.dz[p].ravel(), tau))
            alpha_d = min(alpha_d, _ftb_alpha(nu.ravel(), step.dnu[p].ravel(), tau))
    alpha_p = min(alpha_p, _ftb_alpha(it.ws, step.dw, tau))
    alpha_d = min(alpha_d, _ftb_alpha(it.upss, step.dups, tau))
    return alpha_p, alpha_d


def update_barrier(eps: float, residual_l2: float, opts: IPOptions) -> float:
    """Barrier parameter after one iteration (monotone, floored schedule).

    ``residual_l2`` is the l2 norm of the barrier-perturbed residual stack;
    the parameter decays only once that norm is below the trigger. In
    fixed-barrier mode the parameter never moves.
    """
    if opts.fixed_barrier:
        return eps
    if residual_l2 < opts.decay_trigger:
        return max(eps * opts.eps_decay, opts.eps_min)
    return eps


def apply_step(it: Iterate, step: NewtonStep, alpha_p: float, alpha_d: float) -> Iterate:
    """New iterate after the damped update; slacks/duals stay positive by the
    fraction-to-boundary construction."""
    out = it.copy()
    out.xs += alpha_p * step.dx
    out.us += alpha_p * step.du
    if it.ts.size:
        out.ts += alpha_p * step.dts
        out.ws += alpha_p * step.dw
        out.upss += alpha_d * step.dups
    out.lams += alpha_p * step.dlam
    for p in range(len(out.zs)):
        if out.zs[p].size:
            out.zs[p] += alpha_p * step.dz[p]
            out.nus[p] += alpha_d * step.dnu[p]
    for s in step.dx_pre:
        out.x_pre[s] = out.x_pre[s] + alpha_p * step.dx_pre[s]
        out.lam_pre[s] = out.lam_pre[s] + alpha_p * step.dlam_pre[s]
    for s in step.dzeta:
        out.zetas[s] = out.zetas[s] + alpha_p * step.dzeta[s]
    return out


def initialize_iterate(ocp: SwitchedOCP, grid: TimeGrid,
                       X: Optional[Array] = None, U: Optional[Array] = None,
                       opts: Optional[IPOptions] = None,
                       eps: Optional[float] = None) -> Iterate:
    """Iterate with user primal guesses, zero multipliers and interior slacks.

    Path-constraint slacks start at the constraint margin (floored), their
    duals on the central path; dwell slacks likewise from the current switch
    separations.
    """
    opts = opts or IPOptions()
    eps = opts.eps0 if eps is None else eps
    nx, nu = ocp.nx, ocp.nu
    if X is None:
        if ocp.x0 is None:
            raise ValueError("need an initial state or a full state guess")
        X = np.tile(np.asarray(ocp.x0, dtype=float), (grid.N + 1, 1))
    X = np.asarray(X, dtype=float).reshape(grid.N + 1, nx)
    U = (np.zeros((grid.N, nu)) if U is None
         else np.asarray(U, dtype=float).reshape(grid.N, nu))
    ts = np.asarray(grid.switching_times, dtype=float)
    zs, nus = [], []
    for k, stages in enumerate(grid.stage_sets):
        ph = ocp.phases[k]
        if ph.ng == 0:
            zs.append(np.zeros((len(stages), 0)))
            nus.append(np.zeros((len(stages), 0)))
            continue
        z = np.empty((len(stages), ph.ng))
        for j, i in enumerate(stages):
            z[j] = np.maximum(-np.asarray(ph.g(X[i], U[i]), dtype=float),
                              opts.slack_floor)
        zs.append(z)
        nus.append(eps / z)
    K = grid.K
    if K:
        bt = grid.boundary_times(ts)
        dwell = np.array([ph.min_dwell for ph in ocp.phases])
        ws = np.maximum(bt[1:] - bt[:-1] - dwell, opts.slack_floor)
        upss = eps / ws
    else:
        ws = np.zeros(0)
        upss = np.zeros(0)
    it = Iterate(xs=X, us=U, ts=ts, lams=np.zeros((grid.N + 1, nx)),
                 zs=zs, nus=nus, ws=ws, upss=upss, eps=eps)
    for s in grid.event_switches:
        it.x_pre[s] = X[grid.starts[s]].copy()
        it.lam_pre[s] = np.zeros(nx)
    for s in grid.condition_switches:
        it.zetas[s] = np.zeros(grid.condition_dims[s])
    return it
