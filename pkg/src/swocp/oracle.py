"""Dense reference solver for the condensed stage-wise system.

Materializes the full symmetric indefinite linear system that the recursion
solves implicitly, factors it directly, and compares solutions group by
group. Ground truth only: cost is cubic in the total dimension.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kkt import KKTData, KKTResidual, Iterate
from .riccati import NewtonStep

Array = np.ndarray


class SingularKKTError(RuntimeError):
    def __init__(self, deficiency: int):
        self.deficiency = deficiency
        super().__init__(f"dense KKT matrix is singular (rank deficiency {deficiency})")


@dataclass
class DenseKKT:
    """Full symmetric KKT matrix, right-hand side and the variable index map."""

    matrix: Array
    rhs: Array
    index: dict[tuple[str, int], tuple[int, int]]
    nx: int
    nu: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def sl(self, kind: str, idx: int) -> slice:
        off, size = self.index[(kind, idx)]
        return slice(off, off + size)

    def dump(self, path: str) -> None:
        """Plain-text dump of the matrix and rhs for debugging."""
        with open(path, "w") as fh:
            fh.write(f"# dense KKT dim {self.dim}\n")
            for (kind, idx), (off, size) in sorted(self.index.items(), key=lambda kv: kv[1]):
                fh.write(f"# {kind} {idx}: rows {off}..{off + size - 1}\n")
            for r in range(self.dim):
                row = " ".join(f"{v:.17g}" for v in self.matrix[r])
                fh.write(row + "\n")
            fh.write("# rhs\n")
            fh.write(" ".join(f"{v:.17g}" for v in self.rhs) + "\n")


def _phase_of(data: KKTData, i: int) -> int:
    return int(np.searchsorted(data.starts, i, side="right") - 1)


def assemble_dense(data: KKTData) -> DenseKKT:
    """Materialize every equation of the condensed system exactly once."""
    nx, nu, N, K = data.nx, data.nu, data.N, data.K
    ev_switches = sorted(data.jumps)
    cond_switches = sorted(data.conds)

    index: dict[tuple[str, int], tuple[int, int]] = {}
    off = 0

    def reg(kind, idx, size):
        nonlocal off
        index[(kind, idx)] = (off, size)
        off += size

    for i in range(N + 1):
        reg("x", i, nx)
    for s in ev_switches:
        reg("x_pre", s, nx)
    for i in range(N):
        reg("u", i, nu)
    for s in range(1, K + 1):
        reg("t", s, 1)
    for i in range(N + 1):
        reg("lam", i, nx)
    for s in ev_switches:
        reg("lam_pre", s, nx)
    for s in cond_switches:
        reg("zeta", s, data.conds[s].e_bar.shape[0])

    dim = off
    M = np.zeros((dim, dim))
    c = np.zeros(dim)
    kkt = DenseKKT(matrix=M, rhs=c, index=index, nx=nx, nu=nu)
    sl = kkt.sl
    cond_by_stage = {cd.stage: cd for cd in data.conds.values()}

    def t_cols(p: int):
        """Switch columns coupled by phase p's duration change, with signs."""
        cols = []
        if p + 1 <= K:
            cols.append((p + 1, 1.0))
        if p >= 1:
            cols.append((p, -1.0))
        return cols

    # initial-state equation, multiplier lam 0
    M[sl("lam", 0), sl("x", 0)] = np.eye(nx)
    c[sl("lam", 0)] = data.x0_res

    for i in range(N):
        p = _phase_of(data, i)
        last = i == int(data.starts[p] + data.counts[p] - 1)
        jump_next = last and (p + 1) in data.jumps
        lam_row = ("lam_pre", p + 1) if jump_next else ("lam", i + 1)
        x_next = ("x_pre", p + 1) if jump_next else ("x", i + 1)

        # state equation, multiplier lam_row
        M[sl(*lam_row), sl("x", i)] = data.A[i]
        M[sl(*lam_row), sl("u", i)] = data.B[i]
        M[sl(*lam_row), sl(*x_next)] = -np.eye(nx)
        for s, sign in t_cols(p):
            M[sl(*lam_row), sl("t", s)] = sign * data.f[i][:, None]
        c[sl(*lam_row)] = data.xbar[i]

        # stationarity in x_i and u_i
        M[sl("x", i), sl("x", i)] = data.Qxx[i]
        M[sl("x", i), sl("u", i)] = data.Qxu[i]
        M[sl("x", i), sl(*lam_row)] = data.A[i].T
        M[sl("x", i), sl("lam", i)] -= np.eye(nx)
        c[sl("x", i)] = data.lx[i]
        M[sl("u", i), sl("x", i)] = data.Qxu[i].T
        M[sl("u", i), sl("u", i)] = data.Quu[i]
        M[sl("u", i), sl(*lam_row)] = data.B[i].T
        c[sl("u", i)] = data.lu[i]
        for s, sign in t_cols(p):
            M[sl("x", i), sl("t", s)] = sign * data.hx[i][:, None]
            M[sl("u", i), sl("t", s)] = sign * data.hu[i][:, None]
        cd = cond_by_stage.get(i)
        if cd is not None:
            M[sl("x", i), sl("zeta", cd.switch)] = cd.C.T
            M[sl("u", i), sl("zeta", cd.switch)] = cd.D.T
            M[sl("zeta", cd.switch), sl("x", i)] = cd.C
            M[sl("zeta", cd.switch), sl("u", i)] = cd.D
            for s, sign in t_cols(p):
                M[sl("zeta", cd.switch), sl("t", s)] = sign * cd.E[:, None]
            c[sl("zeta", cd.switch)] = cd.e_bar

    # terminal stationarity
    M[sl("x", N), sl("x", N)] = data.Qxx[N]
    M[sl("x", N), sl("lam", N)] = -np.eye(nx)
    c[sl("x", N)] = data.lx[N]

    # jump stages
    for s in ev_switches:
        jp = data.jumps[s]
        post = int(data.starts[s])
        M[sl("lam", post), sl("x_pre", s)] = jp.A_pre
        M[sl("lam", post), sl("x", post)] = -np.eye(nx)
        c[sl("lam", post)] = jp.x_bar_pre
        M[sl("x_pre", s), sl("x_pre", s)] = jp.Q_xx_pre
        M[sl("x_pre", s), sl("lam", post)] = jp.A_pre.T
        M[sl("x_pre", s), sl("lam_pre", s)] = -np.eye(nx)
        c[sl("x_pre", s)] = jp.l_x_pre

    # switching-time stationarity rows
    for s in range(1, K + 1):
        row = sl("t", s)
        const = -data.q_t_hat[s - 1] + data.q_t_hat[s]
        for p, sign in ((s - 1, 1.0), (s, -1.0)):
            lo = int(data.starts[p])
            hi = lo + int(data.counts[p])
            for i in range(lo, hi):
                last = i == hi - 1
                jump_next = last and (p + 1) in data.jumps
                lam_row = ("lam_pre", p + 1) if jump_next else ("lam", i + 1)
                M[row, sl("x", i)] += sign * data.hx[i][None, :]
                M[row, sl("u", i)] += sign * data.hu[i][None, :]
                M[row, sl(*lam_row)] += sign * data.f[i][None, :]
                const += sign * data.hbar[i]
        M[row, sl("t", s)] += data.Q_tt[s - 1] + data.Q_tt[s]
        if s >= 2:
            M[row, sl("t", s - 1)] += -data.Q_tt[s - 1]
        if s + 1 <= K:
            M[row, sl("t", s + 1)] += -data.Q_tt[s]
        for cs, cd in data.conds.items():
            if cs == s:
                M[row, sl("zeta", cs)] += cd.E[None, :]
                const += float(cd.E @ cd.zeta)
            elif cs == s + 1:
                M[row, sl("zeta", cs)] -= cd.E[None, :]
                const -= float(cd.E @ cd.zeta)
        c[row] = const
    return kkt


def solve_dense(sys: DenseKKT, data: Optional[KKTData] = None) -> NewtonStep:
    """Solve the materialized system by a pivoted dense factorization."""
    try:
        vec = np.linalg.solve(sys.matrix, -sys.rhs)
    except np.linalg.LinAlgError:
        rank = np.linalg.matrix_rank(sys.matrix)
        raise SingularKKTError(sys.dim - rank) from None
    resid = np.max(np.abs(sys.matrix @ vec + sys.rhs))
    if not np.isfinite(resid) or resid > 1e-6 * (1.0 + np.max(np.abs(sys.rhs))):
        rank = np.linalg.matrix_rank(sys.matrix)
        if rank < sys.dim:
            raise SingularKKTError(sys.dim - rank)
    return unpack_step(sys, vec)


def unpack_step(sys: DenseKKT, vec: Array) -> NewtonStep:
    kinds: dict[str, list[int]] = {}
    for kind, idx in sys.index:
        kinds.setdefault(kind, []).append(idx)
    nX = max(kinds["x"]) + 1
    nU = max(kinds["u"]) + 1 if "u" in kinds else 0
    K = max(kinds["t"]) if "t" in kinds else 0
    step = NewtonStep(
        dx=np.stack([vec[sys.sl("x", i)] for i in range(nX)]),
        du=(np.stack([vec[sys.sl("u", i)] for i in range(nU)])
            if nU else np.zeros((0, sys.nu))),
        dts=np.array([float(vec[sys.sl("t", s)][0]) for s in range(1, K + 1)]),
        dlam=np.stack([vec[sys.sl("lam", i)] for i in range(nX)]),
    )
    for s in sorted(kinds.get("x_pre", [])):
        step.dx_pre[s] = vec[sys.sl("x_pre", s)]
        step.dlam_pre[s] = vec[sys.sl("lam_pre", s)]
    for s in sorted(kinds.get("zeta", [])):
        step.dzeta[s] = vec[sys.sl("zeta", s)]
    return step


@dataclass
class ComparisonReport:
    deviations: dict[str, float] = field(default_factory=dict)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.deviations.values())

    def failing_groups(self) -> list[str]:
        return [g for g, v in self.deviations.items() if v > self.tol]

    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)


def _group_dev(a: Array, b: Array) -> float:
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b), initial=0.0)))


def compare(a: NewtonStep, b: NewtonStep, tol: float) -> ComparisonReport:
    """Group-wise relative comparison of two steps (max-norm, relative to b)."""
    rep = ComparisonReport(tol=tol)
    rep.deviations["dx"] = _group_dev(a.dx, b.dx)
    rep.deviations["du"] = _group_dev(a.du, b.du)
    rep.deviations["dt"] = _group_dev(a.dts, b.dts)
    rep.deviations["dlam"] = _group_dev(a.dlam, b.dlam)
    if set(a.dx_pre) != set(b.dx_pre) or set(a.dzeta) != set(b.dzeta):
        raise ValueError("steps carry different pre-switch/condition blocks")
    for s in a.dx_pre:
        rep.deviations[f"dx_pre[{s}]"] = _group_dev(a.dx_pre[s], b.dx_pre[s])
        rep.deviations[f"dlam_pre[{s}]"] = _group_dev(a.dlam_pre[s], b.dlam_pre[s])
    for s in a.dzeta:
        rep.deviations[f"dzeta[{s}]"] = _group_dev(a.dzeta[s], b.dzeta[s])
    return rep


def linear_residual(data: KKTData, res: KKTResidual, it: Iterate,
                    step: NewtonStep) -> tuple[float, float]:
    """Max-norm of the fully stacked linearized system at a completed step.

    Includes the recovered slack/dual directions, so a correct solve plus
    recovery drives this to rounding level. Returns (residual, data scale).
    """
    nx, N, K = data.nx, data.N, data.K
    sys = assemble_dense(data)
    vec = np.zeros(sys.dim)
    for i in range(N + 1):
        vec[sys.sl("x", i)] = step.dx[i]
        vec[sys.sl("lam", i)] = step.dlam[i]
    for i in range(N):
        vec[sys.sl("u", i)] = step.du[i]
    for s in range(1, K + 1):
        vec[sys.sl("t", s)] = step.dts[s - 1]
    for s in step.dx_pre:
        vec[sys.sl("x_pre", s)] = step.dx_pre[s]
        vec[sys.sl("lam_pre", s)] = step.dlam_pre[s]
    for s in step.dzeta:
        vec[sys.sl("zeta", s)] = step.dzeta[s]
    parts = [np.abs(sys.matrix @ vec + sys.rhs)]

    dts_full = np.concatenate([[0.0], step.dts, [0.0]]) if K else np.zeros(2)
    for p in range(K + 1):
        lo = int(data.starts[p])
        hi = lo + int(data.counts[p])
        gx, gu, gv = data.g_x[p], data.g_u[p], data.g_val[p]
        if gv.shape[1]:
            dzp = step.dz[p]
            dnp = step.dnu[p]
            rgp = res.rg[p]
            rzp = res.rz[p]
            lin_g = (np.einsum("mri,mi->mr", gx, step.dx[lo:hi])
                     + np.einsum("mri,mi->mr", gu, step.du[lo:hi]) + dzp + rgp)
            lin_z = it.nus[p] * dzp + it.zs[p] * dnp + rzp
            parts += [np.abs(lin_g).ravel(), np.abs(lin_z).ravel()]
    if K:
        lin_w = dts_full[:-1] - dts_full[1:] + step.dw + res.r_dwell
        lin_ups = it.upss * step.dw + it.ws * step.dups + res.rw
        parts += [np.abs(lin_w), np.abs(lin_ups)]
    resid = float(max(np.max(b, initial=0.0) for b in parts))
    scale = float(max(np.max(np.abs(sys.matrix)), np.max(np.abs(sys.rhs), initial=0.0)))
    return resid, scale
