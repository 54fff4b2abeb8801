"""Newton iteration on the discretized problem plus the outer mesh loop.

One Newton iteration: evaluate residuals, assemble the condensed system, run
the structured backward/forward solve, recover the bound directions, damp by
the fraction-to-boundary rule and update. The outer loop re-meshes whenever a
phase's step size leaves its bounds, once the residual is moderately small.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import interior_point as ip
from . import kkt, oracle, riccati, transcription
from .kkt import Iterate
from .model import SwitchedOCP
from .transcription import TimeGrid

Array = np.ndarray


@dataclass
class SolverOptions:
    """Termination, mesh, Hessian and interior-point settings.

    ``modify`` defaults per Hessian mode: exact Hessians never auto-modify the
    reduced Hessian (failures surface as errors), the Gauss-Newton mode keeps
    the modification on.
    """

    tol: float = 1e-7
    term_norm: str = "max"
    max_newton_iters: int = 100
    total_iter_cap: int = 500
    dt_max: float = 0.35
    dt_min: float = 1e-3
    mesh_policy: str = "adaptive-N"
    refine_trigger: float = 1e-1
    hessian_mode: str = "gauss_newton"
    modify: Optional[bool] = None
    rescue: bool = False
    riccati_dt_max: float = 0.5
    ip: ip.IPOptions = field(default_factory=ip.IPOptions)
    use_kernel: bool = True
    cross_check_oracle: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not self.dt_max > self.dt_min > 0:
            raise ValueError("need dt_max > dt_min > 0")
        if self.term_norm not in ("max", "l2"):
            raise ValueError("term_norm must be 'max' or 'l2'")

    def resolve_modify(self) -> bool:
        if self.modify is not None:
            return self.modify
        return self.hessian_mode == "gauss_newton"

    def riccati_options(self) -> riccati.RiccatiOptions:
        return riccati.RiccatiOptions(
            modify=self.resolve_modify(), dt_max=self.riccati_dt_max,
            use_kernel=self.use_kernel)


@dataclass
class IterationRecord:
    iter: int
    eps: float
    perturbed_l2: float
    perturbed_max: float
    unperturbed_l2: float
    unperturbed_max: float
    alpha_primal: float = 1.0
    alpha_dual: float = 1.0
    switching_times: list[float] = field(default_factory=list)
    modifications: int = 0
    rescued: bool = False
    wall_ms: float = 0.0
    oracle_dev: Optional[float] = None
    linear_residual: Optional[float] = None


@dataclass
class RefinementEvent:
    after_iter: int
    old_counts: list[int]
    new_counts: list[int]


@dataclass
class ConvergenceLog:
    records: list[IterationRecord] = field(default_factory=list)
    refinements: list[RefinementEvent] = field(default_factory=list)

    def to_jsonl(self, include_timing: bool = True) -> str:
        lines = []
        for r in self.records:
            d = asdict(r)
            if not include_timing:
                d.pop("wall_ms")
            lines.append(json.dumps({"kind": "iteration", **d}))
        for e in self.refinements:
            lines.append(json.dumps({"kind": "refinement", **asdict(e)}))
        return "\n".join(lines) + ("\n" if lines else "")

    def median_ms_per_iter(self) -> float:
        if not self.records:
            return 0.0
        return float(np.median([r.wall_ms for r in self.records]))

    def worst_oracle_dev(self) -> float:
        vals = [r.oracle_dev for r in self.records if r.oracle_dev is not None]
        return max(vals, default=0.0)

    def worst_linear_residual(self) -> float:
        vals = [r.linear_residual for r in self.records if r.linear_residual is not None]
        return max(vals, default=0.0)


@dataclass
class Solution:
    """Final trajectories, multipliers, grid, objective and residual norms."""

    xs: Array
    us: Array
    ts: Array
    lams: Array
    x_pre: dict[int, Array]
    lam_pre: dict[int, Array]
    zetas: dict[int, Array]
    zs: list[Array]
    nus: list[Array]
    ws: Array
    upss: Array
    grid: TimeGrid
    objective: float
    unperturbed_max: float
    unperturbed_l2: float
    status: str
    iters: int
    refinements: int


def objective_value(ocp: SwitchedOCP, grid: TimeGrid, it: Iterate) -> float:
    """Discrete cost: terminal term plus step-weighted running costs plus any
    switch costs on the pre-switch states."""
    dt = grid.step_sizes(it.ts)
    total = float(ocp.terminal_cost(it.xs[grid.N]))
    for k, stages in enumerate(grid.stage_sets):
        ph = ocp.phases[k]
        total += dt[k] * sum(float(ph.l(it.xs[i], it.us[i])) for i in stages)
    for s in grid.event_switches:
        ev = ocp.phases[s - 1].exit_event
        if ev.jump_cost is not None:
            total += float(ev.jump_cost(it.x_pre[s]))
    return total


def _term_value(res: kkt.KKTResidual, opts: SolverOptions) -> float:
    return (res.norms.unperturbed_max if opts.term_norm == "max"
            else res.norms.unperturbed_l2)


def _mesh_out_of_bounds(grid: TimeGrid, it: Iterate, opts: SolverOptions) -> bool:
    dt = grid.step_sizes(it.ts)
    return bool(np.any(dt > opts.dt_max) or np.any(dt < opts.dt_min))


def _newton_iteration(ocp, grid, it, opts, ropts, ev, res):
    """One full Newton update; returns (new iterate, record fields)."""
    data = kkt.assemble_from_eval(ocp, grid, it, ev, res, hessian_mode=opts.hessian_mode)
    rescued = False
    try:
        step, report = riccati.solve_step(data, ropts)
    except riccati.RiccatiError:
        if not (opts.rescue and not ropts.modify):
            raise
        # re-solve this iteration with the reduced-Hessian modification; the
        # step then comes from the deliberately modified system
        rescued = True
        step, report = riccati.solve_step(
            data, riccati.RiccatiOptions(modify=True, dt_max=ropts.dt_max,
                                         use_kernel=ropts.use_kernel))
    step = ip.recover_bound_steps(it, step, data, res)
    extra = {}
    if opts.cross_check_oracle:
        dense = oracle.solve_dense(oracle.assemble_dense(data))
        extra["oracle_dev"] = oracle.compare(step, dense, tol=np.inf).max_deviation()
        lin, scale = oracle.linear_residual(data, res, it, step)
        extra["linear_residual"] = lin / (1.0 + scale)
    alpha_p, alpha_d = ip.fraction_to_boundary(it, step, opts.ip.tau)
    new_it = ip.apply_step(it, step, alpha_p, alpha_d)
    extra["rescued"] = rescued
    return new_it, report, alpha_p, alpha_d, extra


def solve_nlp(ocp: SwitchedOCP, grid: TimeGrid, init: Iterate,
              opts: Optional[SolverOptions] = None,
              log: Optional[ConvergenceLog] = None,
              stop_when_refinable: bool = False,
              max_iters: Optional[int] = None,
              ) -> tuple[Iterate, ConvergenceLog, str]:
    """Newton iterations on a fixed mesh until the termination norm or budget.

    Status is ``converged``, ``max_iters``, ``riccati_failure`` or, when
    ``stop_when_refinable`` is set and the mesh has left its step bounds while
    the residual is already moderately small, ``refine_ready``.
    """
    opts = opts or SolverOptions()
    log = log if log is not None else ConvergenceLog()
    ropts = opts.riccati_options()
    it = init
    budget = opts.max_newton_iters if max_iters is None else max_iters
    start_iter = len(log.records)
    for n in range(budget):
        t0 = time.perf_counter()
        it.check_positive()
        ev = kkt.evaluate(ocp, grid, it, hessian_mode=opts.hessian_mode)
        res = kkt.residual_from_eval(ocp, grid, it, ev)
        record = IterationRecord(
            iter=start_iter + n, eps=it.eps,
            perturbed_l2=res.norms.perturbed_l2,
            perturbed_max=res.norms.perturbed_max,
            unperturbed_l2=res.norms.unperturbed_l2,
            unperturbed_max=res.norms.unperturbed_max,
            switching_times=[float(t) for t in it.ts])
        if _term_value(res, opts) <= opts.tol:
            record.wall_ms = (time.perf_counter() - t0) * 1e3
            log.records.append(record)
            return it, log, "converged"
        if (stop_when_refinable
                and res.norms.perturbed_l2 < opts.refine_trigger
                and _mesh_out_of_bounds(grid, it, opts)):
            return it, log, "refine_ready"
        new_eps = ip.update_barrier(it.eps, res.norms.perturbed_l2, opts.ip)
        if new_eps != it.eps:
            # the complementarity targets move with the barrier
            it.eps = new_eps
            res = kkt.residual_from_eval(ocp, grid, it, ev)
            record.eps = new_eps
        try:
            new_it, report, alpha_p, alpha_d, extra = _newton_iteration(
                ocp, grid, it, opts, ropts, ev, res)
        except riccati.RiccatiError as err:
            record.wall_ms = (time.perf_counter() - t0) * 1e3
            log.records.append(record)
            return it, log, f"riccati_failure:{err.kind}"
        record.alpha_primal = alpha_p
        record.alpha_dual = alpha_d
        record.modifications = int(np.sum(report.sigma_modified))
        record.rescued = extra.get("rescued", False)
        record.oracle_dev = extra.get("oracle_dev")
        record.linear_residual = extra.get("linear_residual")
        record.wall_ms = (time.perf_counter() - t0) * 1e3
        log.records.append(record)
        it = new_it
    return it, log, "max_iters"


def solve(ocp: SwitchedOCP, grid: TimeGrid, init: Optional[Iterate] = None,
          opts: Optional[SolverOptions] = None
          ) -> tuple[Solution, ConvergenceLog]:
    """Full solve: Newton iterations interleaved with mesh refinement.

    Terminates when the residual satisfies the tolerance and every phase step
    is under its upper threshold; refinement only happens once the perturbed
    residual is below the refinement trigger.
    """
    opts = opts or SolverOptions()
    if init is None:
        init = ip.initialize_iterate(ocp, grid, opts=opts.ip)
    log = ConvergenceLog()
    it = init
    status = "iteration_cap"
    while len(log.records) < opts.total_iter_cap:
        remaining = opts.total_iter_cap - len(log.records)
        it, log, status = solve_nlp(
            ocp, grid, it, opts, log=log, stop_when_refinable=True,
            max_iters=min(opts.max_newton_iters, remaining))
        dt = grid.step_sizes(it.ts)
        if status == "converged":
            if np.all(dt <= opts.dt_max * (1 + 1e-12)):
                break
        elif status != "refine_ready":
            break
        result = transcription.refine(grid, it, opts.dt_max, opts.dt_min,
                                      policy=opts.mesh_policy,
                                      slack_floor=opts.ip.slack_floor)
        if not result.changed:
            if status == "converged":
                break
            status = "max_iters"
            break
        log.refinements.append(RefinementEvent(
            after_iter=len(log.records) - 1,
            old_counts=list(result.old_counts),
            new_counts=list(result.new_counts)))
        grid, it = result.grid, result.iterate
    res = kkt.eval_residual(ocp, grid, it)
    sol = Solution(
        xs=it.xs, us=it.us, ts=it.ts, lams=it.lams,
        x_pre=it.x_pre, lam_pre=it.lam_pre, zetas=it.zetas,
        zs=it.zs, nus=it.nus, ws=it.ws, upss=it.upss,
        grid=grid, objective=objective_value(ocp, grid, it),
        unperturbed_max=res.norms.unperturbed_max,
        unperturbed_l2=res.norms.unperturbed_l2,
        status=status, iters=len(log.records), refinements=len(log.refinements))
    return sol, log
