"""Discretization of the switched problem and adaptive mesh refinement.

Each phase gets a uniform grid whose step size depends on the (variable)
switching times. Switches with an event get an auxiliary pre-switch point so
that jump maps and switching conditions attach to dedicated stages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import SwitchedOCP

Array = np.ndarray


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Per-phase uniform discretization of the horizon.

    ``stage_sets[k]`` is the contiguous range of stage indices advanced by
    phase ``k``'s dynamics; the terminal stage ``N`` belongs to no phase.
    ``jump_stages`` maps an event switch (1-based) to a synthetic id for its
    pre-switch point, and ``condition_stages`` maps a condition switch to the
    stage carrying the transformed switching constraint (two steps before the
    pre-switch point).
    """

    t0: float
    tf: float
    counts: tuple[int, ...]
    switching_times: tuple[float, ...]
    event_switches: tuple[int, ...] = ()
    condition_switches: tuple[int, ...] = ()
    condition_dims: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.counts) - 1

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def N_k(self) -> tuple[int, ...]:
        return self.counts

    @property
    def starts(self) -> tuple[int, ...]:
        out, acc = [], 0
        for c in self.counts:
            out.append(acc)
            acc += c
        return tuple(out)

    @property
    def stage_sets(self) -> tuple[range, ...]:
        return tuple(range(s, s + c) for s, c in zip(self.starts, self.counts))

    def boundary_times(self, ts: Optional[Sequence[float]] = None) -> np.ndarray:
        """Phase boundaries [t0, t_1, ..., t_K, tf] for the given switch times."""
        ts = self.switching_times if ts is None else tuple(ts)
        return np.array([self.t0, *ts, self.tf], dtype=float)

    def step_sizes(self, ts: Optional[Sequence[float]] = None) -> np.ndarray:
        """Per-phase step sizes for the given (default: build-time) switch times."""
        bt = self.boundary_times(ts)
        return np.diff(bt) / np.asarray(self.counts, dtype=float)

    @property
    def dt(self) -> tuple[float, ...]:
        return tuple(self.step_sizes())

    def phase_of_stage(self, i: int) -> int:
        for k, r in enumerate(self.stage_sets):
            if i in r:
                return k
        raise IndexError(f"stage {i} belongs to no phase")

    @property
    def jump_stages(self) -> dict[int, str]:
        # pre-switch points are addressed by switch index; the id is only a label
        return {s: f"pre@{s}" for s in self.event_switches}

    @property
    def condition_stages(self) -> dict[int, int]:
        out = {}
        for s in self.condition_switches:
            k = s - 1  # phase before the switch
            out[s] = self.starts[k] + self.counts[k] - 2
        return out

    def stage_times(self, ts: Optional[Sequence[float]] = None) -> np.ndarray:
        """Times of stages 0..N for the given switch times."""
        bt = self.boundary_times(ts)
        dt = self.step_sizes(ts)
        out = np.empty(self.N + 1)
        for k, r in enumerate(self.stage_sets):
            for j, i in enumerate(r):
                out[i] = bt[k] + j * dt[k]
        out[self.N] = bt[-1]
        return out


def build_grid(ocp: SwitchedOCP, counts: Sequence[int], T: Sequence[float]) -> TimeGrid:
    """Build the discretization for the given per-phase grid counts and switch times.

    Raises ``GridError`` (naming the offending phase) for non-positive counts,
    non-increasing switch times, or event phases too short for their stages.
    """
    counts = tuple(int(c) for c in counts)
    T = tuple(float(t) for t in T)
    K = ocp.num_switches
    if len(counts) != K + 1:
        raise GridError(f"expected {K + 1} per-phase counts, got {len(counts)}")
    if len(T) != K:
        raise GridError(f"expected {K} switching times, got {len(T)}")
    for k, c in enumerate(counts):
        if c < 1:
            raise GridError(f"phase {k}: grid count must be >= 1, got {c}")
    bt = [ocp.t0, *T, ocp.tf]
    for k in range(K + 1):
        if not bt[k] < bt[k + 1]:
            raise GridError(
                f"phase {k}: boundary times must increase, got [{bt[k]}, {bt[k + 1]}]")
    dwell_acc = ocp.t0
    for k in range(K):
        dwell_acc += ocp.phases[k].min_dwell
        if T[k] < dwell_acc - 1e-12:
            raise GridError(f"phase {k}: switching time {T[k]} violates accumulated dwell times")
    event_switches = []
    condition_switches = []
    condition_dims = {}
    for k, ph in enumerate(ocp.phases[:-1]):
        ev = ph.exit_event
        if ev is None:
            continue
        event_switches.append(k + 1)
        if ev.has_condition:
            if counts[k] < 2:
                raise GridError(
                    f"phase {k}: a switching condition needs at least 2 grid points")
            condition_switches.append(k + 1)
            condition_dims[k + 1] = ev.ne
    return TimeGrid(
        t0=ocp.t0, tf=ocp.tf, counts=counts, switching_times=T,
        event_switches=tuple(event_switches),
        condition_switches=tuple(condition_switches),
        condition_dims=condition_dims,
    )


@dataclass
class Trajectory:
    """States on the grid plus the pre-switch states at event switches."""

    xs: Array
    x_pre: dict[int, Array] = field(default_factory=dict)


def rollout(ocp: SwitchedOCP, grid: TimeGrid, x0: Array,
            U: Array, T: Optional[Sequence[float]] = None) -> Trajectory:
    """Forward-Euler rollout of the controls from ``x0`` across all phases.

    The returned states satisfy the discrete state equations exactly; at event
    switches the jump map connects the pre-switch point to the next phase.
    """
    U = np.asarray(U, dtype=float)
    if U.shape[0] != grid.N:
        raise ValueError(f"expected {grid.N} controls, got {U.shape[0]}")
    dt = grid.step_sizes(T)
    xs = np.empty((grid.N + 1, ocp.nx))
    xs[0] = np.asarray(x0, dtype=float)
    x_pre: dict[int, Array] = {}
    for k, stages in enumerate(grid.stage_sets):
        ph = ocp.phases[k]
        for i in stages:
            try:
                step = xs[i] + np.asarray(ph.f(xs[i], U[i]), dtype=float) * dt[k]
            except Exception as exc:
                raise RuntimeError(f"dynamics evaluation failed at stage {i}") from exc
            last = i == stages[-1]
            if last and (k + 1) in grid.event_switches:
                x_pre[k + 1] = step
                xs[i + 1] = ocp.phases[k].exit_event.apply_jump(step)
            else:
                xs[i + 1] = step
    return Trajectory(xs=xs, x_pre=x_pre)


@dataclass
class RefineResult:
    grid: TimeGrid
    iterate: "object"
    changed: bool
    old_counts: tuple[int, ...]
    new_counts: tuple[int, ...]
    stuck_phases: tuple[int, ...] = ()


def _grow_count(duration: float, dt_max: float) -> int:
    return max(1, math.ceil(duration / dt_max - 1e-12))


def _shrink_count(duration: float, dt_min: float) -> int:
    return max(1, math.floor(duration / dt_min + 1e-12))


def plan_counts(grid: TimeGrid, ts: Sequence[float], dt_max: float, dt_min: float,
                policy: str = "adaptive-N") -> tuple[tuple[int, ...], tuple[int, ...]]:
    """New per-phase counts for the step-size thresholds; returns (counts, stuck).

    ``adaptive-N`` grows a phase until its step fits under ``dt_max`` and
    shrinks it when the step falls below ``dt_min`` (never below one grid).
    ``fixed-N`` compensates growth by removing the same number of grids from
    the phases that can best afford them, keeping the total unchanged.
    """
    if not dt_max > dt_min > 0:
        raise ValueError("need dt_max > dt_min > 0")
    durations = np.diff(grid.boundary_times(ts))
    counts = list(grid.counts)
    stuck = []
    if policy == "adaptive-N":
        for k, dur in enumerate(durations):
            step = dur / counts[k]
            if step > dt_max:
                counts[k] = _grow_count(dur, dt_max)
            elif step < dt_min:
                new = min(_shrink_count(dur, dt_min), counts[k])
                if new == 1 and dur < dt_min:
                    stuck.append(k)
                counts[k] = new
    elif policy == "fixed-N":
        grown = set()
        added = 0
        for k, dur in enumerate(durations):
            step = dur / counts[k]
            if step > dt_max:
                target = _grow_count(dur, dt_max)
                added += target - counts[k]
                counts[k] = target
                grown.add(k)
        while added > 0:
            candidates = [k for k in range(len(counts)) if k not in grown and counts[k] > 1]
            if not candidates:
                stuck.extend(k for k in range(len(counts)) if k not in grown)
                break
            # removing a grid from the phase left with the smallest step hurts least
            k = min(candidates, key=lambda k: (durations[k] / (counts[k] - 1), k))
            counts[k] -= 1
            added -= 1
    else:
        raise ValueError(f"unknown mesh policy {policy!r}")
    return tuple(counts), tuple(sorted(set(stuck)))


def refine(grid: TimeGrid, iterate, dt_max: float, dt_min: float,
           policy: str = "adaptive-N", slack_floor: float = 1e-4) -> RefineResult:
    """Re-mesh per the step-size thresholds and transfer the iterate.

    States interpolate piecewise-linearly in time, controls and multipliers are
    held over their old intervals, inequality slacks and duals are additionally
    floored to stay strictly interior. Switching times, dwell slacks/duals and
    pre-switch data carry over unchanged. A no-op when all steps are in bounds.
    """
    ts = tuple(float(t) for t in iterate.ts) if grid.K else ()
    new_counts, stuck = plan_counts(grid, ts, dt_max, dt_min, policy)
    if new_counts == grid.counts:
        return RefineResult(grid, iterate, False, grid.counts, new_counts, stuck)
    new_grid = replace(grid, counts=new_counts, switching_times=ts)
    new_it = _transfer_iterate(grid, new_grid, iterate, slack_floor)
    return RefineResult(new_grid, new_it, True, grid.counts, new_counts, stuck)


def _transfer_iterate(old: TimeGrid, new: TimeGrid, it, slack_floor: float):
    from .kkt import Iterate  # local import to avoid a cycle

    ts = tuple(float(t) for t in it.ts) if old.K else ()
    bt = old.boundary_times(ts)
    old_dt = old.step_sizes(ts)
    new_dt = new.step_sizes(ts)
    nx = it.xs.shape[1]
    nu = it.us.shape[1]
    xs = np.empty((new.N + 1, nx))
    us = np.empty((new.N, nu))
    lams = np.empty((new.N + 1, nx))
    zs: list[Array] = []
    nus: list[Array] = []
    for k in range(old.K + 1):
        o0, n0 = old.starts[k], new.starts[k]
        oc, nc = old.counts[k], new.counts[k]
        # right endpoint for interpolation: pre-switch state if the phase ends
        # in an event, otherwise the next phase's first state
        if (k + 1) in old.event_switches:
            x_end = it.x_pre[k + 1]
        else:
            x_end = it.xs[o0 + oc]
        x_nodes = np.vstack([it.xs[o0:o0 + oc], x_end])
        tau_old = np.arange(oc + 1) * old_dt[k]
        tau_new = np.arange(nc) * new_dt[k]
        for d in range(nx):
            xs[n0:n0 + nc, d] = np.interp(tau_new, tau_old, x_nodes[:, d])
        hold = np.minimum((tau_new // max(old_dt[k], 1e-300)).astype(int), oc - 1)
        us[n0:n0 + nc] = it.us[o0 + hold]
        lams[n0:n0 + nc] = it.lams[o0 + hold]
        zk, nk = it.zs[k], it.nus[k]
        if zk.shape[1] > 0:
            zs.append(np.maximum(zk[hold], slack_floor))
            nus.append(np.maximum(nk[hold], slack_floor))
        else:
            zs.append(np.zeros((nc, 0)))
            nus.append(np.zeros((nc, 0)))
    xs[new.N] = it.xs[old.N]
    lams[new.N] = it.lams[old.N]
    return Iterate(
        xs=xs, us=us, ts=np.asarray(ts, dtype=float), lams=lams,
        zs=zs, nus=nus, ws=it.ws.copy(), upss=it.upss.copy(),
        x_pre={s: v.copy() for s, v in it.x_pre.items()},
        lam_pre={s: v.copy() for s, v in it.lam_pre.items()},
        zetas={s: v.copy() for s, v in it.zetas.items()},
        eps=it.eps,
    )
