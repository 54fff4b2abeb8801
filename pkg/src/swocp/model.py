"""Problem definitions for switched-system optimal control.

A problem is an ordered list of phases, each with its own dynamics, running
cost and path constraints, separated by switches whose instants are decision
variables. Switches may carry an instantaneous state reset (jump map) and/or
a state equality that must hold at the switch (switching condition).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class EventSpec:
    """Describes the switch terminating a phase.

    All members are optional: an absent jump map means the state is continuous
    across the switch, an absent jump cost contributes nothing, and an absent
    switching condition leaves the switching instant constrained only by the
    dwell times.

    The switching condition requires the phase dynamics to be partitioned as
    (coordinate, velocity) with the coordinate rows independent of the control,
    and its Jacobian must vanish on the velocity block (relative degree two).
    """

    jump_map: Optional[Callable[[Array], Array]] = None
    jump_jac: Optional[Callable[[Array], Array]] = None
    jump_cost: Optional[Callable[[Array], float]] = None
    jump_cost_grad: Optional[Callable[[Array], Array]] = None
    jump_cost_hess: Optional[Callable[[Array], Array]] = None
    switching_condition: Optional[Callable[[Array], Array]] = None
    switching_condition_jac: Optional[Callable[[Array], Array]] = None
    ne: int = 0

    @property
    def has_jump(self) -> bool:
        return self.jump_map is not None

    @property
    def has_condition(self) -> bool:
        return self.switching_condition is not None

    def apply_jump(self, x: Array) -> Array:
        return np.asarray(self.jump_map(x), dtype=float) if self.jump_map else x.copy()

    def jump_jacobian(self, x: Array) -> Array:
        if self.jump_jac is not None:
            return np.asarray(self.jump_jac(x), dtype=float)
        return np.eye(x.shape[0])


@dataclass(frozen=True)
class PhaseSpec:
    """One phase of the mode sequence: dynamics, costs, constraints, dwell time.

    Required callbacks take a state ``x`` of shape (nx,) and control ``u`` of
    shape (nu,):

    * ``f(x, u) -> (nx,)`` with Jacobians ``f_x -> (nx, nx)``, ``f_u -> (nx, nu)``
    * ``l(x, u) -> float`` with ``l_x, l_u`` gradients and Hessian blocks
      ``l_xx, l_xu, l_uu``
    * optionally ``g(x, u) -> (ng,)`` (convention ``g <= 0``) with Jacobians
      ``g_x, g_u``

    ``f_hess_*`` are the costate-contracted second derivatives of the dynamics
    (``sum_m lam[m] * d2 f_m``); they are only needed in exact-Hessian mode.
    ``*_batch`` variants, when given, evaluate whole (M, nx)/(M, nu) stacks in
    one call and only exist to speed up assembly; results must match the
    pointwise callbacks.
    """

    f: Callable[[Array, Array], Array]
    f_x: Callable[[Array, Array], Array]
    f_u: Callable[[Array, Array], Array]
    l: Callable[[Array, Array], float]
    l_x: Callable[[Array, Array], Array]
    l_u: Callable[[Array, Array], Array]
    l_xx: Callable[[Array, Array], Array]
    l_xu: Callable[[Array, Array], Array]
    l_uu: Callable[[Array, Array], Array]
    min_dwell: float = 0.0
    ng: int = 0
    g: Optional[Callable[[Array, Array], Array]] = None
    g_x: Optional[Callable[[Array, Array], Array]] = None
    g_u: Optional[Callable[[Array, Array], Array]] = None
    f_hess_xx: Optional[Callable[[Array, Array, Array], Array]] = None
    f_hess_xu: Optional[Callable[[Array, Array, Array], Array]] = None
    f_hess_uu: Optional[Callable[[Array, Array, Array], Array]] = None
    exit_event: Optional[EventSpec] = None
    batch: dict = field(default_factory=dict)

    @property
    def has_exact_dynamics_hessians(self) -> bool:
        return self.f_hess_xx is not None

    @property
    def has_event(self) -> bool:
        return self.exit_event is not None


@dataclass(frozen=True)
class SwitchedOCP:
    """Continuous-time switched optimal control problem under a fixed mode order.

    ``phases`` lists the K+1 active subsystems in order; the K switching
    instants between them are decision variables bounded below by the phase
    dwell times. The horizon endpoints are fixed.
    """

    phases: Sequence[PhaseSpec]
    terminal_cost: Callable[[Array], float]
    terminal_cost_grad: Callable[[Array], Array]
    terminal_cost_hess: Callable[[Array], Array]
    t0: float
    tf: float
    nx: int
    nu: int
    x0: Optional[Array] = None

    @property
    def num_switches(self) -> int:
        return len(self.phases) - 1

    @property
    def K(self) -> int:
        return self.num_switches


@dataclass
class Violation:
    phase: Optional[int]
    message: str

    def render(self) -> str:
        where = f"phase {self.phase}" if self.phase is not None else "problem"
        return f"{where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def render(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(v.render() for v in self.violations)


def _probe_points(nx: int, nu: int) -> list[tuple[Array, Array]]:
    # fixed probes keep validate() byte-deterministic
    return [
        (np.zeros(nx), np.zeros(nu)),
        (np.ones(nx), np.ones(nu)),
        (np.linspace(-1.0, 1.0, nx), np.linspace(0.5, -0.5, nu) if nu else np.zeros(0)),
    ]


def validate(ocp: SwitchedOCP) -> ValidationReport:
    """Check the structural invariants of a problem definition.

    An empty report means the problem is accepted by every other operation.
    Violations are reported, never raised.
    """
    report = ValidationReport()
    add = report.violations.append

    if not ocp.phases:
        add(Violation(None, "at least one phase is required"))
        return report
    if not ocp.t0 < ocp.tf:
        add(Violation(None, f"horizon must satisfy t0 < tf, got [{ocp.t0}, {ocp.tf}]"))
    total_dwell = 0.0
    for k, ph in enumerate(ocp.phases):
        if ph.min_dwell < 0:
            add(Violation(k, f"min_dwell must be >= 0, got {ph.min_dwell}"))
        total_dwell += max(ph.min_dwell, 0.0)
        if ph.ng < 0:
            add(Violation(k, f"ng must be >= 0, got {ph.ng}"))
        if ph.ng > 0 and (ph.g is None or ph.g_x is None or ph.g_u is None):
            add(Violation(k, "ng > 0 requires g, g_x and g_u callbacks"))
    if total_dwell > ocp.tf - ocp.t0:
        add(Violation(None, "sum of minimum dwell times exceeds the horizon length"))

    for k, ph in enumerate(ocp.phases):
        _check_phase_shapes(ocp, k, ph, add)
        ev = ph.exit_event
        if ev is None:
            continue
        if k == len(ocp.phases) - 1:
            add(Violation(k, "the last phase cannot carry an exit event"))
            continue
        _check_event(ocp, k, ph, ev, add)
    return report


def _check_phase_shapes(ocp: SwitchedOCP, k: int, ph: PhaseSpec, add) -> None:
    x, u = _probe_points(ocp.nx, ocp.nu)[0]
    try:
        fx = np.asarray(ph.f(x, u), dtype=float)
        jx = np.asarray(ph.f_x(x, u), dtype=float)
        ju = np.asarray(ph.f_u(x, u), dtype=float)
    except Exception as exc:  # reporting operation: never raise
        add(Violation(k, f"dynamics evaluation failed at probe point: {exc!r}"))
        return
    if fx.shape != (ocp.nx,):
        add(Violation(k, f"dynamics must return shape ({ocp.nx},), got {fx.shape}"))
    if jx.shape != (ocp.nx, ocp.nx):
        add(Violation(k, f"state Jacobian must have shape ({ocp.nx}, {ocp.nx}), got {jx.shape}"))
    if ju.shape != (ocp.nx, ocp.nu):
        add(Violation(k, f"control Jacobian must have shape ({ocp.nx}, {ocp.nu}), got {ju.shape}"))
    if ph.ng > 0 and ph.g is not None:
        try:
            gv = np.asarray(ph.g(x, u), dtype=float)
            gxv = np.asarray(ph.g_x(x, u), dtype=float)
            guv = np.asarray(ph.g_u(x, u), dtype=float)
        except Exception as exc:
            add(Violation(k, f"path-constraint evaluation failed at probe point: {exc!r}"))
            return
        if gv.shape != (ph.ng,):
            add(Violation(k, f"g must return shape ({ph.ng},), got {gv.shape}"))
        if gxv.shape != (ph.ng, ocp.nx) or guv.shape != (ph.ng, ocp.nu):
            add(Violation(k, "path-constraint Jacobian shapes inconsistent with (ng, nx, nu)"))


def _check_event(ocp: SwitchedOCP, k: int, ph: PhaseSpec, ev: EventSpec, add) -> None:
    probes = _probe_points(ocp.nx, ocp.nu)
    if ev.has_condition:
        if ev.ne <= 0:
            add(Violation(k, "switching condition requires ne > 0"))
        if ev.switching_condition_jac is None:
            add(Violation(k, "switching condition requires its Jacobian"))
        if ocp.nx % 2 != 0:
            add(Violation(k, "switching condition requires an even state dimension "
                             "(coordinate/velocity partition)"))
            return
        n = ocp.nx // 2
        for x, u in probes:
            try:
                ex = np.asarray(ev.switching_condition_jac(x), dtype=float)
            except Exception as exc:
                add(Violation(k, f"condition Jacobian evaluation failed: {exc!r}"))
                return
            if ex.shape != (ev.ne, ocp.nx):
                add(Violation(k, f"condition Jacobian must have shape ({ev.ne}, {ocp.nx})"))
                return
            if np.any(ex[:, n:] != 0.0):
                add(Violation(k, "condition Jacobian must vanish on the velocity block "
                                 "(relative degree two)"))
                return
        # coordinate rows of the dynamics must not depend on the control
        for x, u in probes:
            ju = np.asarray(ph.f_u(x, u), dtype=float)
            if np.any(ju[:n, :] != 0.0):
                add(Violation(k, "switching condition requires control-free coordinate "
                                 "dynamics (partitioned form)"))
                return
    if ev.has_jump:
        x = probes[0][0]
        try:
            xp = np.asarray(ev.jump_map(x), dtype=float)
            jj = ev.jump_jacobian(x)
        except Exception as exc:
            add(Violation(k, f"jump-map evaluation failed: {exc!r}"))
            return
        if xp.shape != (ocp.nx,):
            add(Violation(k, f"jump map must return shape ({ocp.nx},)"))
        if jj.shape != (ocp.nx, ocp.nx):
            add(Violation(k, f"jump-map Jacobian must have shape ({ocp.nx}, {ocp.nx})"))


@dataclass
class DerivativeReport:
    """Max deviation of each user-supplied derivative from central differences."""

    deviations: dict[str, float] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    def ok(self, tol: float) -> bool:
        return not self.failures and self.max_deviation() <= tol

    def worst(self) -> str:
        if not self.deviations:
            return "no derivatives checked"
        name = max(self.deviations, key=self.deviations.get)
        return f"{name}: {self.deviations[name]:.3e}"


def _central_jac(fun, z: Array, h: float) -> Array:
    z = np.asarray(z, dtype=float)
    cols = []
    for j in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[j] += h
        zm[j] -= h
        cols.append((np.asarray(fun(zp), dtype=float) - np.asarray(fun(zm), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def check_derivatives(ocp: SwitchedOCP, x: Array, u: Array, h: float,
                      lam: Optional[Array] = None) -> DerivativeReport:
    """Compare every user-supplied derivative against central finite differences.

    ``h`` is the difference step (must be positive). Evaluation failures at the
    probe point are recorded per function instead of raised.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if lam is None:
        lam = np.cos(np.arange(ocp.nx) + 1.0)  # fixed, generic contraction vector
    rep = DerivativeReport()

    def record(name, fun):
        try:
            rep.deviations[name] = float(fun())
        except Exception as exc:
            rep.failures[name] = repr(exc)

    for k, ph in enumerate(ocp.phases):
        tag = f"phase{k}"
        record(f"{tag}.f_x", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.f_x(x, u)) - _central_jac(lambda z: ph.f(z, u), x, h))))
        record(f"{tag}.f_u", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.f_u(x, u)) - _central_jac(lambda z: ph.f(x, z), u, h))))
        record(f"{tag}.l_x", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.l_x(x, u)) - _central_jac(lambda z: ph.l(z, u), x, h))))
        record(f"{tag}.l_u", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.l_u(x, u)) - _central_jac(lambda z: ph.l(x, z), u, h))))
        record(f"{tag}.l_xx", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.l_xx(x, u)) - _central_jac(lambda z: ph.l_x(z, u), x, h))))
        record(f"{tag}.l_xu", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.l_xu(x, u)) - _central_jac(lambda z: ph.l_x(x, z), u, h).reshape(ocp.nx, ocp.nu))))
        record(f"{tag}.l_uu", lambda ph=ph: np.max(np.abs(
            np.asarray(ph.l_uu(x, u)) - _central_jac(lambda z: ph.l_u(x, z), u, h))))
        if ph.ng > 0 and ph.g is not None:
            record(f"{tag}.g_x", lambda ph=ph: np.max(np.abs(
                np.asarray(ph.g_x(x, u)) - _central_jac(lambda z: ph.g(z, u), x, h))))
            record(f"{tag}.g_u", lambda ph=ph: np.max(np.abs(
                np.asarray(ph.g_u(x, u)) - _central_jac(lambda z: ph.g(x, z), u, h))))
        if ph.has_exact_dynamics_hessians:
            record(f"{tag}.f_hess_xx", lambda ph=ph: np.max(np.abs(
                np.asarray(ph.f_hess_xx(x, u, lam))
                - _central_jac(lambda z: np.asarray(ph.f_x(z, u)).T @ lam, x, h))))
            record(f"{tag}.f_hess_xu", lambda ph=ph: np.max(np.abs(
                np.asarray(ph.f_hess_xu(x, u, lam))
                - _central_jac(lambda z: np.asarray(ph.f_x(x, z)).T @ lam, u, h).reshape(ocp.nx, ocp.nu))))
            record(f"{tag}.f_hess_uu", lambda ph=ph: np.max(np.abs(
                np.asarray(ph.f_hess_uu(x, u, lam))
                - _central_jac(lambda z: np.asarray(ph.f_u(x, z)).T @ lam, u, h))))
        ev = ph.exit_event
        if ev is None:
            continue
        if ev.has_jump:
            record(f"{tag}.jump_jac", lambda ev=ev: np.max(np.abs(
                ev.jump_jacobian(x) - _central_jac(lambda z: ev.apply_jump(z), x, h))))
        if ev.jump_cost is not None and ev.jump_cost_grad is not None:
            record(f"{tag}.jump_cost_grad", lambda ev=ev: np.max(np.abs(
                np.asarray(ev.jump_cost_grad(x)) - _central_jac(lambda z: ev.jump_cost(z), x, h))))
            if ev.jump_cost_hess is not None:
                record(f"{tag}.jump_cost_hess", lambda ev=ev: np.max(np.abs(
                    np.asarray(ev.jump_cost_hess(x)) - _central_jac(lambda z: ev.jump_cost_grad(z), x, h))))
        if ev.has_condition and ev.switching_condition_jac is not None:
            record(f"{tag}.condition_jac", lambda ev=ev: np.max(np.abs(
                np.asarray(ev.switching_condition_jac(x))
                - _central_jac(lambda z: ev.switching_condition(z), x, h))))

    record("terminal.grad", lambda: np.max(np.abs(
        np.asarray(ocp.terminal_cost_grad(x)) - _central_jac(lambda z: ocp.terminal_cost(z), x, h))))
    record("terminal.hess", lambda: np.max(np.abs(
        np.asarray(ocp.terminal_cost_hess(x)) - _central_jac(lambda z: ocp.terminal_cost_grad(z), x, h))))
    return rep
