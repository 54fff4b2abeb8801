"""Built-in example problems used by the CLI and the test suite."""
from __future__ import annotations

import numpy as np

from .model import EventSpec, PhaseSpec, SwitchedOCP

X_REF = np.array([1.0, -1.0])
X_INIT = np.array([2.0, 3.0])


def _quad_cost_callbacks():
    """Tracking stage cost 0.5*|x - x_ref|^2 + |u|^2 with its derivatives."""
    return dict(
        l=lambda x, u: 0.5 * float((x - X_REF) @ (x - X_REF)) + float(u @ u),
        l_x=lambda x, u: x - X_REF,
        l_u=lambda x, u: 2.0 * u,
        l_xx=lambda x, u: np.eye(2),
        l_xu=lambda x, u: np.zeros((2, 1)),
        l_uu=lambda x, u: 2.0 * np.eye(1),
        batch_cost=dict(
            l=lambda X, U: 0.5 * np.sum((X - X_REF) ** 2, axis=1) + np.sum(U ** 2, axis=1),
            l_x=lambda X, U: X - X_REF,
            l_u=lambda X, U: 2.0 * U,
            l_xx=lambda X, U: np.broadcast_to(np.eye(2), (X.shape[0], 2, 2)).copy(),
            l_xu=lambda X, U: np.zeros((X.shape[0], 2, 1)),
            l_uu=lambda X, U: np.broadcast_to(2.0 * np.eye(1), (X.shape[0], 1, 1)).copy(),
        ),
    )


def _three_subsystem_phase(mode: int, min_dwell: float) -> PhaseSpec:
    cost = _quad_cost_callbacks()

    if mode == 0:
        f = lambda x, u: np.array([x[0] + u[0] * np.sin(x[0]),
                                   -x[1] - u[0] * np.cos(x[1])])
        f_x = lambda x, u: np.array([[1.0 + u[0] * np.cos(x[0]), 0.0],
                                     [0.0, -1.0 + u[0] * np.sin(x[1])]])
        f_u = lambda x, u: np.array([[np.sin(x[0])], [-np.cos(x[1])]])

        def f_batch(X, U):
            return np.stack([X[:, 0] + U[:, 0] * np.sin(X[:, 0]),
                             -X[:, 1] - U[:, 0] * np.cos(X[:, 1])], axis=1)

        def fx_batch(X, U):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 0] = 1.0 + U[:, 0] * np.cos(X[:, 0])
            out[:, 1, 1] = -1.0 + U[:, 0] * np.sin(X[:, 1])
            return out

        def fu_batch(X, U):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = np.sin(X[:, 0])
            out[:, 1, 0] = -np.cos(X[:, 1])
            return out

        def hxx(x, u, lam):
            return np.diag([lam[0] * (-u[0] * np.sin(x[0])),
                            lam[1] * (u[0] * np.cos(x[1]))])

        def hxu(x, u, lam):
            return np.array([[lam[0] * np.cos(x[0])], [lam[1] * np.sin(x[1])]])

        def hxx_batch(X, U, L):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 0] = L[:, 0] * (-U[:, 0] * np.sin(X[:, 0]))
            out[:, 1, 1] = L[:, 1] * (U[:, 0] * np.cos(X[:, 1]))
            return out

        def hxu_batch(X, U, L):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = L[:, 0] * np.cos(X[:, 0])
            out[:, 1, 0] = L[:, 1] * np.sin(X[:, 1])
            return out
    elif mode == 1:
        f = lambda x, u: np.array([x[1] + u[0] * np.sin(x[1]),
                                   -x[0] - u[0] * np.cos(x[0])])
        f_x = lambda x, u: np.array([[0.0, 1.0 + u[0] * np.cos(x[1])],
                                     [-1.0 + u[0] * np.sin(x[0]), 0.0]])
        f_u = lambda x, u: np.array([[np.sin(x[1])], [-np.cos(x[0])]])

        def f_batch(X, U):
            return np.stack([X[:, 1] + U[:, 0] * np.sin(X[:, 1]),
                             -X[:, 0] - U[:, 0] * np.cos(X[:, 0])], axis=1)

        def fx_batch(X, U):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 1] = 1.0 + U[:, 0] * np.cos(X[:, 1])
            out[:, 1, 0] = -1.0 + U[:, 0] * np.sin(X[:, 0])
            return out

        def fu_batch(X, U):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = np.sin(X[:, 1])
            out[:, 1, 0] = -np.cos(X[:, 0])
            return out

        def hxx(x, u, lam):
            return np.diag([lam[1] * (u[0] * np.cos(x[0])),
                            lam[0] * (-u[0] * np.sin(x[1]))])

        def hxu(x, u, lam):
            return np.array([[lam[1] * np.sin(x[0])], [lam[0] * np.cos(x[1])]])

        def hxx_batch(X, U, L):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 0] = L[:, 1] * (U[:, 0] * np.cos(X[:, 0]))
            out[:, 1, 1] = L[:, 0] * (-U[:, 0] * np.sin(X[:, 1]))
            return out

        def hxu_batch(X, U, L):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = L[:, 1] * np.sin(X[:, 0])
            out[:, 1, 0] = L[:, 0] * np.cos(X[:, 1])
            return out
    else:
        f = lambda x, u: np.array([-x[0] - u[0] * np.sin(x[0]),
                                   x[1] + u[0] * np.cos(x[1])])
        f_x = lambda x, u: np.array([[-1.0 - u[0] * np.cos(x[0]), 0.0],
                                     [0.0, 1.0 - u[0] * np.sin(x[1])]])
        f_u = lambda x, u: np.array([[-np.sin(x[0])], [np.cos(x[1])]])

        def f_batch(X, U):
            return np.stack([-X[:, 0] - U[:, 0] * np.sin(X[:, 0]),
                             X[:, 1] + U[:, 0] * np.cos(X[:, 1])], axis=1)

        def fx_batch(X, U):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 0] = -1.0 - U[:, 0] * np.cos(X[:, 0])
            out[:, 1, 1] = 1.0 - U[:, 0] * np.sin(X[:, 1])
            return out

        def fu_batch(X, U):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = -np.sin(X[:, 0])
            out[:, 1, 0] = np.cos(X[:, 1])
            return out

        def hxx(x, u, lam):
            return np.diag([lam[0] * (u[0] * np.sin(x[0])),
                            lam[1] * (-u[0] * np.cos(x[1]))])

        def hxu(x, u, lam):
            return np.array([[-lam[0] * np.cos(x[0])], [-lam[1] * np.sin(x[1])]])

        def hxx_batch(X, U, L):
            out = np.zeros((X.shape[0], 2, 2))
            out[:, 0, 0] = L[:, 0] * (U[:, 0] * np.sin(X[:, 0]))
            out[:, 1, 1] = L[:, 1] * (-U[:, 0] * np.cos(X[:, 1]))
            return out

        def hxu_batch(X, U, L):
            out = np.empty((X.shape[0], 2, 1))
            out[:, 0, 0] = -L[:, 0] * np.cos(X[:, 0])
            out[:, 1, 0] = -L[:, 1] * np.sin(X[:, 1])
            return out

    batch = dict(f=f_batch, f_x=fx_batch, f_u=fu_batch,
                 f_hess_xx=hxx_batch, f_hess_xu=hxu_batch,
                 f_hess_uu=lambda X, U, L: np.zeros((X.shape[0], 1, 1)))
    batch.update(cost.pop("batch_cost"))
    return PhaseSpec(
        f=f, f_x=f_x, f_u=f_u,
        f_hess_xx=hxx, f_hess_xu=hxu,
        f_hess_uu=lambda x, u, lam: np.zeros((1, 1)),
        min_dwell=min_dwell, batch=batch, **cost)


def three_subsystem(min_dwell: float = 0.01) -> SwitchedOCP:
    """Three-mode nonlinear benchmark: fixed mode order 1 -> 2 -> 3 on [0, 3]."""
    return SwitchedOCP(
        phases=[_three_subsystem_phase(m, min_dwell) for m in range(3)],
        terminal_cost=lambda x: 0.5 * float((x - X_REF) @ (x - X_REF)),
        terminal_cost_grad=lambda x: x - X_REF,
        terminal_cost_hess=lambda x: np.eye(2),
        t0=0.0, tf=3.0, nx=2, nu=1, x0=X_INIT.copy(),
    )


def three_subsystem_split(N: int) -> tuple[int, int, int]:
    """Near-equal three-way split, first phases taking the remainder."""
    base, rem = divmod(N, 3)
    return tuple(base + (1 if m < rem else 0) for m in range(3))


THREE_SUBSYSTEM_T0 = (1.0, 2.0)


def bouncing_mass(gamma: float = 0.5, g_grav: float = 2.0,
                  u_max: float = 10.0) -> SwitchedOCP:
    """Point mass falling under gravity with an impact at height zero.

    The touch-down switch carries both a switching condition (height reaches
    zero) and a state jump (velocity reversal damped by ``gamma``), exercising
    the pre-switch stages of the solver. Numbers are test fixtures.
    """
    flight = PhaseSpec(
        f=lambda x, u: np.array([x[1], u[0] - g_grav]),
        f_x=lambda x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
        f_u=lambda x, u: np.array([[0.0], [1.0]]),
        f_hess_xx=lambda x, u, lam: np.zeros((2, 2)),
        f_hess_xu=lambda x, u, lam: np.zeros((2, 1)),
        f_hess_uu=lambda x, u, lam: np.zeros((1, 1)),
        l=lambda x, u: 0.05 * float(x @ x) + 0.5 * float(u @ u),
        l_x=lambda x, u: 0.1 * x,
        l_u=lambda x, u: u,
        l_xx=lambda x, u: 0.1 * np.eye(2),
        l_xu=lambda x, u: np.zeros((2, 1)),
        l_uu=lambda x, u: np.eye(1),
        ng=2,
        g=lambda x, u: np.array([u[0] - u_max, -u[0] - u_max]),
        g_x=lambda x, u: np.zeros((2, 2)),
        g_u=lambda x, u: np.array([[1.0], [-1.0]]),
        min_dwell=0.1,
        exit_event=EventSpec(
            jump_map=lambda x: np.array([x[0], -gamma * x[1]]),
            jump_jac=lambda x: np.array([[1.0, 0.0], [0.0, -gamma]]),
            switching_condition=lambda x: np.array([x[0]]),
            switching_condition_jac=lambda x: np.array([[1.0, 0.0]]),
            ne=1,
        ),
    )
    ground = PhaseSpec(
        f=lambda x, u: np.array([x[1], u[0]]),
        f_x=lambda x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
        f_u=lambda x, u: np.array([[0.0], [1.0]]),
        f_hess_xx=lambda x, u, lam: np.zeros((2, 2)),
        f_hess_xu=lambda x, u, lam: np.zeros((2, 1)),
        f_hess_uu=lambda x, u, lam: np.zeros((1, 1)),
        l=lambda x, u: 0.5 * float(x @ x) + 0.5 * float(u @ u),
        l_x=lambda x, u: x,
        l_u=lambda x, u: u,
        l_xx=lambda x, u: np.eye(2),
        l_xu=lambda x, u: np.zeros((2, 1)),
        l_uu=lambda x, u: np.eye(1),
        ng=2,
        g=lambda x, u: np.array([u[0] - u_max, -u[0] - u_max]),
        g_x=lambda x, u: np.zeros((2, 2)),
        g_u=lambda x, u: np.array([[1.0], [-1.0]]),
        min_dwell=0.1,
    )
    return SwitchedOCP(
        phases=[flight, ground],
        terminal_cost=lambda x: float(x @ x),
        terminal_cost_grad=lambda x: 2.0 * x,
        terminal_cost_hess=lambda x: 2.0 * np.eye(2),
        t0=0.0, tf=2.0, nx=2, nu=1, x0=np.array([1.0, 0.0]),
    )


BOUNCING_MASS_T0 = (1.0,)
BOUNCING_MASS_SPLIT = (5, 5)
