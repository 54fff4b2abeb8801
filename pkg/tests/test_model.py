import dataclasses

import numpy as np
import pytest

from swocp import model, problems


def test_validate_accepts_builtin_problems():
    assert model.validate(problems.three_subsystem()).ok
    assert model.validate(problems.bouncing_mass()).ok


def test_validate_flags_negative_dwell():
    ocp = problems.three_subsystem()
    phases = list(ocp.phases)
    phases[2] = dataclasses.replace(phases[2], min_dwell=-0.1)
    bad = dataclasses.replace(ocp, phases=phases)
    rep = model.validate(bad)
    assert not rep.ok
    hits = [v for v in rep.violations if "min_dwell" in v.message]
    assert len(hits) == 1 and hits[0].phase == 2


def test_validate_accepts_benchmark_dwell_setup():
    # dwell (0.01, 0.01, 0.01) on a 3-second horizon
    rep = model.validate(problems.three_subsystem(min_dwell=0.01))
    assert rep.ok and rep.render() == "ok"


def test_validate_flags_velocity_block_in_condition_jacobian():
    ocp = problems.bouncing_mass()
    phases = list(ocp.phases)
    ev = dataclasses.replace(
        phases[0].exit_event,
        switching_condition_jac=lambda x: np.array([[1.0, 0.5]]))
    phases[0] = dataclasses.replace(phases[0], exit_event=ev)
    rep = model.validate(dataclasses.replace(ocp, phases=phases))
    assert any("velocity block" in v.message for v in rep.violations)


def test_validate_flags_excess_total_dwell():
    rep = model.validate(problems.three_subsystem(min_dwell=1.5))
    assert any("dwell times exceeds" in v.message for v in rep.violations)


def test_validate_is_deterministic():
    ocp = problems.three_subsystem(min_dwell=-0.5)
    assert model.validate(ocp).render() == model.validate(ocp).render()


def test_check_derivatives_benchmark_probe():
    ocp = problems.three_subsystem()
    rep = model.check_derivatives(ocp, np.array([2.0, 3.0]), np.array([0.0]), h=1e-6)
    assert not rep.failures
    assert rep.max_deviation() <= 1e-6


def test_check_derivatives_exact_linear_case():
    from conftest import scalar_ocp

    rep = model.check_derivatives(scalar_ocp(), np.array([0.3]), np.array([-0.7]), h=1e-5)
    assert not rep.failures
    assert rep.deviations["phase0.f_u"] <= 1e-10
    assert rep.deviations["phase0.f_x"] <= 1e-10


def test_check_derivatives_flags_injected_fault():
    ocp = problems.three_subsystem()
    phases = list(ocp.phases)
    phases[0] = dataclasses.replace(
        phases[0], f_u=lambda x, u: np.array([[np.sin(x[0]) + 0.5], [-np.cos(x[1])]]))
    bad = dataclasses.replace(ocp, phases=phases)
    rep = model.check_derivatives(bad, np.array([2.0, 3.0]), np.array([0.0]), h=1e-6)
    assert rep.deviations["phase0.f_u"] >= 0.1
    assert not rep.ok(1e-5)


def test_check_derivatives_requires_positive_step():
    with pytest.raises(ValueError):
        model.check_derivatives(problems.three_subsystem(),
                                np.zeros(2), np.zeros(1), h=0.0)


@pytest.mark.parametrize("builder", [problems.three_subsystem, problems.bouncing_mass])
def test_random_probe_points_pass(builder):
    # accepted problems pass the derivative check at 10 random probe points
    ocp = builder()
    rng = np.random.default_rng(42)
    for _ in range(10):
        x = rng.uniform(-1.5, 1.5, size=ocp.nx)
        u = rng.uniform(-1.0, 1.0, size=ocp.nu)
        rep = model.check_derivatives(ocp, x, u, h=1e-6)
        assert rep.ok(1e-5), rep.worst()


def test_batch_callbacks_match_pointwise():
    ocp = problems.three_subsystem()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 2))
    U = rng.standard_normal((7, 1))
    L = rng.standard_normal((7, 2))
    for k, ph in enumerate(ocp.phases):
        for key in ("f", "f_x", "f_u", "l", "l_x", "l_u", "l_xx", "l_xu", "l_uu"):
            batch = np.asarray(ph.batch[key](X, U), dtype=float)
            for j in range(X.shape[0]):
                point = np.asarray(getattr(ph, key)(X[j], U[j]), dtype=float)
                assert np.allclose(batch[j], point, atol=1e-14), (k, key)
        for key in ("f_hess_xx", "f_hess_xu", "f_hess_uu"):
            batch = np.asarray(ph.batch[key](X, U, L), dtype=float)
            for j in range(X.shape[0]):
                point = np.asarray(getattr(ph, key)(X[j], U[j], L[j]), dtype=float)
                assert np.allclose(batch[j], point, atol=1e-14), (k, key)
