import numpy as np
import pytest
from dataclasses import replace
from scipy.optimize import brentq

from hystflow.density import DecayFamily
from hystflow.errors import StepFailure
from hystflow.grid import interval_mesh, saturation
from hystflow.problem import BoundaryValue, Kappa, Problem
from hystflow.stepper import (
    StepperConfig,
    initial_state,
    load_checkpoint,
    run,
    save_checkpoint,
    solve_step,
    tau_sweep,
)


def test_config_validation():
    assert StepperConfig(0.01, 1.0).n_steps == 100
    with pytest.raises(ValueError):
        StepperConfig(0.3, 1.0)
    with pytest.raises(ValueError):
        StepperConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        StepperConfig(0.1, 1.0, line_search_shrink=1.0)


def _two_node(u0=0.1, b=1.5, u_star=0.6):
    mesh = interval_mesh(0.0, 1.0, 2)
    return Problem.build(mesh, DecayFamily(4.0, 0.5), Lambda=2.0, K=64, u0=u0, v0=-0.2,
                         kappa=Kappa(0.5, 1.5), b_star={"left": b, "right": b},
                         u_star=BoundaryValue(u_star))


def test_uniform_two_node_step_matches_scalar_bisection():
    problem = _two_node()
    config = StepperConfig(0.1, 1.0)
    state = initial_state(problem)
    new, its, norm = solve_step(state, problem, config)
    m, tau = 0.5, 0.1

    def scalar(u):
        th = saturation(problem, state.memory, np.array([u, u]))[0]
        return m * (th - state.theta[0]) / tau + m * (u - state.v[0]) / (1 + tau) + 1.5 * (u - 0.6)

    u_ref = brentq(scalar, -2.0, 2.0, xtol=1e-15)
    np.testing.assert_allclose(new.u, u_ref, atol=1e-10)
    assert norm <= config.newton_tol


def test_v_recursion_and_time():
    problem = _two_node()
    config = StepperConfig(0.1, 0.3)
    result = run(problem, config)
    states = result.trajectory
    assert [s.step for s in states] == [0, 1, 2, 3]
    np.testing.assert_allclose([s.t for s in states], [0.0, 0.1, 0.2, 0.3])
    for a, b in zip(states[:-1], states[1:]):
        np.testing.assert_allclose(b.v, (a.v + 0.1 * b.u) / 1.1, rtol=0, atol=1e-15)


def test_hydrostatic_equilibrium_is_steady():
    mesh = interval_mesh(0.0, 1.0, 17)
    x = mesh.coords[:, 0]
    u0 = x - 0.5
    problem = Problem.build(mesh, DecayFamily(4.0, 0.5), u0=u0, v0=u0, kappa=Kappa(0.5, 1.5),
                            nu=[-1.0], b_star={"left": 1.0}, u_star=BoundaryValue(-0.5))
    result = run(problem, StepperConfig(0.1, 1.0))
    np.testing.assert_allclose(result.final.u, u0, atol=1e-10)
    np.testing.assert_allclose(result.final.v, u0, atol=1e-10)


def test_pressure_relaxes_to_exterior_value():
    mesh = interval_mesh(0.0, 1.0, 9)
    problem = Problem.build(mesh, DecayFamily(4.0, 0.5), u0=0.0, kappa=Kappa(1.0, 1.0),
                            b_star={"left": 5.0, "right": 5.0}, u_star=BoundaryValue(0.4))
    result = run(problem, StepperConfig(0.5, 40.0), keep_trajectory=False)
    np.testing.assert_allclose(result.final.u, 0.4, atol=1e-6)
    np.testing.assert_allclose(result.final.v, 0.4, atol=1e-6)


def test_solver_failure_raises_with_step():
    problem = _two_node()
    config = StepperConfig(0.1, 1.0, newton_tol=1e-300, newton_max_iter=2, picard_fallback=False)
    with pytest.raises(StepFailure) as err:
        run(problem, config)
    assert err.value.step == 1


def test_halving_retry_reaches_the_same_time(monkeypatch):
    import hystflow.stepper as stepper

    problem = _two_node()
    real = stepper._newton

    def flaky(problem, state, config, tau, t):
        if tau > 0.075:
            raise StepFailure("forced", 1.0, state.step + 1)
        return real(problem, state, config, tau, t)

    monkeypatch.setattr(stepper, "_newton", flaky)
    config = StepperConfig(0.1, 1.0, retry_halving=True)
    state = initial_state(problem)
    new, _, _ = solve_step(state, problem, config)
    assert new.step == 1 and new.t == pytest.approx(0.1)
    half = replace(config, tau=0.05, retry_halving=False)
    a, _, _ = solve_step(state, problem, half)
    b, _, _ = solve_step(a, problem, half)
    np.testing.assert_array_equal(new.u, b.u)
    with pytest.raises(StepFailure):
        solve_step(state, problem, replace(config, retry_halving=False))


def test_picard_fallback_converges(reference_problem):
    config = StepperConfig(0.05, 0.1, newton_max_iter=0, picard_max_iter=2000, newton_tol=1e-9)
    result = run(reference_problem, config)
    newton = run(reference_problem, StepperConfig(0.05, 0.1, newton_tol=1e-9))
    np.testing.assert_allclose(result.final.u, newton.final.u, atol=1e-7)


def test_restart_is_bit_exact(reference_problem, tmp_path):
    config = StepperConfig(0.05, 0.5)
    full = run(reference_problem, config)
    mid = full.trajectory[4]
    path = tmp_path / "ckpt.bin"
    save_checkpoint(mid, path)
    loaded = load_checkpoint(path)
    assert loaded.step == 4 and loaded.t == mid.t
    assert loaded.memory == mid.memory
    resumed = run(reference_problem, config, start=loaded)
    assert len(resumed.reports) == 6
    assert np.array_equal(resumed.final.u, full.final.u)
    assert resumed.final.memory == full.final.memory


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_tau_sweep_rows(reference_problem):
    rows = tau_sweep(reference_problem, StepperConfig(0.1, 0.2), [0.1, 0.05])
    assert [r.n_steps for r in rows] == [2, 4]
    assert rows[1].l2_distance == 0.0
    assert rows[0].l2_distance > 0.0


def test_memory_committed_once_per_step(reference_problem):
    state = initial_state(reference_problem)
    saved = state.memory.copy()
    solve_step(state, reference_problem, StepperConfig(0.05, 0.1))
    assert state.memory == saved


def test_two_dimensional_run(square_problem):
    result = run(square_problem, StepperConfig(0.05, 0.2))
    assert len(result.reports) == 4
    assert all(r.energy_ok for r in result.reports)
    assert np.all(np.isfinite(result.final.u))
