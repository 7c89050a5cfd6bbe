"""Implicit time stepping: one nonlinear elliptic solve per step.

Each step solves for the pressure ``u_i`` with damped Newton, falling back to
a fixed-point iteration with a constant hysteresis slope when the line
search stalls; ``v_i`` then follows explicitly and the play memory is
committed.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import spsolve

from .diagnostics import bv_log_total, step_report
from .errors import StepFailure
from .grid import assemble_jacobian, assemble_residual, picard_matrix
from .hysteresis import MemoryState, preisach_field, update_memory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepperConfig:
    tau: float
    T: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 40
    line_search_shrink: float = 0.5
    picard_fallback: bool = True
    picard_max_iter: int = 400
    fd_step: float = 1e-6
    retry_halving: bool = False
    kappa_derivative: bool = True

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("time horizon T must be positive")
        if not 0 < self.tau <= self.T:
            raise ValueError(f"time step must lie in (0, T], got {self.tau}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        n = round(self.T / self.tau)
        if abs(n * self.tau - self.T) > 1e-9 * self.T:
            raise ValueError(f"T/tau = {self.T / self.tau} is not an integer")

    @property
    def n_steps(self):
        return round(self.T / self.tau)


@dataclass(eq=False)
class SimulationState:
    step: int
    t: float
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    memory: MemoryState

    def copy(self):
        return SimulationState(self.step, self.t, self.u.copy(), self.v.copy(),
                               self.theta.copy(), self.memory.copy())


_CHECKPOINT_MAGIC = b"HYSTCKP1"


def save_checkpoint(state, path):
    """Write ``state`` in a little-endian binary layout.

    magic(8) | step u64 | t f64 | n u64 | u, v, theta f64[n] | memory blob
    """
    n = state.u.size
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC + struct.pack("<QdQ", state.step, state.t, n))
        for arr in (state.u, state.v, state.theta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(state.memory.to_bytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    step, t, n = struct.unpack("<QdQ", data[8:32])
    fields_ = []
    pos = 32
    for _ in range(3):
        fields_.append(np.frombuffer(data[pos:pos + 8 * n], dtype="<f8").astype(float))
        pos += 8 * n
    memory = MemoryState.from_bytes(data[pos:])
    return SimulationState(int(step), float(t), *fields_, memory)


def initial_state(problem):
    memory = MemoryState.from_initial(problem.memory, problem.grid)
    theta = preisach_field(memory, problem.density, problem.grid)
    return SimulationState(0, 0.0, problem.u0.copy(), problem.v0.copy(), theta, memory)


def _slope_bound(problem, u):
    grid = problem.grid
    phi_max = float(np.max(problem.density.modulation())) * float(
        problem.density.phi_sup(grid.r_nodes) @ grid.r_weights)
    g_max = float(np.max(problem.transform.derivative(u)))
    return max(phi_max * g_max, 0.0)


def _newton(problem, state, config, tau, t):
    """Return ``(u, iterations, residual_norm)`` for the step ending at time ``t``."""
    memory = state.memory

    def residual(u):
        return assemble_residual(problem, u, memory, state.theta, state.v, tau, t)

    u = state.u.copy()
    res = residual(u)
    norm = float(np.max(np.abs(res)))
    newton_left = config.newton_max_iter
    picard_left = config.picard_max_iter if config.picard_fallback else 0
    iterations = 0
    mode = "newton"
    stalled = 0
    while norm > config.newton_tol:
        if mode == "newton":
            if newton_left == 0:
                if picard_left == 0:
                    break
                mode = "picard"
                continue
            newton_left -= 1
            jac = assemble_jacobian(problem, u, memory, tau, t, config.fd_step,
                                    config.kappa_derivative)
            du = spsolve(jac.tocsc(), -res)
            r2 = float(np.linalg.norm(res))
            lam = 1.0
            accepted = False
            while lam > 1e-6:
                trial = u + lam * du
                trial_res = residual(trial)
                if np.linalg.norm(trial_res) <= (1.0 - 1e-4 * lam) * r2:
                    accepted = True
                    break
                lam *= config.line_search_shrink
            iterations += 1
            if accepted:
                u, res = trial, trial_res
                norm = float(np.max(np.abs(res)))
                continue
            if picard_left == 0:
                break
            mode, stalled = "picard", 0
        else:
            if picard_left == 0:
                if newton_left == 0:
                    break
                mode = "newton"
                continue
            picard_left -= 1
            mat = picard_matrix(problem, u, memory, tau, _slope_bound(problem, u))
            u = u + spsolve(mat.tocsc(), -res)
            res = residual(u)
            norm = float(np.max(np.abs(res)))
            iterations += 1
            stalled += 1
            if stalled >= 8 and newton_left > 0:
                mode = "newton"
    if norm > config.newton_tol:
        raise StepFailure("nonlinear solve did not converge", norm, state.step + 1)
    return u, iterations, norm


def _advance(problem, state, u, tau, t):
    memory = update_memory(state.memory, problem.transform(u), problem.grid)
    theta = preisach_field(memory, problem.density, problem.grid)
    v = (state.v + tau * u) / (1.0 + tau)
    return SimulationState(state.step + 1, t, u, v, theta, memory)


def solve_step(state, problem, config, tau=None):
    """Advance ``state`` by one implicit step; returns ``(new_state, iterations, residual)``."""
    tau = config.tau if tau is None else tau
    t = (state.step + 1) * tau if tau == config.tau else state.t + tau
    try:
        u, its, norm = _newton(problem, state, config, tau, t)
    except StepFailure as exc:
        if not config.retry_halving:
            raise
        log.warning("step %d failed (%s); retrying with two half steps", state.step + 1, exc)
        half = tau / 2.0
        mid, its1, _ = solve_step(state, problem, replace(config, retry_halving=False), half)
        mid = replace(mid, step=state.step)
        end, its2, norm = solve_step(mid, problem, replace(config, retry_halving=False), half)
        return replace(end, step=state.step + 1, t=t), its1 + its2, norm
    return _advance(problem, state, u, tau, t), its, norm


@dataclass
class RunResult:
    reports: list
    final: SimulationState
    trajectory: list = field(default_factory=list)


def run(problem, config, report_sink=None, on_step=None, keep_trajectory=True, start=None):
    """Iterate the scheme up to ``T``; ``start`` resumes from a checkpointed state."""
    state = initial_state(problem) if start is None else start.copy()
    trajectory = [state] if keep_trajectory else []
    reports = []
    for _ in range(state.step, config.n_steps):
        try:
            new, its, norm = solve_step(state, problem, config)
        except StepFailure as exc:
            exc.step = state.step + 1
            raise
        report = step_report(state, new, problem, config.tau, config.newton_tol, its, norm)
        reports.append(report)
        if report_sink is not None:
            report_sink(report)
        if on_step is not None:
            on_step(new)
        if keep_trajectory:
            trajectory.append(new)
        if new.u.size and np.max(np.abs(problem.transform(new.u))) > problem.grid.Lambda:
            log.warning("step %d: |u| exceeds the memory bound Lambda=%g", new.step,
                        problem.grid.Lambda)
        state = new
    return RunResult(reports, state, trajectory)


@dataclass
class SweepRow:
    tau: float
    n_steps: int
    max_sup_u: float
    max_sup_v: float
    max_sup_theta: float
    bv_log_total: float
    total_dissipation: float
    l2_distance: float


def l2_distance(problem, a, b):
    d = np.asarray(a) - np.asarray(b)
    return float(np.sqrt(problem.mesh.lumped_mass @ (d * d)))


def tau_sweep(problem, config, tau_list):
    """Run the same problem at each step size and compare against the finest one."""
    results = {}
    for tau in tau_list:
        results[tau] = run(problem, replace(config, tau=tau))
    finest = min(tau_list)
    reference = results[finest].final.u
    rows = []
    for tau in tau_list:
        res = results[tau]
        traj = res.trajectory
        rows.append(SweepRow(
            tau=tau,
            n_steps=len(res.reports),
            max_sup_u=max(float(np.max(np.abs(s.u))) for s in traj),
            max_sup_v=max(float(np.max(np.abs(s.v))) for s in traj),
            max_sup_theta=max(float(np.max(np.abs(s.theta))) for s in traj),
            bv_log_total=bv_log_total([s.u for s in traj], tau, problem.mesh.lumped_mass),
            total_dissipation=sum(r.dissipation_hyst + r.dissipation_visc + r.dissipation_diff
                                  for r in res.reports),
            l2_distance=l2_distance(problem, res.final.u, reference),
        ))
    return rows
