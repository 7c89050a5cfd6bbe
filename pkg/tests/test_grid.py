import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hystflow.density import UniformBox
from hystflow.errors import DimensionMismatch
from hystflow.grid import (
    assemble_jacobian,
    assemble_residual,
    boundary_flux,
    diffusion_dissipation,
    element_kappa,
    interval_mesh,
    picard_matrix,
    rectangle_mesh,
    saturation,
    stiffness_matrix,
)
from hystflow.hysteresis import MemoryState, preisach_field
from hystflow.problem import BoundaryValue, Kappa, Problem


def state_of(problem):
    mem = MemoryState.from_initial(problem.memory, problem.grid)
    return mem, preisach_field(mem, problem.density, problem.grid)


def test_interval_mesh_geometry():
    mesh = interval_mesh(0.0, 2.0, 5)
    assert mesh.volume == pytest.approx(2.0)
    np.testing.assert_allclose(mesh.lumped_mass, [0.25, 0.5, 0.5, 0.5, 0.25])
    np.testing.assert_allclose(mesh.centroid, [1.0])
    np.testing.assert_array_equal(mesh.boundary_nodes, [0, 4])


def test_rectangle_mesh_geometry():
    mesh = rectangle_mesh((0.0, 2.0), (0.0, 1.0), 5, 3)
    assert mesh.n_nodes == 15
    assert mesh.lumped_mass.sum() == pytest.approx(2.0)
    assert mesh.segments["bottom"].sum() == pytest.approx(2.0)
    assert mesh.segments["left"].sum() == pytest.approx(1.0)
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0)
    assert mesh.boundary_nodes.size == 12


def test_mesh_csv_tables():
    nodes, conn = interval_mesh(0.0, 1.0, 3).to_csv()
    assert nodes.splitlines() == ["node,x", "0,0", "1,0.5", "2,1"]
    assert conn.splitlines() == ["element,n0,n1", "0,0,1", "1,1,2"]


@pytest.mark.parametrize("mesh", [interval_mesh(0.0, 1.0, 7), rectangle_mesh(nx=4, ny=5)])
def test_stiffness_is_symmetric_positive_semidefinite(mesh):
    kappa_e = np.random.default_rng(0).uniform(0.5, 1.5, mesh.elements.shape[0])
    A = stiffness_matrix(mesh, kappa_e).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    eig = np.linalg.eigvalsh(A)
    assert eig.min() >= -1e-12
    # constants span the kernel
    np.testing.assert_allclose(A @ np.ones(mesh.n_nodes), 0.0, atol=1e-12)
    assert np.sum(eig < 1e-10) == 1


def test_1d_stiffness_entries():
    A = stiffness_matrix(interval_mesh(0.0, 1.0, 3), np.ones(2)).toarray()
    np.testing.assert_allclose(A, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]])


def _linear_problem(n=3, nu=-1.0, b_left=2.0, u_star=0.5):
    mesh = interval_mesh(0.0, 1.0, n)
    return Problem.build(mesh, UniformBox(height=0.0, G_bar=0.4), Lambda=1.0, K=4,
                         kappa=Kappa(1.0, 1.0), nu=[nu], b_star={"left": b_left},
                         u_star=BoundaryValue(u_star))


def test_three_node_residual_by_hand():
    problem = _linear_problem()
    mem, theta = state_of(problem)
    tau = 0.1
    a, b, c = 0.3, -0.2, 0.7
    res = assemble_residual(problem, np.array([a, b, c]), mem, theta, np.zeros(3), tau, 0.0)
    expected = [
        0.25 * a / (1 + tau) + 2 * (a - b) + 1 + 2.0 * (a - 0.5),
        0.5 * b / (1 + tau) + 2 * (b - a) - 1 + 2 * (b - c) + 1,
        0.25 * c / (1 + tau) + 2 * (c - b) - 1,
    ]
    np.testing.assert_allclose(res, expected, atol=1e-14)


def test_hydrostatic_state_has_no_flux():
    problem = _linear_problem(n=9, b_left=0.0)
    mem, theta = state_of(problem)
    x = problem.mesh.coords[:, 0]
    u = 0.2 + x  # grad u + nu = 0
    res = assemble_residual(problem, u, mem, theta, u, 1e9, 0.0)
    np.testing.assert_allclose(res, 0.0, atol=1e-8)


def test_residual_tested_with_one_is_mass_balance(reference_problem):
    problem = reference_problem
    mem, theta = state_of(problem)
    rng = np.random.default_rng(4)
    u = rng.uniform(-0.8, 0.8, problem.mesh.n_nodes)
    v = rng.uniform(-0.3, 0.3, problem.mesh.n_nodes)
    tau, t = 0.05, 0.3
    res = assemble_residual(problem, u, mem, theta, v, tau, t)
    m = problem.mesh.lumped_mass
    th = saturation(problem, mem, u)
    v_new = (v + tau * u) / (1 + tau)
    expected = (m @ (th - theta) + m @ (v_new - v)) / tau \
        + problem.robin_weight @ (u - problem.u_star(t))
    assert res.sum() == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_residual_rejects_wrong_shape(reference_problem):
    mem, theta = state_of(reference_problem)
    with pytest.raises(DimensionMismatch):
        assemble_residual(reference_problem, np.zeros(3), mem, theta, theta, 0.1, 0.0)


def _fd_jacobian(problem, u, mem, theta, v, tau, t, h=1e-7):
    n = u.size
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (assemble_residual(problem, u + e, mem, theta, v, tau, t)
                   - assemble_residual(problem, u - e, mem, theta, v, tau, t)) / (2 * h)
    return J


@pytest.mark.parametrize("fixture", ["reference_problem", "square_problem"])
def test_jacobian_matches_finite_differences(fixture, request):
    problem = request.getfixturevalue(fixture)
    mem, theta = state_of(problem)
    n = problem.mesh.n_nodes
    rng = np.random.default_rng(9)
    u = problem.u0 + rng.uniform(-0.2, 0.2, n)
    v = problem.v0
    J = assemble_jacobian(problem, u, mem, 0.05, 0.1).toarray()
    J_fd = _fd_jacobian(problem, u, mem, theta, v, 0.05, 0.1)
    assert np.max(np.abs(J - J_fd)) <= 1e-5 * np.max(np.abs(J_fd))


def test_frozen_kappa_jacobian_is_symmetric(square_problem):
    mem, _ = state_of(square_problem)
    J = assemble_jacobian(square_problem, square_problem.u0 + 0.1, mem, 0.05,
                          kappa_derivative=False).toarray()
    np.testing.assert_allclose(J, J.T, atol=1e-13)


def test_picard_matrix_is_symmetric_positive_definite(square_problem):
    mem, _ = state_of(square_problem)
    A = picard_matrix(square_problem, square_problem.u0, mem, 0.05, 0.3).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-13)
    assert np.linalg.eigvalsh(A).min() > 0


def test_boundary_flux_robin_value():
    problem = _linear_problem(n=5, b_left=2.0, u_star=0.5)
    flux, measure = boundary_flux(problem, np.full(5, 0.8), 0.0)
    np.testing.assert_allclose(flux, [2.0 * 0.3, 0.0])
    np.testing.assert_allclose(measure, [1.0, 1.0])


def test_boundary_flux_in_2d_uses_segment_density(square_problem):
    flux, measure = boundary_flux(square_problem, np.full(square_problem.mesh.n_nodes, 0.7), 0.0)
    # total Robin flux: sum over segments of b* times segment length times (u - u*)
    expected = (1.0 * 1.0 + 0.5 * 1.0) * 0.5
    assert flux @ measure == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
def test_diffusion_dissipation_nonnegative(values):
    problem = _linear_problem(n=6, nu=-1.0)
    _, theta = state_of(problem)
    assert diffusion_dissipation(problem, np.array(values), theta) >= 0.0


def test_element_kappa_within_bounds(reference_problem):
    theta = np.linspace(-0.5, 1.5, reference_problem.mesh.n_nodes)
    k = element_kappa(reference_problem, theta)
    assert k.min() >= 0.5 and k.max() <= 1.5
