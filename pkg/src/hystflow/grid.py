"""Structured meshes and the weak-form assembly of the per-step elliptic problem.

Time-derivative and hysteresis terms use the lumped (nodal) mass, so the
saturation is a nodal quantity; permeability is constant per element and
evaluated from the element average of the nodal saturation.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, ScenarioError
from .hysteresis import trial_field

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(eq=False)
class Mesh:
    dim: int
    coords: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    normals: np.ndarray
    segments: dict
    lumped_mass: np.ndarray = None
    boundary_measure: np.ndarray = None

    def __post_init__(self):
        self._element_data()
        if self.lumped_mass is None:
            n = self.coords.shape[0]
            self.lumped_mass = np.zeros(n)
            share = self.measures[:, None] / self.elements.shape[1]
            np.add.at(self.lumped_mass, self.elements, np.broadcast_to(share, self.elements.shape))
        total = sum(self.segments.values())
        self.boundary_measure = total[self.boundary_nodes]

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def volume(self):
        return float(self.measures.sum())

    @property
    def centroid(self):
        return (self.measures @ self.element_centers) / self.volume

    def _element_data(self):
        """Unit-coefficient stiffness, gradient integrals and quadrature gradients."""
        xe = self.coords[self.elements]
        if self.dim == 1:
            h = xe[:, 1, 0] - xe[:, 0, 0]
            if np.any(h <= 0):
                raise ScenarioError("mesh", "non-positive element length")
            dn = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, None, :, None]
            weights = h[:, None]
            self.measures = h
        else:
            hx = xe[:, 1, 0] - xe[:, 0, 0]
            hy = xe[:, 3, 1] - xe[:, 0, 1]
            if np.any(hx <= 0) or np.any(hy <= 0):
                raise ScenarioError("mesh", "non-positive element area")
            qs, qt = np.meshgrid(_GAUSS, _GAUSS, indexing="ij")
            qs, qt = qs.ravel(), qt.ravel()
            # reference nodes (-1,-1), (1,-1), (1,1), (-1,1)
            sa = np.array([-1.0, 1.0, 1.0, -1.0])
            ta = np.array([-1.0, -1.0, 1.0, 1.0])
            dns = 0.25 * sa[None, :] * (1.0 + ta[None, :] * qt[:, None])
            dnt = 0.25 * ta[None, :] * (1.0 + sa[None, :] * qs[:, None])
            dn = np.empty((xe.shape[0], 4, 4, 2))
            dn[..., 0] = dns[None] * (2.0 / hx)[:, None, None]
            dn[..., 1] = dnt[None] * (2.0 / hy)[:, None, None]
            weights = np.repeat((hx * hy / 4.0)[:, None], 4, axis=1)
            self.measures = hx * hy
        self.quad_grad = dn
        self.quad_weights = weights
        self.unit_stiffness = np.einsum("eq,eqad,eqbd->eab", weights, dn, dn)
        self.grad_integrals = np.einsum("eq,eqad->ead", weights, dn)
        self.element_centers = xe.mean(axis=1)

    def to_csv(self):
        """Node table and connectivity table as CSV strings."""
        nodes = io.StringIO()
        axes = ["x", "y"][: self.dim]
        nodes.write("node," + ",".join(axes) + "\n")
        for i, c in enumerate(self.coords):
            nodes.write(f"{i}," + ",".join(f"{v:.17g}" for v in c) + "\n")
        conn = io.StringIO()
        conn.write("element," + ",".join(f"n{k}" for k in range(self.elements.shape[1])) + "\n")
        for e, row in enumerate(self.elements):
            conn.write(f"{e}," + ",".join(str(int(a)) for a in row) + "\n")
        return nodes.getvalue(), conn.getvalue()


def interval_mesh(a=0.0, b=1.0, n=64):
    """Uniform 1D mesh with ``n`` nodes; boundary segments ``left`` and ``right``."""
    if n < 2 or not b > a:
        raise ScenarioError("mesh", "need at least two nodes on a non-empty interval")
    coords = np.linspace(a, b, n)[:, None]
    elements = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    left = np.zeros(n)
    right = np.zeros(n)
    left[0] = 1.0
    right[-1] = 1.0
    return Mesh(1, coords, elements, np.array([0, n - 1]), np.array([[-1.0], [1.0]]),
                {"left": left, "right": right})


def rectangle_mesh(x_range=(0.0, 1.0), y_range=(0.0, 1.0), nx=17, ny=17):
    """Structured bilinear-quad mesh; segments ``left``, ``right``, ``bottom``, ``top``."""
    if nx < 2 or ny < 2:
        raise ScenarioError("mesh", "need at least two nodes per axis")
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    X, Y = np.meshgrid(xs, ys)
    coords = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange(nx * ny).reshape(ny, nx)
    elements = np.stack([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel(),
                         idx[1:, :-1].ravel()], axis=1)
    n = nx * ny
    segments = {}
    normals_acc = np.zeros((n, 2))

    def edge_weights(line, coord, normal):
        w = np.zeros(n)
        lengths = np.diff(coord)
        w[line[:-1]] += lengths / 2.0
        w[line[1:]] += lengths / 2.0
        normals_acc[line] += normal
        return w

    segments["left"] = edge_weights(idx[:, 0], ys, np.array([-1.0, 0.0]))
    segments["right"] = edge_weights(idx[:, -1], ys, np.array([1.0, 0.0]))
    segments["bottom"] = edge_weights(idx[0, :], xs, np.array([0.0, -1.0]))
    segments["top"] = edge_weights(idx[-1, :], xs, np.array([0.0, 1.0]))
    boundary = np.flatnonzero(np.linalg.norm(normals_acc, axis=1) > 0)
    normals = normals_acc[boundary]
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return Mesh(2, coords, elements, boundary, normals, segments)


def element_kappa(problem, theta):
    """Permeability per element from the element average of nodal saturation."""
    mesh = problem.mesh
    theta_e = theta[mesh.elements].mean(axis=1)
    kappa_e = problem.kappa(mesh.element_centers, theta_e)
    k = problem.kappa
    if np.any(kappa_e < k.kappa0 - 1e-12) or np.any(kappa_e > k.kappa1 + 1e-12):
        raise ScenarioError("kappa", "permeability left its declared bounds")
    return kappa_e


def stiffness_action(mesh, kappa_e, u, nu):
    """Nodal vector of int kappa (grad u + nu) . grad y over all basis functions y."""
    local = np.einsum("eab,eb->ea", mesh.unit_stiffness, u[mesh.elements])
    local += mesh.grad_integrals @ nu
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, kappa_e[:, None] * local)
    return out


def stiffness_matrix(mesh, kappa_e):
    n_loc = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, n_loc, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_loc)).ravel()
    data = (kappa_e[:, None, None] * mesh.unit_stiffness).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def diffusion_dissipation(problem, u, theta):
    """int kappa |grad u + nu|^2, exact for the element quadrature used."""
    mesh = problem.mesh
    kappa_e = element_kappa(problem, theta)
    grad = np.einsum("eqad,ea->eqd", mesh.quad_grad, u[mesh.elements]) + problem.nu
    return float(np.sum(kappa_e[:, None] * mesh.quad_weights * np.sum(grad * grad, axis=-1)))


def _check(problem, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (problem.mesh.n_nodes,):
        raise DimensionMismatch(f"field shape {u.shape} != ({problem.mesh.n_nodes},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite entries in trial field")
    return u


def saturation(problem, memory_prev, u):
    """Within-step saturation ``G_j(x, u)`` at every node."""
    return trial_field(memory_prev, problem.density, problem.grid, problem.transform(u))


def assemble_residual(problem, u_trial, memory_prev, theta_prev, v_prev, tau, t):
    """Nodal residual of the per-step quasilinear elliptic equation at time ``t``."""
    u = _check(problem, u_trial)
    if tau <= 0:
        raise ValueError("time step must be positive")
    mesh = problem.mesh
    theta = saturation(problem, memory_prev, u)
    m = mesh.lumped_mass
    res = m * (theta - theta_prev) / tau + m * (u - v_prev) / (1.0 + tau)
    res += stiffness_action(mesh, element_kappa(problem, theta), u, problem.nu)
    res += problem.robin_weight * (u - problem.u_star(t))
    return res


def hysteresis_slope(problem, memory_prev, u, h_fd=1e-6):
    """Centered finite-difference slope of ``G_j`` per node, floored at zero."""
    up = saturation(problem, memory_prev, u + h_fd)
    dn = saturation(problem, memory_prev, u - h_fd)
    return np.maximum((up - dn) / (2.0 * h_fd), 0.0)


def assemble_jacobian(problem, u_trial, memory_prev, tau, t=0.0, h_fd=1e-6,
                      kappa_derivative=True):
    """Newton matrix of :func:`assemble_residual`.

    With ``kappa_derivative=False`` the permeability is frozen at the trial
    saturation and the matrix is symmetric.
    """
    u = _check(problem, u_trial)
    mesh = problem.mesh
    m = mesh.lumped_mass
    slope = hysteresis_slope(problem, memory_prev, u, h_fd)
    theta = saturation(problem, memory_prev, u)
    kappa_e = element_kappa(problem, theta)
    diag = m * slope / tau + m / (1.0 + tau) + problem.robin_weight
    jac = stiffness_matrix(mesh, kappa_e) + sp.diags(diag)
    if kappa_derivative:
        n_loc = mesh.elements.shape[1]
        theta_e = theta[mesh.elements].mean(axis=1)
        dk = problem.kappa.dtheta(mesh.element_centers, theta_e)
        if np.any(dk != 0.0):
            q = np.einsum("eab,eb->ea", mesh.unit_stiffness, u[mesh.elements])
            q += mesh.grad_integrals @ problem.nu
            s = slope[mesh.elements]
            block = (dk / n_loc)[:, None, None] * q[:, :, None] * s[:, None, :]
            rows = np.repeat(mesh.elements, n_loc, axis=1).ravel()
            cols = np.tile(mesh.elements, (1, n_loc)).ravel()
            jac = jac + sp.csr_matrix((block.ravel(), (rows, cols)), shape=jac.shape)
    jac = sp.csr_matrix(jac)
    if np.any(jac.diagonal() <= 0):
        raise ValueError("non-positive Jacobian diagonal")
    return jac


def picard_matrix(problem, u, memory_prev, tau, slope_bound):
    """Symmetric fixed-point matrix with a constant hysteresis slope ``slope_bound``."""
    mesh = problem.mesh
    m = mesh.lumped_mass
    theta = saturation(problem, memory_prev, u)
    diag = m * slope_bound / tau + m / (1.0 + tau) + problem.robin_weight
    return sp.csr_matrix(stiffness_matrix(mesh, element_kappa(problem, theta)) + sp.diags(diag))


def boundary_flux(problem, u, t):
    """``b*(u - u*(t))`` per boundary node and the node's boundary measure."""
    bn = problem.mesh.boundary_nodes
    flux = problem.b_node[bn] * (np.asarray(u)[bn] - problem.u_star(t))
    return flux, problem.mesh.boundary_measure.copy()


def nodal_gradient(mesh, u):
    """Lumped projection of the piecewise gradient onto nodes."""
    grad = np.einsum("eqad,ea->eqd", mesh.quad_grad, u[mesh.elements])
    n_loc = mesh.elements.shape[1]
    out = np.zeros((mesh.n_nodes, mesh.dim))
    # share each element's integrated gradient equally between its nodes
    integ = np.einsum("eq,eqd->ed", mesh.quad_weights, grad) / n_loc
    for a in range(n_loc):
        np.add.at(out, mesh.elements[:, a], integ)
    return out / mesh.lumped_mass[:, None]


def boundary_gradient_flux(problem, u, theta):
    """``-kappa (grad u + nu) . n`` at boundary nodes."""
    mesh = problem.mesh
    bn = mesh.boundary_nodes
    grad = nodal_gradient(mesh, u)[bn] + problem.nu
    kappa = problem.kappa(mesh.coords[bn], theta[bn])
    return -kappa * np.sum(grad * mesh.normals, axis=1)
