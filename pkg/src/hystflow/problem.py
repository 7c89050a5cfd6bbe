"""Materialized problem data: mesh, operators and coefficient functions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import InitialMemory, build_virgin_memory
from .errors import ScenarioError
from .hysteresis import ThresholdGrid, Transform


class Kappa:
    """Permeability ``kappa(x, theta)`` bounded in [kappa0, kappa1].

    ``formula`` is one of ``linear`` (default), ``constant`` or ``power``;
    the saturation enters through ``clamp(theta, 0, 1)``.
    """

    def __init__(self, kappa0=1.0, kappa1=1.0, formula="linear", exponent=1.0):
        self.kappa0 = float(kappa0)
        self.kappa1 = float(kappa1)
        self.formula = formula
        self.exponent = float(exponent)
        if not 0.0 < self.kappa0 <= self.kappa1:
            raise ScenarioError("kappa", "need 0 < kappa0 <= kappa1")
        if formula not in ("linear", "constant", "power"):
            raise ScenarioError("kappa.formula", f"unknown formula {formula!r}")
        if formula == "power" and self.exponent < 1.0:
            raise ScenarioError("kappa.exponent", "must be >= 1 for a Lipschitz formula")

    def __call__(self, x, theta):
        theta = np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)
        if self.formula == "constant":
            return np.full_like(theta, self.kappa0)
        if self.formula == "linear":
            return self.kappa0 + (self.kappa1 - self.kappa0) * theta
        return self.kappa0 + (self.kappa1 - self.kappa0) * theta ** self.exponent

    def dtheta(self, x, theta):
        theta = np.asarray(theta, dtype=float)
        inside = (theta > 0.0) & (theta < 1.0)
        if self.formula == "constant":
            return np.zeros_like(theta)
        if self.formula == "linear":
            return (self.kappa1 - self.kappa0) * inside
        t = np.clip(theta, 0.0, 1.0)
        return self.exponent * (self.kappa1 - self.kappa0) * t ** (self.exponent - 1.0) * inside


class BoundaryValue:
    """Exterior pressure ``u*(t)``: constant or piecewise linear in time."""

    def __init__(self, value=0.0, times=None, values=None):
        if times is None:
            self.times = np.array([0.0])
            self.values = np.array([float(value)])
        else:
            self.times = np.asarray(times, dtype=float)
            self.values = np.asarray(values, dtype=float)
            if self.times.shape != self.values.shape or self.times.size == 0:
                raise ScenarioError("boundary.u_star", "times and values must match")
            if np.any(np.diff(self.times) <= 0):
                raise ScenarioError("boundary.u_star.t", "must increase strictly")

    def __call__(self, t):
        if self.times.size == 1:
            return float(self.values[0])
        return float(np.interp(t, self.times, self.values))

    @property
    def sup(self):
        return float(np.max(np.abs(self.values)))


@dataclass(eq=False)
class Problem:
    """Everything the assembly and time loop need, already on the mesh."""

    mesh: object
    density: object
    grid: ThresholdGrid
    memory: InitialMemory
    u0: np.ndarray
    v0: np.ndarray
    kappa: Kappa = field(default_factory=Kappa)
    transform: Transform = field(default_factory=Transform)
    nu: np.ndarray | None = None
    b_star: dict = field(default_factory=dict)
    u_star: BoundaryValue = field(default_factory=BoundaryValue)

    def __post_init__(self):
        n = self.mesh.n_nodes
        self.u0 = np.broadcast_to(np.asarray(self.u0, dtype=float), (n,)).copy()
        self.v0 = np.broadcast_to(np.asarray(self.v0, dtype=float), (n,)).copy()
        if self.nu is None:
            self.nu = np.zeros(self.mesh.dim)
        self.nu = np.asarray(self.nu, dtype=float).reshape(self.mesh.dim)
        norm = np.linalg.norm(self.nu)
        if norm != 0.0 and abs(norm - 1.0) > 1e-12:
            raise ScenarioError("gravity.direction", "must be a unit vector")
        unknown = set(self.b_star) - set(self.mesh.segments)
        if unknown:
            raise ScenarioError("boundary.b_star", f"unknown segment(s) {sorted(unknown)}")
        weight = np.zeros(n)
        for seg, b in self.b_star.items():
            if b < 0:
                raise ScenarioError(f"boundary.b_star.{seg}", "must be nonnegative")
            weight += b * self.mesh.segments[seg]
        self.robin_weight = weight
        self.b_node = np.zeros(n)
        bn = self.mesh.boundary_nodes
        self.b_node[bn] = weight[bn] / self.mesh.boundary_measure
        self.x0 = self.mesh.centroid
        self.gravity_height = (self.mesh.coords - self.x0) @ self.nu

    @classmethod
    def build(cls, mesh, density, Lambda=2.0, K=64, memory=None, **kwargs):
        """Convenience constructor with a virgin memory built from ``u0``."""
        grid = ThresholdGrid.midpoint(Lambda, K)
        transform = kwargs.get("transform", Transform())
        u0 = np.broadcast_to(np.asarray(kwargs.get("u0", 0.0), dtype=float), (mesh.n_nodes,))
        if memory is None:
            memory = build_virgin_memory(transform(u0), Lambda)
        kwargs["u0"] = u0
        kwargs.setdefault("v0", 0.0)
        return cls(mesh=mesh, density=density, grid=grid, memory=memory, **kwargs)
