"""Preisach densities, initial memory curves and hypothesis checks.

A density ``phi(r, v)`` enters the operator only through its cumulative
integrals in the output variable,

    psi(r, xi) = int_0^xi phi(r, v) dv,     Psi(r, xi) = int_0^xi v phi(r, v) dv,

so every family below provides both in a form that is exactly monotone
(closed form for the parametric families, exact piecewise integration of
the bilinear interpolant for tables).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DivergentMassError, IncompatibleInitialData, ScenarioError


class PreisachDensity:
    """Common interface of the density families.

    ``G_bar`` is the offset saturation, ``x_modulation`` an optional
    nonnegative multiplier per mesh node (separable x-dependence).
    """

    kind = "abstract"

    def __init__(self, G_bar=0.5, x_modulation=None):
        self.G_bar = float(G_bar)
        if x_modulation is not None:
            x_modulation = np.asarray(x_modulation, dtype=float)
            if np.any(x_modulation < 0) or not np.all(np.isfinite(x_modulation)):
                raise ScenarioError("density.x_modulation", "must be finite and nonnegative")
        self.x_modulation = x_modulation

    def phi(self, r, v):
        raise NotImplementedError

    def psi(self, r, xi):
        raise NotImplementedError

    def Psi(self, r, xi):
        raise NotImplementedError

    def phi_sup(self, r):
        """Upper bound of ``phi(r, .)`` over v, per threshold."""
        raise NotImplementedError

    def modulation(self, nodes=None):
        """Multiplier for the given nodes (all nodes when ``nodes`` is None)."""
        if self.x_modulation is None:
            return 1.0
        if nodes is None:
            return self.x_modulation
        return self.x_modulation[nodes]


class UniformBox(PreisachDensity):
    """``phi = height`` on ``(r_lo, r_hi] x (v_lo, v_hi)``, zero elsewhere."""

    kind = "uniform-box"

    def __init__(self, r_range=(0.0, 1.0), v_range=(-1.0, 1.0), height=1.0, G_bar=0.5,
                 x_modulation=None):
        super().__init__(G_bar, x_modulation)
        self.r_lo, self.r_hi = map(float, r_range)
        self.v_lo, self.v_hi = map(float, v_range)
        self.height = float(height)
        if self.height < 0:
            raise ScenarioError("density.height", "must be nonnegative")
        if not (0.0 <= self.r_lo < self.r_hi) or not self.v_lo < self.v_hi:
            raise ScenarioError("density", "empty or invalid support box")

    def _active(self, r):
        r = np.asarray(r, dtype=float)
        return self.height * ((r > self.r_lo) & (r <= self.r_hi))

    def phi(self, r, v):
        v = np.asarray(v, dtype=float)
        return self._active(r) * ((v > self.v_lo) & (v < self.v_hi))

    def psi(self, r, xi):
        c = np.clip(xi, self.v_lo, self.v_hi)
        c0 = min(max(0.0, self.v_lo), self.v_hi)
        return self._active(r) * (c - c0)

    def Psi(self, r, xi):
        c = np.clip(xi, self.v_lo, self.v_hi)
        c0 = min(max(0.0, self.v_lo), self.v_hi)
        return self._active(r) * 0.5 * (c * c - c0 * c0)

    def phi_sup(self, r):
        return self._active(r) * 1.0

    def mass(self):
        length_r = self.r_hi - self.r_lo
        upper = self.height * length_r * max(0.0, self.v_hi - max(self.v_lo, 0.0))
        lower = self.height * length_r * max(0.0, min(self.v_hi, 0.0) - self.v_lo)
        return upper, lower


def _power_integral(lo, hi, p):
    """int_lo^hi z^-p dz for 1 <= lo <= hi (elementwise)."""
    if p == 1.0:
        return np.log(hi) - np.log(lo)
    q = 1.0 - p
    return (hi ** q - lo ** q) / q


class DecayFamily(PreisachDensity):
    """``phi(r, v) = phi0 * max(1, r + |v|)^-m`` (slow polynomial decay)."""

    kind = "decay-family"

    def __init__(self, m=4.0, phi0=1.0, G_bar=0.5, x_modulation=None):
        super().__init__(G_bar, x_modulation)
        self.m = float(m)
        self.phi0 = float(phi0)
        if self.m <= 0:
            raise ScenarioError("density.m", "must be positive")
        if self.phi0 <= 0:
            raise ScenarioError("density.phi0", "must be positive")

    def phi(self, r, v):
        return self.phi0 * np.maximum(1.0, np.asarray(r) + np.abs(v)) ** (-self.m)

    def _parts(self, r, xi):
        r = np.asarray(r, dtype=float)
        s = np.abs(np.asarray(xi, dtype=float))
        # flat part r + v <= 1, then the power-law part
        v0 = np.maximum(1.0 - r, 0.0)
        flat = np.minimum(s, v0)
        lo = r + v0
        hi = np.maximum(r + s, lo)
        return r, s, flat, lo, hi

    def psi(self, r, xi):
        r, s, flat, lo, hi = self._parts(r, xi)
        return self.phi0 * np.sign(xi) * (flat + _power_integral(lo, hi, self.m))

    def Psi(self, r, xi):
        r, s, flat, lo, hi = self._parts(r, xi)
        # int (z - r) z^-m dz over [lo, hi]
        tail = _power_integral(lo, hi, self.m - 1.0) - r * _power_integral(lo, hi, self.m)
        return self.phi0 * (0.5 * flat * flat + tail)

    def phi_sup(self, r):
        return self.phi0 * np.maximum(1.0, np.asarray(r, dtype=float)) ** (-self.m)

    def closed_form_mass(self):
        return self.phi0 * (0.5 + 1.0 / (self.m - 2.0))


class Tabulated(PreisachDensity):
    """Bilinear interpolant of a nonnegative table on an (r, v) grid.

    Outside the table the density is zero.
    """

    kind = "tabulated"

    def __init__(self, r, v, values, G_bar=0.5, x_modulation=None):
        super().__init__(G_bar, x_modulation)
        self.r = np.asarray(r, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.r.size, self.v.size):
            raise ScenarioError("density.values", "table shape must be (len(r), len(v))")
        if self.r.size < 2 or self.v.size < 2:
            raise ScenarioError("density", "table needs at least two r and two v samples")
        if np.any(np.diff(self.r) <= 0) or np.any(np.diff(self.v) <= 0):
            raise ScenarioError("density", "table axes must be strictly increasing")
        if self.r[0] < 0:
            raise ScenarioError("density.r", "thresholds must be nonnegative")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ScenarioError("density.values", "negative or non-finite entries")
        self._cache = {}

    @classmethod
    def from_csv(cls, path, **kwargs):
        """Read a ``r,v,phi`` CSV laid out row-major (r outer, v inner)."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        r = np.unique(data[:, 0])
        v = np.unique(data[:, 1])
        if data.shape[0] != r.size * v.size:
            raise ScenarioError("density.csv", "rows do not form a full (r, v) grid")
        expected_r = np.repeat(r, v.size)
        expected_v = np.tile(v, r.size)
        if not (np.array_equal(data[:, 0], expected_r) and np.array_equal(data[:, 1], expected_v)):
            raise ScenarioError("density.csv", "rows must be ordered r-major then v")
        return cls(r, v, data[:, 2].reshape(r.size, v.size), **kwargs)

    def _rows(self, r):
        """Per-threshold rows of the table plus exact cumulative integrals."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        key = r.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        rows = np.empty((r.size, self.v.size))
        for j in range(self.v.size):
            rows[:, j] = np.interp(r, self.r, self.values[:, j], left=0.0, right=0.0)
        h = np.diff(self.v)
        vj = self.v[:-1]
        a = rows[:, :-1]
        slope = np.diff(rows, axis=1) / h
        cell_p = a * h + 0.5 * slope * h * h
        cell_q = vj * a * h + 0.5 * (vj * slope + a) * h * h + slope * h ** 3 / 3.0
        cum_p = np.concatenate([np.zeros((r.size, 1)), np.cumsum(cell_p, axis=1)], axis=1)
        cum_q = np.concatenate([np.zeros((r.size, 1)), np.cumsum(cell_q, axis=1)], axis=1)
        out = (rows, slope, cum_p, cum_q)
        if len(self._cache) < 32:
            self._cache[key] = out
        return out

    def _cumulative(self, r, x):
        """(P(x), Q(x)) = int_{v_0}^x (phi, v*phi) dv with r along the last axis."""
        rows, slope, cum_p, cum_q = self._rows(r)
        x = np.clip(x, self.v[0], self.v[-1])
        j = np.clip(np.searchsorted(self.v, x, side="right") - 1, 0, self.v.size - 2)
        k = np.arange(rows.shape[0])
        k = np.broadcast_to(k, x.shape)
        vj = self.v[j]
        d = x - vj
        a = rows[k, j]
        s = slope[k, j]
        p = cum_p[k, j] + a * d + 0.5 * s * d * d
        q = cum_q[k, j] + vj * a * d + 0.5 * (vj * s + a) * d * d + s * d ** 3 / 3.0
        return p, q

    def _split(self, r, xi):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast(r, xi).shape
        xi_b = np.broadcast_to(xi, shape)
        p, q = self._cumulative(r, xi_b)
        p0, q0 = self._cumulative(r, np.zeros(shape))
        return p - p0, q - q0

    def phi(self, r, v):
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((self.r, self.v), self.values, bounds_error=False,
                                         fill_value=0.0)
        r, v = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(v, dtype=float))
        pts = np.stack([r.ravel(), v.ravel()], axis=-1)
        return np.maximum(interp(pts).reshape(r.shape), 0.0)

    def psi(self, r, xi):
        return self._split(r, xi)[0]

    def Psi(self, r, xi):
        return self._split(r, xi)[1]

    def phi_sup(self, r):
        rows = self._rows(r)[0]
        return rows.max(axis=1)

    def mass(self):
        p_hi, _ = self._cumulative(self.r, np.full(self.r.shape, self.v[-1]))
        p0, _ = self._cumulative(self.r, np.zeros(self.r.shape))
        p_lo, _ = self._cumulative(self.r, np.full(self.r.shape, self.v[0]))
        upper = np.trapezoid(p_hi - p0, self.r)
        lower = np.trapezoid(p0 - p_lo, self.r)
        return float(upper), float(lower)


def density_mass(density, node=None, tail_tol=1e-8):
    """Return ``(upper, lower)`` masses: integrals of phi(r, +-v) over r, v > 0.

    The decay family is integrated numerically along ``z = r + v`` up to a
    cutoff where the analytic tail drops below ``tail_tol``; the tail is added
    in closed form.
    """
    scale = 1.0 if node is None else float(np.asarray(density.modulation([node])).ravel()[0])
    if isinstance(density, DecayFamily):
        m = density.m
        if m <= 2.0:
            raise DivergentMassError(f"decay exponent m={m} <= 2 gives infinite mass")
        r_cut = max(1.0, (tail_tol * (m - 2.0)) ** (1.0 / (2.0 - m)))

        def along_z(z, sign):
            inner, _ = integrate.quad(lambda r: density.phi(r, sign * (z - r)), 0.0, z,
                                      epsabs=1e-14, epsrel=1e-12)
            return inner

        def total(sign):
            head, _ = integrate.quad(along_z, 0.0, 1.0, args=(sign,), epsabs=1e-13,
                                     epsrel=1e-12)
            # z = exp(s) on [1, r_cut] to tame the power-law range
            body, _ = integrate.quad(lambda s: along_z(np.exp(s), sign) * np.exp(s), 0.0,
                                     np.log(r_cut), epsabs=1e-13, epsrel=1e-12, limit=200)
            tail = density.phi0 * r_cut ** (2.0 - m) / (m - 2.0)
            return head + body + tail

        return scale * total(1.0), scale * total(-1.0)
    upper, lower = density.mass()
    return scale * upper, scale * lower


def check_range_condition(density, tol=1e-9):
    """Whether G_bar in (0, 1) and the masses fit into [0, 1]."""
    if not 0.0 < density.G_bar < 1.0:
        return False
    upper, lower = density_mass(density)
    smax = 1.0 if density.x_modulation is None else float(np.max(density.x_modulation))
    return smax * upper <= 1.0 - density.G_bar + tol and smax * lower <= density.G_bar + tol


@dataclass
class InitialMemory:
    """Initial memory curve ``lam(r) -> array (n_nodes, len(r))``."""

    lam: Callable[[np.ndarray], np.ndarray]
    Lambda: float
    kind: str = "table"

    def __call__(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.asarray(self.lam(r), dtype=float)
        return np.where(r >= self.Lambda, 0.0, out)

    @classmethod
    def from_table(cls, r, values, Lambda):
        r = np.asarray(r, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != r.size:
            raise ScenarioError("memory.values", "each node row must match len(memory.r)")
        if np.any(np.diff(r) <= 0) or r[0] != 0.0:
            raise ScenarioError("memory.r", "must start at 0 and increase strictly")

        def lam(q):
            idx = np.clip(np.searchsorted(r, q, side="right") - 1, 0, r.size - 2)
            w = np.clip((q - r[idx]) / (r[idx + 1] - r[idx]), 0.0, 1.0)
            vals = values[:, idx] * (1.0 - w) + values[:, idx + 1] * w
            # beyond the last sample the memory is zero
            return np.where(q > r[-1], 0.0, vals)

        return cls(lam, float(Lambda), "table")


def build_virgin_memory(u0, Lambda):
    """Memory reached by a monotone path from 0 to ``u0`` at every node."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if np.max(np.abs(u0)) > Lambda:
        raise IncompatibleInitialData(
            f"sup|u0| = {np.max(np.abs(u0)):.6g} exceeds Lambda = {Lambda:.6g}")
    sign = np.sign(u0)[:, None]
    mag = np.abs(u0)[:, None]

    def lam(r):
        return sign * np.maximum(0.0, mag - r[None, :])

    return InitialMemory(lam, float(Lambda), "virgin")


def memory_invariant_violations(memory, u0, r_sample, tol=1e-12):
    """List of violated invariants of an initial memory on a sample grid."""
    problems = []
    r_sample = np.asarray(r_sample, dtype=float)
    lam = memory(r_sample)
    beyond = r_sample >= memory.Lambda
    if np.any(beyond) and np.max(np.abs(lam[:, beyond])) > tol:
        problems.append("memory nonzero for r >= Lambda")
    dl = np.abs(np.diff(lam, axis=1))
    dr = np.diff(r_sample)[None, :]
    if np.any(dl > dr + tol):
        problems.append("memory not 1-Lipschitz in r")
    at_zero = memory(np.array([0.0]))[:, 0]
    if np.max(np.abs(at_zero - np.asarray(u0, dtype=float))) > tol:
        problems.append("memory at r=0 differs from u0")
    return problems


@dataclass
class CompatibilityReport:
    checks: dict = field(default_factory=dict)

    def add(self, name, status, detail="", value=None):
        self.checks[name] = {"status": status, "detail": detail, "value": value}

    @property
    def failed(self):
        return any(c["status"] == "fail" for c in self.checks.values())

    @property
    def warnings(self):
        return [k for k, c in self.checks.items() if c["status"] == "warn"]

    def lines(self):
        out = []
        for name, c in self.checks.items():
            value = "" if c["value"] is None else f" value={c['value']:.6g}"
            out.append(f"{name}: {c['status']}{value} {c['detail']}".rstrip())
        return out


def elliptic_residual(problem, u0, v0, theta0):
    """Nodal ``div(kappa (grad u0 + nu)) + v0 - u0`` via the lumped discrete operator."""
    from .grid import element_kappa, stiffness_action

    kappa_e = element_kappa(problem, theta0)
    flux = stiffness_action(problem.mesh, kappa_e, u0, problem.nu)
    return -flux / problem.mesh.lumped_mass + v0 - u0


def validate_compatibility(problem, theta_tol=1e-3, robin_tol=1e-6, n_r=257):
    """Check the initial compatibility conditions of a set-up problem.

    Only a memory/initial-pressure mismatch is a hard failure; the remaining
    checks are reported as warnings.
    """
    from .grid import boundary_gradient_flux
    from .hysteresis import ThresholdGrid, MemoryState, preisach_field

    report = CompatibilityReport()
    mem = problem.memory
    u0 = problem.u0
    w0 = problem.transform(u0)

    # (i) memory at r = 0 equals the (transformed) initial pressure
    lam0 = mem(np.array([0.0]))[:, 0]
    err = float(np.max(np.abs(lam0 - w0)))
    r_sample = np.linspace(0.0, 1.25 * mem.Lambda, n_r)
    extra = [p for p in memory_invariant_violations(mem, w0, r_sample, tol=1e-10)
             if "r=0" not in p]
    if err > 1e-10:
        report.add("memory_matches_u0", "fail", "memory(x, 0) != u0", err)
    elif extra:
        report.add("memory_matches_u0", "fail", "; ".join(extra), err)
    else:
        report.add("memory_matches_u0", "pass", "", err)

    # (ii) theta0 from the committed threshold grid vs a refined quadrature
    theta_grid = preisach_field(MemoryState.from_initial(mem, problem.grid), problem.density,
                                problem.grid)
    fine = ThresholdGrid.midpoint(problem.grid.Lambda, 16 * problem.grid.r_nodes.size)
    theta_fine = preisach_field(MemoryState.from_initial(mem, fine), problem.density, fine)
    gap = float(np.max(np.abs(theta_grid - theta_fine)))
    report.add("theta0_quadrature", "pass" if gap <= theta_tol else "warn",
               "threshold-grid vs 16x refined quadrature", gap)

    # (iii) Robin compatibility at boundary nodes
    bnodes = problem.mesh.boundary_nodes
    normal_flux = boundary_gradient_flux(problem, u0, theta_grid)
    b = problem.b_node[bnodes]
    robin = normal_flux - b * (u0[bnodes] - problem.u_star(0.0))
    rerr = float(np.max(np.abs(robin))) if robin.size else 0.0
    report.add("robin_compatibility", "pass" if rerr <= robin_tol else "warn",
               "-kappa (grad u0 + nu).n - b*(u0 - u*(0))", rerr)

    # (iv) sign condition on -d lambda / dr near r = 0
    res = elliptic_residual(problem, u0, problem.v0, theta_grid)
    dr = 1e-3 * mem.Lambda
    slope = -(mem(np.array([dr]))[:, 0] - lam0) / dr
    bad = (np.abs(res) > 1e-8) & (np.abs(slope - np.sign(res)) > 1e-6)
    report.add("memory_sign_condition", "warn" if np.any(bad) else "pass",
               f"{int(np.sum(bad))} node(s) where -dlambda/dr != sign(residual)",
               float(np.sum(bad)))
    return report
