"""Discrete play and Preisach operators with explicit memory.

The memory of a Preisach operator is the family of play outputs
``xi[node, k]`` over a quadrature grid of thresholds ``r_k``.  Operators
here never mutate their inputs: the nonlinear solver evaluates trial
outputs repeatedly and commits memory once per time step.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, optimize

from .errors import (
    DimensionMismatch,
    InconsistencyError,
    InvalidThresholdError,
    InvalidTransformError,
    OracleFailure,
)


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    """Quadrature nodes and weights for integrals over thresholds in (0, Lambda]."""

    r_nodes: np.ndarray
    r_weights: np.ndarray
    Lambda: float

    @classmethod
    def midpoint(cls, Lambda, K=64):
        if Lambda <= 0 or K < 1:
            raise InvalidThresholdError("need Lambda > 0 and K >= 1")
        h = Lambda / K
        nodes = (np.arange(K) + 0.5) * h
        return cls(nodes, np.full(K, h), float(Lambda))

    @property
    def size(self):
        return self.r_nodes.size


def discrete_play_step(xi_prev, u, r):
    """Output of the time-discrete play: ``xi_prev`` projected onto [u - r, u + r]."""
    if np.any(np.asarray(r) <= 0):
        raise InvalidThresholdError(f"play threshold must be positive, got {r!r}")
    return np.maximum(u - r, np.minimum(u + r, xi_prev))


def play_step_oracle(xi_prev, u, r, z_grid_size=101, tol=1e-12):
    """Brute-force solution of the discrete play variational inequality.

    Scans candidates on a grid of [u - r, u + r] plus ``xi_prev`` and keeps
    those satisfying ``(xi - xi_prev) (u - xi - z) >= 0`` for every ``z`` on a
    grid of [-r, r].  Test-only verifier.
    """
    if z_grid_size < 3:
        raise ValueError("z_grid_size must be at least 3")
    if r <= 0:
        raise InvalidThresholdError(f"play threshold must be positive, got {r!r}")
    candidates = np.append(np.linspace(u - r, u + r, z_grid_size), xi_prev)
    z = np.linspace(-r, r, z_grid_size)
    # work in units of r so the tolerance does not swamp small thresholds
    a = (candidates - xi_prev) / r
    b = (u - candidates[:, None] - z[None, :]) / r
    # rounding in u - xi - z is of order eps (|u| + |xi_prev| + r) / r, amplified by |a|
    slack = tol + 8.0 * np.finfo(float).eps * (abs(u) + abs(xi_prev) + r) / r
    admissible = np.abs(u - candidates) <= r * (1.0 + slack)
    worst = (a[:, None] * b).min(axis=1)
    ok = admissible & (worst >= -slack * np.maximum(1.0, np.abs(a)))
    if not np.any(ok):
        raise OracleFailure(f"no admissible play output for xi_prev={xi_prev}, u={u}, r={r}")
    hits = candidates[ok]
    # distinct admissible candidates would mean the inequality is not uniquely solvable
    if np.ptp(hits) > 2.0 * r / (z_grid_size - 1):
        raise OracleFailure(f"ambiguous play output {hits} for xi_prev={xi_prev}, u={u}, r={r}")
    return float(hits[np.argmax(worst[ok])])


_MAGIC = b"HYSTMEM1"


@dataclass(eq=False)
class MemoryState:
    """Play outputs ``xi[node, k]`` for every node and threshold."""

    xi: np.ndarray

    @classmethod
    def from_initial(cls, memory, grid):
        return cls(np.array(memory(grid.r_nodes), dtype=float))

    @classmethod
    def zeros(cls, n_nodes, grid):
        return cls(np.zeros((n_nodes, grid.size)))

    @property
    def n_nodes(self):
        return self.xi.shape[0]

    def copy(self):
        return MemoryState(self.xi.copy())

    def __eq__(self, other):
        return isinstance(other, MemoryState) and np.array_equal(self.xi, other.xi)

    # checkpoint formats: node rows, threshold columns
    def to_bytes(self):
        n, k = self.xi.shape
        header = _MAGIC + struct.pack("<QQ", n, k)
        return header + np.ascontiguousarray(self.xi, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        if data[:8] != _MAGIC:
            raise ValueError("not a memory-state blob")
        n, k = struct.unpack("<QQ", data[8:24])
        xi = np.frombuffer(data[24:24 + 8 * n * k], dtype="<f8").reshape(n, k)
        return cls(xi.astype(float))

    def to_csv(self):
        buf = io.StringIO()
        k = self.xi.shape[1]
        buf.write("node," + ",".join(f"xi_{j}" for j in range(k)) + "\n")
        for i, row in enumerate(self.xi):
            buf.write(f"{i}," + ",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 1:].copy())


def _check_field(state, field, grid):
    field = np.asarray(field, dtype=float)
    if field.ndim != 1 or field.shape[0] != state.xi.shape[0]:
        raise DimensionMismatch(
            f"field of shape {field.shape} does not match memory with {state.xi.shape[0]} nodes")
    if state.xi.shape[1] != grid.size:
        raise DimensionMismatch(
            f"memory has {state.xi.shape[1]} thresholds, grid has {grid.size}")
    return field


def update_memory(state, u_field, grid):
    """Advance every play element by one discrete step with input ``u_field``."""
    u_field = _check_field(state, u_field, grid)
    return MemoryState(discrete_play_step(state.xi, u_field[:, None], grid.r_nodes[None, :]))


def _output(xi, density, grid, scale):
    return density.G_bar + scale * (density.psi(grid.r_nodes, xi) @ grid.r_weights)


def preisach_field(state, density, grid):
    """Preisach output at every node for the committed memory."""
    scale = density.modulation()
    return _output(state.xi, density, grid, scale)


def preisach_eval(state, density, grid, node):
    scale = density.modulation([node])
    return float(np.asarray(_output(state.xi[node:node + 1], density, grid, scale))[0])


def trial_field(state_prev, density, grid, u_field):
    """Preisach output at every node for trial inputs, without committing memory."""
    u_field = _check_field(state_prev, u_field, grid)
    xi = np.maximum(u_field[:, None] - grid.r_nodes, np.minimum(u_field[:, None] + grid.r_nodes,
                                                                  state_prev.xi))
    return _output(xi, density, grid, density.modulation())


def within_step_output(state_prev, density, grid, node, u_candidate):
    """Output at ``node`` if the input moved from the committed state to ``u_candidate``."""
    xi_prev = state_prev.xi[node]
    xi = np.maximum(u_candidate - grid.r_nodes, np.minimum(u_candidate + grid.r_nodes, xi_prev))
    scale = np.asarray(density.modulation([node])).ravel()[0]
    return float(density.G_bar + scale * (density.psi(grid.r_nodes, xi) @ grid.r_weights))


def potential_and_dissipation_step(state_prev, state_next, density, grid, u_next_field,
                                   tol=1e-12):
    """Per-node change of the hysteresis potential and the dissipated amount.

    ``u_next_field`` is the play input that produced ``state_next``.
    """
    u_next_field = _check_field(state_prev, u_next_field, grid)
    r, w = grid.r_nodes, grid.r_weights
    scale = density.modulation()
    dpsi = density.psi(r, state_next.xi) - density.psi(r, state_prev.xi)
    dPsi = density.Psi(r, state_next.xi) - density.Psi(r, state_prev.xi)
    d_potential = scale * (dPsi @ w)
    dissipation = scale * (((dpsi * u_next_field[:, None]) - dPsi) @ w)
    bound = tol * np.maximum(1.0, np.abs(u_next_field))
    if np.any(dissipation < -bound):
        worst = int(np.argmin(dissipation))
        raise InconsistencyError(
            f"negative hysteresis dissipation {dissipation[worst]:.3e} at node {worst}")
    return d_potential, dissipation


class Transform:
    """Increasing input transform ``g`` with ``g(0) = 0`` (``G = P o g``)."""

    kind = "identity"

    def __call__(self, u):
        return np.asarray(u, dtype=float)

    def derivative(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    @property
    def is_identity(self):
        return self.kind == "identity"

    def validate(self, U, n=2001, g_lower=None, g_upper=None):
        """Sample the anchor and slope bounds on [-U, U]; raise on violation."""
        u = np.linspace(-U, U, n)
        if abs(float(self(np.array([0.0]))[0])) > 1e-12:
            raise InvalidTransformError("transform must satisfy g(0) = 0")
        slope = self.derivative(u)
        lo = np.min(slope)
        if not np.all(np.isfinite(slope)) or lo <= 0:
            raise InvalidTransformError(f"transform slope must stay positive on [-{U}, {U}]")
        if g_lower is not None and lo < g_lower:
            raise InvalidTransformError(f"slope {lo:.4g} below declared lower bound {g_lower}")
        if g_upper is not None and np.max(slope) > g_upper:
            raise InvalidTransformError(
                f"slope {np.max(slope):.4g} above declared upper bound {g_upper}")
        return float(lo), float(np.max(slope))


class Polynomial(Transform):
    kind = "polynomial"

    def __init__(self, coefficients):
        # coefficients in increasing powers
        self.coefficients = tuple(float(c) for c in coefficients)
        self._p = np.polynomial.Polynomial(self.coefficients)
        self._dp = self._p.deriv()

    def __call__(self, u):
        return self._p(np.asarray(u, dtype=float))

    def derivative(self, u):
        return self._dp(np.asarray(u, dtype=float))


class TableTransform(Transform):
    """Monotone cubic (PCHIP) interpolation of sampled ``(u, g)`` pairs."""

    kind = "table"

    def __init__(self, u, g):
        self.u = np.asarray(u, dtype=float)
        self.g = np.asarray(g, dtype=float)
        if self.u.size < 2 or np.any(np.diff(self.u) <= 0):
            raise InvalidTransformError("table abscissae must increase strictly")
        if np.any(np.diff(self.g) <= 0):
            raise InvalidTransformError("table values must increase strictly")
        self._f = interpolate.PchipInterpolator(self.u, self.g, extrapolate=True)
        self._df = self._f.derivative()

    def __call__(self, u):
        return self._f(np.asarray(u, dtype=float))

    def derivative(self, u):
        return self._df(np.asarray(u, dtype=float))


def compose_with_g(u, g):
    return g(u)


@dataclass(frozen=True, eq=False)
class PrandtlIshlinskii:
    """Preisach operator with v-independent density ``phi(r)`` on a threshold grid."""

    grid: ThresholdGrid
    phi: np.ndarray

    @classmethod
    def constant(cls, grid, height=1.0):
        return cls(grid, np.full(grid.size, float(height)))

    def outputs(self, w):
        """Outputs for a sequence starting from the virgin memory curve at ``w[0]``."""
        r = self.grid.r_nodes
        coef = self.grid.r_weights * self.phi
        xi = np.sign(w[0]) * np.maximum(0.0, abs(w[0]) - r)
        out = [coef @ xi]
        states = [xi]
        for wi in w[1:]:
            xi = discrete_play_step(xi, wi, r)
            out.append(coef @ xi)
            states.append(xi)
        return np.array(out), states

    def increments(self, w):
        """Output increments ``P_{i+1} - P_i`` summed from play increments (no cancellation)."""
        out, states = self.outputs(w)
        coef = self.grid.r_weights * self.phi
        return np.array([coef @ (b - a) for a, b in zip(states[:-1], states[1:])]), states

    def branch_slope(self, xi, w, upward):
        """One-sided slope of the branch leaving memory ``xi`` at input ``w``."""
        r = self.grid.r_nodes
        coef = self.grid.r_weights * self.phi
        tol = 1e-13 * max(1.0, abs(w))
        if upward:
            return float(coef @ (xi <= w - r + tol))
        return float(coef @ (xi >= w + r - tol))


class PiecewiseLinearMemory:
    """Play outputs ``xi(r)`` over all thresholds, stored as a broken line in r."""

    def __init__(self, r, xi):
        self.r = np.asarray(r, dtype=float)
        self.xi = np.asarray(xi, dtype=float)

    @classmethod
    def virgin(cls, w, edges):
        r = np.union1d(edges, [min(abs(w), edges[-1])])
        return cls(r, np.sign(w) * np.maximum(0.0, abs(w) - r))

    def play(self, w):
        """Exact play update for every threshold at once."""
        r, xi = self.r, self.xi
        new_r = [r]
        for bound in (w - r, w + r):
            d = xi - bound
            cross = np.nonzero(d[:-1] * d[1:] < 0)[0]
            t = d[cross] / (d[cross] - d[cross + 1])
            new_r.append(r[cross] + t * (r[cross + 1] - r[cross]))
        r_all = np.unique(np.concatenate(new_r))
        old = np.interp(r_all, r, xi)
        return PiecewiseLinearMemory(r_all, np.maximum(w - r_all, np.minimum(w + r_all, old)))

    def difference_integral(self, other, edges, heights):
        """``int phi(r) (other.xi - self.xi) dr`` on the merged breakpoints."""
        r = np.union1d(self.r, other.r)
        diff = PiecewiseLinearMemory(r, np.interp(r, other.r, other.xi) - np.interp(r, self.r, self.xi))
        return diff.integral(edges, heights)

    def integral(self, edges, heights):
        """``int phi(r) xi(r) dr`` for piecewise-constant ``phi`` on ``edges``."""
        mid = 0.5 * (self.r[1:] + self.r[:-1])
        seg = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, len(heights) - 1)
        area = 0.5 * (self.xi[1:] + self.xi[:-1]) * np.diff(self.r)
        return float(np.sum(heights[seg] * area))


class ExactPrandtlIshlinskii:
    """Prandtl-Ishlinskii operator with piecewise-constant density, integrated exactly in r.

    Unlike a quadrature in r, arbitrarily small input reversals move a
    positive measure of plays, so branches are strictly convex at every scale.
    """

    def __init__(self, edges, heights):
        self.edges = np.asarray(edges, dtype=float)
        self.heights = np.asarray(heights, dtype=float)
        if self.edges[0] != 0.0 or np.any(np.diff(self.edges) <= 0):
            raise InvalidThresholdError("edges must start at 0 and increase")
        if self.heights.shape != (self.edges.size - 1,) or np.any(self.heights <= 0):
            raise ValueError("need one positive height per threshold interval")

    @classmethod
    def constant(cls, Lambda, height=1.0):
        return cls([0.0, float(Lambda)], [float(height)])

    def states(self, w):
        mem = PiecewiseLinearMemory.virgin(w[0], self.edges)
        out = [mem]
        for wi in w[1:]:
            mem = mem.play(wi)
            out.append(mem)
        return out

    def outputs(self, w):
        states = self.states(w)
        return np.array([m.integral(self.edges, self.heights) for m in states]), states

    def increments(self, w):
        """Output increments integrated from memory differences, accurate for tiny steps."""
        states = self.states(w)
        return np.array([a.difference_integral(b, self.edges, self.heights)
                         for a, b in zip(states[:-1], states[1:])]), states

    def branch_slope(self, mem, w, upward):
        tol = 1e-13 * max(1.0, abs(w))
        r = mem.r
        mid = 0.5 * (r[1:] + r[:-1])
        xi_mid = 0.5 * (mem.xi[1:] + mem.xi[:-1])
        active = (xi_mid <= w - mid + tol) if upward else (xi_mid >= w + mid - tol)
        seg = np.clip(np.searchsorted(self.edges, mid, side="right") - 1, 0, self.heights.size - 1)
        return float(np.sum(self.heights[seg] * np.diff(r) * active))


class LogRatio:
    """``f(w) = w / (tau + |w|)`` with closed-form ``F`` and ``Gamma``."""

    def __init__(self, tau):
        self.tau = float(tau)

    def f(self, w):
        return w / (self.tau + np.abs(w))

    def F(self, w):
        a = np.abs(w)
        return a - self.tau * np.log1p(a / self.tau)

    def Gamma(self, w):
        a = np.abs(w)
        return self.tau * a * (np.log1p(a / self.tau) - a / (self.tau + a))


class OddFunction:
    """Generic odd increasing ``f``; ``F`` by adaptive quadrature."""

    def __init__(self, f):
        self._f = f

    def f(self, w):
        return self._f(w)

    def F(self, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        return np.array([integrate.quad(self._f, 0.0, x, epsabs=1e-14)[0] for x in w])

    def Gamma(self, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        return np.abs(w) * (w * self._f(w) - self.F(w))


def convexity_sides(P, w, f):
    """Left side and the sum of Gamma terms for a sequence ``w[-1], w[0], ..., w[n]``.

    ``w`` is passed as a plain array whose first entry is ``w[-1]``.  Output
    increments come from ``P.increments`` so second differences of nearby
    inputs do not cancel catastrophically.
    """
    w = np.asarray(w, dtype=float)
    dP, _ = P.increments(w)
    dw = np.diff(w)
    lhs = float(np.sum((dP[1:] - dP[:-1]) * f.f(dw[1:])))
    d0 = dw[0]
    if d0 != 0.0:
        lhs += dP[0] / d0 * float(np.asarray(f.F(d0)).ravel()[0])
    # d0 == 0: the slope multiplies F(0) = 0, so the first-move convention drops out
    gamma = float(np.sum(f.Gamma(dw[1:])))
    return lhs, gamma


def check_convexity_inequality(P, w, f, beta, U=None, tol=1e-12):
    """Return ``(lhs, rhs, holds)`` of the discrete convexity inequality."""
    w = np.asarray(w, dtype=float)
    if w.size < 2:
        raise ValueError("sequence needs w[-1] and at least w[0]")
    if U is not None and np.max(np.abs(w)) > U:
        raise ValueError(f"sequence leaves [-{U}, {U}]")
    lhs, gamma = convexity_sides(P, w, f)
    rhs = 0.5 * beta * gamma
    return lhs, rhs, bool(lhs >= rhs - tol * max(1.0, abs(rhs)))


def first_step_slope(P, w):
    """Slope multiplying ``F(w0 - w_-1)``, including the zero-step convention."""
    w = np.asarray(w, dtype=float)
    out, states = P.outputs(w)
    d0 = w[1] - w[0]
    if d0 != 0.0:
        return (out[1] - out[0]) / d0
    moves = np.diff(w[1:])
    nz = moves[moves != 0.0]
    if nz.size == 0:
        return 0.0
    return P.branch_slope(states[0], w[0], upward=bool(nz[0] > 0))


def random_sequences(rng, count, length, U):
    """Random sequences ``w[-1..length-1]`` mixing uniform draws and small steps."""
    seqs = []
    for _ in range(count):
        if rng.random() < 0.5:
            seq = rng.uniform(-U, U, length + 1)
        else:
            steps = rng.normal(0.0, U / 4.0, length + 1)
            seq = np.clip(np.cumsum(steps), -U, U)
        seqs.append(seq)
    return seqs


def _ratio(P, f, w):
    lhs, gamma = convexity_sides(P, w, f)
    return 2.0 * lhs / gamma if gamma > 0 else np.inf


def derive_beta(P, f, sequences, U=None, refine=0, maxiter=400):
    """Largest beta for which the inequality holds on every given sequence.

    With ``refine > 0`` the ``refine`` worst sequences are used as starting
    points of a Nelder-Mead search over sequences in [-U, U] that pushes the
    ratio ``2 lhs / sum Gamma`` further down; the smallest ratio seen is returned.
    """
    ratios = [(_ratio(P, f, np.asarray(w, dtype=float)), i) for i, w in enumerate(sequences)]
    best = min((r for r, _ in ratios), default=np.inf)
    if refine <= 0:
        return best
    if U is None:
        raise ValueError("refinement needs the input bound U")

    def objective(p):
        w = U * np.tanh(p)
        return min(_ratio(P, f, w), 1e6)

    for _, i in sorted(ratios)[:refine]:
        w0 = np.clip(np.asarray(sequences[i], dtype=float), -0.999999 * U, 0.999999 * U)
        res = optimize.minimize(objective, np.arctanh(w0 / U), method="Nelder-Mead",
                                options={"maxiter": maxiter, "xatol": 1e-12, "fatol": 1e-12})
        best = min(best, float(res.fun))
    return best
