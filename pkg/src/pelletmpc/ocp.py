"""Horizon-N optimal control program assembly.

Shared by both controllers: tracking weights, the edge density-limit path
constraint, the piecewise-constant reference, and condensation of the
quadratic objective plus stacked path constraints into decision-variable
space (binary pellet decisions over the horizon).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plasma import PlasmaProfileState, RadialGrid
from .prediction import CondensedPrediction, free_response


def greenwald_limit(I_p: float, a: float) -> float:
    """Edge density limit I_p / (pi a^2) in m^-3, with I_p in MA and a in m."""
    return 1e20 * I_p / (math.pi * a * a)


def line_avg_profile(n: np.ndarray, grid: RadialGrid) -> float:
    """Trapezoidal (1/a) integral of a density profile over [0, a]."""
    return float(grid.line_weights @ np.asarray(n, dtype=float)) / grid.nodes[-1]


def line_avg_density(state: PlasmaProfileState, grid: RadialGrid) -> float:
    """Line-averaged electron density of a plant state."""
    return line_avg_profile(state.n_e, grid)


def build_reference_state(level: float, n: int) -> np.ndarray:
    """Reference state vector: density block at ``level``, temperatures zero.

    Temperature entries carry zero tracking weight, so their value here is
    immaterial.
    """
    if level < 0:
        raise ValueError("reference level must be nonnegative")
    x = np.zeros(int(n))
    x[: int(n) // 2] = level
    return x


@dataclass
class Weights:
    """Diagonal tracking weights, stored as the diagonal vectors.

    Density entries scale the state to order one (1/n_scale^2) and carry
    each node's quadrature width so the weighted error approximates the
    squared relative profile error; temperature entries are exactly zero.
    """

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if np.any(self.Q < 0) or np.any(self.P < 0) or np.any(self.R < 0):
            raise ValueError("weights must be nonnegative")


def default_weights(grid: RadialGrid, n_scale: float = 1e20) -> Weights:
    nn = grid.n_nodes
    q = np.zeros(2 * nn)
    q[:nn] = grid.line_weights / (grid.nodes[-1] * n_scale**2)
    return Weights(Q=q, R=np.zeros(1), P=q.copy())


@dataclass
class PathConstraint:
    """Rows G, h of the state inequality G x - h <= 0."""

    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h row counts differ")


def greenwald_constraint(grid: RadialGrid, n_gw: float, radius: float = 1.8) -> PathConstraint:
    """Single-row constraint n_e(r = radius) <= n_gw."""
    idx = grid.node_index(radius)
    G = np.zeros((1, 2 * grid.n_nodes))
    G[0, idx] = 1.0
    return PathConstraint(G, np.array([n_gw]))


@dataclass
class ReferenceSignal:
    """Piecewise-constant, right-continuous line-averaged density reference."""

    breakpoints: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.breakpoints.size != self.levels.size or self.breakpoints.size == 0:
            raise ValueError("breakpoints and levels must have equal nonzero length")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must increase strictly")

    def level_at(self, t: float) -> float:
        i = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return float(self.levels[max(i, 0)])


def default_reference() -> ReferenceSignal:
    """Flat-top at 1e20, step to the unreachable 2e20 on [2, 6) s, back down."""
    return ReferenceSignal(np.array([0.0, 2.0, 6.0]), np.array([1e20, 2e20, 1e20]))


@dataclass
class CondensedOcp:
    """Quadratic program data over the stacked inputs U in [0, 1]^(mN).

    Objective 0.5 U' H U + g' U + const reproduces the horizon tracking
    cost (stage weights Q on x_1..x_{N-1}, terminal P on x_N, input R, plus
    the constant contribution of the measured x_0).  A_ineq U <= b_ineq
    encodes the path constraint at k = 1..N; rows are divided by
    ``constraint_scale`` so their entries are order one.
    """

    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    const: float = 0.0
    constraint_scale: float = 1.0


def condense_ocp(pred: CondensedPrediction, w: Weights, pc: PathConstraint,
                 x0: np.ndarray, x_ref: np.ndarray,
                 constraint_scale: float = 1.0) -> CondensedOcp:
    """Eliminate the predicted states and express the OCP in the inputs."""
    x0 = np.asarray(x0, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    N = pred.N
    n = x0.size
    if pred.Phi.shape != (N * n, n) or x_ref.size != n:
        raise ValueError("prediction/state dimensions are inconsistent")
    m = pred.Gamma.shape[1] // N
    F = free_response(pred, x0)
    E = F - np.tile(x_ref, N)
    qbar = np.concatenate([np.tile(w.Q, N - 1), w.P]) if N > 1 else w.P.copy()
    rbar = np.tile(w.R, N)
    H = 2.0 * (pred.Gamma.T @ (qbar[:, None] * pred.Gamma))
    H[np.diag_indices_from(H)] += 2.0 * rbar
    H = 0.5 * (H + H.T)
    g = 2.0 * (pred.Gamma.T @ (qbar * E))
    e0 = x0 - x_ref
    const = float(E @ (qbar * E) + e0 @ (w.Q * e0))
    p = pc.G.shape[0]
    GX = (E + np.tile(x_ref, N)).reshape(N, n) @ pc.G.T            # G x_k free response
    A = np.einsum("pn,knj->kpj", pc.G, pred.Gamma.reshape(N, n, N * m)).reshape(N * p, N * m)
    b = np.tile(pc.h, N) - GX.reshape(N * p)
    s = float(constraint_scale)
    return CondensedOcp(H=H, g=g, A_ineq=A / s, b_ineq=b / s,
                        lb=np.zeros(N * m), ub=np.ones(N * m),
                        const=const, constraint_scale=s)


def ocp_objective(ocp: CondensedOcp, U: np.ndarray) -> float:
    """Horizon tracking cost at an input sequence (constant term included)."""
    U = np.asarray(U, dtype=float)
    return float(0.5 * U @ ocp.H @ U + ocp.g @ U + ocp.const)


def assemble_step_ocp(pred: CondensedPrediction, w: Weights, pc: PathConstraint,
                      reference: ReferenceSignal, x0: np.ndarray, t: float,
                      constraint_scale: float = 1.0) -> CondensedOcp:
    """Condensed OCP at the measured state for the reference level at time t."""
    x_ref = build_reference_state(reference.level_at(t), np.asarray(x0).size)
    return condense_ocp(pred, w, pc, x0, x_ref, constraint_scale)
