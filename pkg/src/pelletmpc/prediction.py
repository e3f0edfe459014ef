"""Controller-side LTI prediction model.

Pipeline: numerical Jacobian of the plant vector field at an equilibrium
point, exact zero-order-hold discretization at the fast (ablation) sampling
time, tau-step extension so one input decision covers a full control
interval, and horizon condensation into stacked free/forced response maps.

The plant is generally not exactly at rest at the linearization point; the
residual drift f(x_eq, u_eq) is discretized alongside the input and folded
into the prediction as a constant per-step disturbance (optional).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


@dataclass
class ContinuousLinearModel:
    """Continuous-time linearization x_dot ~ f_eq + A_c (x-x_eq) + B_c (u-u_eq)."""

    A_c: np.ndarray
    B_c: np.ndarray
    x_eq: np.ndarray
    u_eq: np.ndarray
    f_eq: np.ndarray


@dataclass
class ExtendedLtiModel:
    """Discrete model over one control interval: x+ = A_bar x + B_bar u (+ d_bar).

    A_bar = A^tau and B_bar = A^(tau-1) B for the ZOH pair (A, B) at the
    fast sampling time, tau = T_s / T_s_zoh: the input acts during the
    first fast substep only, followed by tau-1 substeps of free evolution.
    """

    A_bar: np.ndarray
    B_bar: np.ndarray
    tau: int
    T_s: float
    T_s_zoh: float
    d_bar: np.ndarray | None = None
    x_eq: np.ndarray | None = None
    u_eq: np.ndarray | None = None


@dataclass
class CondensedPrediction:
    """Stacked horizon maps: block k of Phi x0 + Gamma U predicts x_{k+1|t}.

    With the affine drift enabled the prediction is, in deviation
    coordinates, Phi (x0 - x_eq) + Gamma U + d_stack; ``free_response``
    assembles the absolute free trajectory.
    """

    Phi: np.ndarray
    Gamma: np.ndarray
    N: int
    d_stack: np.ndarray
    x_eq: np.ndarray


def jacobian(f, x_eq: np.ndarray, u_eq, x_typical: np.ndarray | None = None,
             u_typical: float = 1.0, rel_step: float = 1e-6) -> ContinuousLinearModel:
    """Central finite-difference Jacobian of ``f`` at (x_eq, u_eq).

    Perturbations are scaled per component, h_i = rel_step * max(|x_i|,
    typical_i), which keeps the stencil sane across mixed magnitudes
    (densities near 1e20 next to temperatures of order 10).
    """
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = np.atleast_1d(np.asarray(u_eq, dtype=float))
    f0 = np.asarray(f(x_eq, u_eq), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise FloatingPointError("vector field is not finite at the linearization point")
    n, m = x_eq.size, u_eq.size
    typ = np.maximum(np.abs(x_eq), x_typical if x_typical is not None else 1.0)
    A = np.empty((n, n))
    for i in range(n):
        h = rel_step * typ[i]
        xp = x_eq.copy()
        xm = x_eq.copy()
        xp[i] += h
        xm[i] -= h
        A[:, i] = (np.asarray(f(xp, u_eq)) - np.asarray(f(xm, u_eq))) / (2.0 * h)
    B = np.empty((n, m))
    for j in range(m):
        h = rel_step * max(abs(u_eq[j]), u_typical)
        up = u_eq.copy()
        um = u_eq.copy()
        up[j] += h
        um[j] -= h
        B[:, j] = (np.asarray(f(x_eq, up)) - np.asarray(f(x_eq, um))) / (2.0 * h)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FloatingPointError("non-finite rhs at a perturbed point")
    return ContinuousLinearModel(A, B, x_eq, u_eq, f0)


def _zoh_pair(A_c: np.ndarray, cols: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH of (A_c, cols) via one augmented matrix exponential."""
    n = A_c.shape[0]
    m = cols.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c
    M[:n, n:] = cols
    E = expm(M * T)
    return E[:n, :n], E[:n, n:]


def zoh_discretize(model: ContinuousLinearModel, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact discretization A = exp(A_c T), B = int_0^T exp(A_c s) ds B_c.

    Computed from a single matrix exponential of the augmented block
    matrix (scaling-and-squaring Pade, via scipy).
    """
    if T <= 0:
        raise ValueError("sampling time must be positive")
    A, B = _zoh_pair(model.A_c, model.B_c, T)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FloatingPointError("matrix exponential overflowed")
    return A, B


def extend(A: np.ndarray, B: np.ndarray, tau: int, T_s_zoh: float = 0.005) -> ExtendedLtiModel:
    """Fold tau fast substeps into one decision step: A^tau and A^(tau-1) B."""
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be a positive integer")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A_bar = np.linalg.matrix_power(A, tau)
    B_bar = np.linalg.matrix_power(A, tau - 1) @ B
    return ExtendedLtiModel(A_bar, B_bar, tau, tau * T_s_zoh, T_s_zoh)


def build_extended_model(f, x_eq: np.ndarray, u_eq=0.0, T_s: float = 0.1,
                         T_s_zoh: float = 0.005, x_typical: np.ndarray | None = None,
                         include_drift: bool = True) -> ExtendedLtiModel:
    """Linearize, discretize, and extend the plant around (x_eq, u_eq)."""
    ratio = T_s / T_s_zoh
    tau = int(round(ratio))
    if tau < 1 or abs(ratio - tau) > 1e-9:
        raise ValueError("T_s must be an integer multiple of T_s_zoh")
    lin = jacobian(f, x_eq, u_eq, x_typical)
    A, B = _zoh_pair(lin.A_c, lin.B_c, T_s_zoh)
    model = extend(A, B, tau, T_s_zoh)
    n = lin.x_eq.size
    if include_drift:
        d = _zoh_pair(lin.A_c, lin.f_eq[:, None], T_s_zoh)[1][:, 0]
        acc = d.copy()
        cur = d.copy()
        for _ in range(tau - 1):
            cur = A @ cur
            acc += cur
        d_bar = acc
    else:
        d_bar = np.zeros(n)
    model.d_bar = d_bar
    model.x_eq = lin.x_eq
    model.u_eq = lin.u_eq
    return model


def condense(model: ExtendedLtiModel, N: int) -> CondensedPrediction:
    """Stack the extended model over an N-step horizon.

    Row-block k of Phi is A_bar^(k+1); Gamma block (k, j) is
    A_bar^(k-j) B_bar for j <= k and zero otherwise, so the input at step j
    cannot affect predictions at or before step j.
    """
    N = int(N)
    if N < 1:
        raise ValueError("horizon must be at least 1")
    A, B = model.A_bar, model.B_bar
    n = A.shape[0]
    m = B.shape[1]
    powers_B = [B]
    for _ in range(N - 1):
        powers_B.append(A @ powers_B[-1])
    Phi = np.empty((N * n, n))
    Gamma = np.zeros((N * n, N * m))
    Ak = A.copy()
    for k in range(N):
        Phi[k * n:(k + 1) * n] = Ak
        Ak = A @ Ak
        for j in range(k + 1):
            Gamma[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers_B[k - j]
    d_bar = model.d_bar if model.d_bar is not None else np.zeros(n)
    d_stack = np.empty(N * n)
    acc = d_bar.copy()
    d_stack[:n] = acc
    for k in range(1, N):
        acc = A @ acc + d_bar
        d_stack[k * n:(k + 1) * n] = acc
    x_eq = model.x_eq if model.x_eq is not None else np.zeros(n)
    return CondensedPrediction(Phi, Gamma, N, d_stack, x_eq)


def free_response(pred: CondensedPrediction, x0: np.ndarray) -> np.ndarray:
    """Stacked absolute state trajectory under zero input."""
    x0 = np.asarray(x0, dtype=float)
    return np.tile(pred.x_eq, pred.N) + pred.Phi @ (x0 - pred.x_eq) + pred.d_stack


def dump_matrices(model: ExtendedLtiModel, pred: CondensedPrediction, out_dir: str) -> None:
    """Debug dump of the prediction matrices as CSV files."""
    os.makedirs(out_dir, exist_ok=True)
    np.savetxt(os.path.join(out_dir, "A_bar.csv"), model.A_bar, delimiter=",")
    np.savetxt(os.path.join(out_dir, "B_bar.csv"), model.B_bar, delimiter=",")
    np.savetxt(os.path.join(out_dir, "Phi.csv"), pred.Phi, delimiter=",")
    np.savetxt(os.path.join(out_dir, "Gamma.csv"), pred.Gamma, delimiter=",")
