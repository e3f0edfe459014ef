"""Penalty-term-homotopy controller with a log-barrier modification.

The binary requirement is relaxed to [0, 1] and replaced by a growing
concave penalty beta_j * u (1 - u); a log barrier -gamma_j * ln(h - G x)
on the stacked path-constraint rows pushes iterates off active constraints
so the homotopy cannot stall at fractional values there.  Iteration j = 0
solves the plain convex relaxation (both coefficients zero); afterwards
beta_j = beta_init * beta_inc^(j-1) and likewise for gamma.  Setting
gamma_init = 0 recovers the unmodified homotopy.

Each subproblem is smooth in the interior but not quadratic, so it is
minimized by a damped Newton method: a convexified quadratic model is
solved over the box and the hard path constraints by the active-set QP
engine, followed by a backtracking line search on the true objective with
a fraction-to-boundary cap that keeps barrier slacks strictly positive.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import qp
from .ocp import (CondensedOcp, PathConstraint, ReferenceSignal, Weights,
                  assemble_step_ocp, ocp_objective)
from .prediction import CondensedPrediction

log = logging.getLogger(__name__)


@dataclass
class PthSchedule:
    """Penalty/barrier growth schedule and stopping controls.

    The default coupling gamma_j = beta_(j+1) is obtained with
    gamma_init = beta_init * beta_inc and gamma_inc = beta_inc.
    """

    beta_init: float
    beta_inc: float
    gamma_init: float
    gamma_inc: float
    epsilon: float = 1e-3
    j_max: int = 25

    def __post_init__(self):
        if self.beta_inc <= 1.0:
            raise ValueError("beta_inc must exceed 1")
        if not (0.0 < self.epsilon < 0.5):
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.j_max < 1:
            raise ValueError("j_max must be at least 1")
        if self.beta_init <= 0 or self.gamma_init < 0:
            raise ValueError("beta_init must be positive, gamma_init nonnegative")

    def beta(self, j: int) -> float:
        return 0.0 if j == 0 else self.beta_init * self.beta_inc ** (j - 1)

    def gamma(self, j: int) -> float:
        return 0.0 if j == 0 else self.gamma_init * self.gamma_inc ** (j - 1)

    @classmethod
    def for_horizon(cls, N: int, beta_init: float | None = None, beta_inc: float = 3.0,
                    gamma_init: float | None = None, gamma_inc: float | None = None,
                    epsilon: float = 1e-3, j_max: int = 25) -> "PthSchedule":
        bi = 0.5 / N if beta_init is None else beta_init
        gi = bi * beta_inc if gamma_init is None else gamma_init
        gc = beta_inc if gamma_inc is None else gamma_inc
        return cls(bi, beta_inc, gi, gc, epsilon, j_max)


@dataclass
class PthResult:
    u_star: np.ndarray               # final relaxed iterate in [0, 1]^N
    u_rounded: np.ndarray            # nearest-integer sequence (zeros on exhaustion)
    j_used: int                      # subproblem solves performed
    converged: bool
    objective_true: float            # tracking cost of u_rounded, constant included
    cpu_time: float = 0.0
    inner_iterations: int = 0


def relaxed_objective(U: np.ndarray, ocp: CondensedOcp, beta: float,
                      gamma: float) -> tuple[float, np.ndarray]:
    """Value and gradient of the homotopy objective at U.

    Quadratic tracking part plus beta * sum u(1-u) minus gamma times the
    log of every path-constraint slack (terminal row included).  Requires
    strictly positive slacks whenever gamma > 0.
    """
    U = np.asarray(U, dtype=float)
    if np.any(U < -1e-9) or np.any(U > 1.0 + 1e-9):
        raise ValueError("U must lie in the unit box")
    val = float(0.5 * U @ ocp.H @ U + ocp.g @ U + ocp.const)
    grad = ocp.H @ U + ocp.g
    if beta != 0.0:
        val += beta * float(np.sum(U * (1.0 - U)))
        grad = grad + beta * (1.0 - 2.0 * U)
    if gamma != 0.0:
        s = ocp.b_ineq - ocp.A_ineq @ U
        if s.size and float(s.min()) <= 0.0:
            raise ValueError("barrier slack is nonpositive; iterate left the interior")
        if s.size:
            val -= gamma * float(np.log(s).sum())
            grad = grad + gamma * (ocp.A_ineq.T @ (1.0 / s))
    return val, grad


def _convexified_hessian(U: np.ndarray, ocp: CondensedOcp, beta: float,
                         gamma: float, floor: float = 1e-8) -> np.ndarray:
    H = ocp.H.copy()
    if beta != 0.0:
        H[np.diag_indices_from(H)] -= 2.0 * beta
    if gamma != 0.0 and ocp.b_ineq.size:
        s = ocp.b_ineq - ocp.A_ineq @ U
        H = H + gamma * (ocp.A_ineq.T * (1.0 / s**2)) @ ocp.A_ineq
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    if float(w.min()) < floor:
        H = (V * np.maximum(w, floor)) @ V.T
    return H


def _restore_interior(U: np.ndarray, ocp: CondensedOcp) -> np.ndarray | None:
    """Pull U along (1-theta) U until every slack clears 1e-6 |h|.

    Returns None when even U = 0 lacks strictly positive slack, in which
    case the caller drops the barrier for that subproblem.
    """
    if ocp.b_ineq.size == 0:
        return U
    delta = 1e-6 * np.abs(ocp.b_ineq) + 1e-15
    au = ocp.A_ineq @ U
    s = ocp.b_ineq - au
    if np.all(s >= delta):
        return U
    if np.any(ocp.b_ineq < delta):
        return None
    need = s < delta
    theta = float(np.max((delta[need] + au[need] - ocp.b_ineq[need]) / au[need]))
    if theta > 1.0:
        return None
    return (1.0 - max(theta, 0.0)) * U


def _projected_gradient_norm(U: np.ndarray, grad: np.ndarray, ocp: CondensedOcp) -> float:
    """Norm of U - proj_F(U - grad) with F the full feasible set."""
    target = U - grad
    proj = qp.solve(qp.QpProblem(np.eye(U.size), -target, ocp.A_ineq, ocp.b_ineq,
                                 ocp.lb, ocp.ub), warm=U)
    return float(np.linalg.norm(U - proj.u_star))


def solve_subproblem(ocp: CondensedOcp, beta: float, gamma: float,
                     warm: np.ndarray, max_iter: int = 500) -> tuple[np.ndarray, dict]:
    """Local minimizer of the relaxed objective over the feasible set.

    For beta = gamma = 0 this is the plain convex relaxation and is handed
    to the QP engine directly.
    """
    U = np.clip(np.asarray(warm, dtype=float), ocp.lb, ocp.ub)
    if beta == 0.0 and gamma == 0.0:
        sol = qp.solve(qp.QpProblem(ocp.H, ocp.g, ocp.A_ineq, ocp.b_ineq, ocp.lb, ocp.ub),
                       warm=U)
        return sol.u_star, {"iterations": sol.iterations,
                            "stationary": sol.status == "optimal",
                            "infeasible": sol.status == "infeasible"}
    if gamma > 0.0:
        restored = _restore_interior(U, ocp)
        if restored is None:
            log.warning("no strictly interior start available; dropping the barrier "
                        "for this homotopy iteration")
            gamma = 0.0
        else:
            U = restored
    gtol = 1e-7 * (1.0 + float(np.linalg.norm(ocp.g)))
    info = {"iterations": 0, "stationary": False, "infeasible": False}
    for _ in range(max_iter):
        info["iterations"] += 1
        val, grad = relaxed_objective(U, ocp, beta, gamma)
        Hm = _convexified_hessian(U, ocp, beta, gamma)
        model = qp.solve(qp.QpProblem(Hm, grad, ocp.A_ineq, ocp.b_ineq - ocp.A_ineq @ U,
                                      ocp.lb - U, ocp.ub - U))
        if model.status == "infeasible":
            info["infeasible"] = True
            break
        p = model.u_star
        if float(np.max(np.abs(p), initial=0.0)) <= 1e-10 * (1.0 + float(np.max(np.abs(U)))):
            info["stationary"] = _projected_gradient_norm(U, grad, ocp) <= gtol
            break
        alpha = 1.0
        if gamma > 0.0 and ocp.b_ineq.size:
            s = ocp.b_ineq - ocp.A_ineq @ U
            Ap = ocp.A_ineq @ p
            pos = Ap > 0
            if pos.any():
                alpha = min(1.0, 0.995 * float(np.min(s[pos] / Ap[pos])))
        decrement = float(grad @ p)
        accepted = False
        for _ in range(40):
            U_try = np.clip(U + alpha * p, ocp.lb, ocp.ub)
            try:
                val_try, _ = relaxed_objective(U_try, ocp, beta, gamma)
            except ValueError:
                alpha *= 0.5
                continue
            if val_try <= val + 1e-4 * alpha * decrement:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        U = U_try
    return U, info


def pth_homotopy(ocp: CondensedOcp, schedule: PthSchedule,
                 warm: np.ndarray | None = None) -> PthResult:
    """Run the homotopy until every entry is within epsilon of binary.

    On exhaustion of j_max the result is the safe all-zeros sequence with
    ``converged`` false.
    """
    t0 = time.perf_counter()
    d = ocp.g.size
    U = np.zeros(d) if warm is None else np.clip(np.asarray(warm, dtype=float), 0.0, 1.0)
    j = 0
    solves = 0
    inner = 0
    converged = False
    infeasible = False
    while True:
        U_new, info = solve_subproblem(ocp, schedule.beta(j), schedule.gamma(j), U)
        inner += info["iterations"]
        if info.get("infeasible"):
            infeasible = True
            break
        U = U_new
        solves += 1
        if float(np.max(np.minimum(U, 1.0 - U), initial=0.0)) <= schedule.epsilon:
            converged = True
        j += 1
        if converged or j >= schedule.j_max:
            break
    if infeasible:
        log.warning("relaxed problem infeasible; homotopy returns u = 0")
    u_rounded = np.rint(U) if converged else np.zeros(d)
    return PthResult(u_star=U, u_rounded=u_rounded, j_used=solves, converged=converged,
                     objective_true=ocp_objective(ocp, u_rounded),
                     cpu_time=time.perf_counter() - t0, inner_iterations=inner)


class PthMpcController:
    """Receding-horizon controller driven by the modified homotopy.

    Applies the first rounded input after re-checking the predicted path
    constraints; any violation beyond tolerance, or a non-converged
    homotopy, falls back to not firing.  The shifted rounded sequence
    warm-starts the next step.
    """

    def __init__(self, pred: CondensedPrediction, weights: Weights,
                 constraint: PathConstraint, reference: ReferenceSignal,
                 schedule: PthSchedule, constraint_scale: float = 1.0):
        self.pred = pred
        self.weights = weights
        self.constraint = constraint
        self.reference = reference
        self.schedule = schedule
        self.constraint_scale = constraint_scale
        self._warm: np.ndarray | None = None

    def control_step(self, x0: np.ndarray, t: float) -> tuple[int, dict]:
        ocp = assemble_step_ocp(self.pred, self.weights, self.constraint,
                                self.reference, x0, t, self.constraint_scale)
        res = pth_homotopy(ocp, self.schedule, warm=self._warm)
        fallback = not res.converged
        if res.converged and ocp.b_ineq.size:
            viol = float(np.max(ocp.A_ineq @ res.u_rounded - ocp.b_ineq))
            if viol > 1e-8:
                log.warning("rounded sequence violates the path constraint by %.3e; "
                            "falling back to u = 0", viol)
                fallback = True
        u0 = 0 if fallback else int(round(res.u_rounded[0]))
        shifted_from = np.zeros_like(res.u_rounded) if fallback else res.u_rounded
        self._warm = np.append(shifted_from[1:], 0.0)
        diag = {
            "objective": ocp_objective(ocp, np.zeros(ocp.g.size)) if fallback
            else res.objective_true,
            "j_used": res.j_used,
            "converged": res.converged,
            "inner_iterations": res.inner_iterations,
            "fallback": fallback,
            "cpu_s": res.cpu_time,
        }
        return u0, diag
