"""Dense convex QP solver: primal active set over box bounds plus general
linear inequalities.

    minimize    0.5 u' H u + g' u
    subject to  A u <= b,   lb <= u <= ub

Sized for condensed MPC subproblems: a couple of dozen variables and rows,
dense data, and heavy reuse of warm starts across closely related solves
(branch-and-bound nodes, successive control steps).  Variables with
lb == ub are eliminated by substitution before the iteration starts.

Constraint indexing in ``active_set``: rows 0..q-1 are the general
inequalities, q..q+d-1 the upper bounds, q+d..q+2d-1 the lower bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-9


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self.A_ineq = np.atleast_2d(np.asarray(self.A_ineq, dtype=float)) \
            if np.size(self.A_ineq) else np.zeros((0, self.g.size))
        self.b_ineq = np.atleast_1d(np.asarray(self.b_ineq, dtype=float)) \
            if np.size(self.b_ineq) else np.zeros(0)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        d = self.g.size
        if self.H.shape != (d, d) or self.lb.size != d or self.ub.size != d:
            raise ValueError("inconsistent QP dimensions")
        if self.A_ineq.shape[0] != self.b_ineq.size or (
                self.A_ineq.size and self.A_ineq.shape[1] != d):
            raise ValueError("inconsistent inequality dimensions")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    @property
    def d(self) -> int:
        return self.g.size

    @property
    def q(self) -> int:
        return self.b_ineq.size


@dataclass
class QpSolution:
    u_star: np.ndarray
    objective: float
    status: str                      # optimal | infeasible | iteration_limit
    active_set: tuple[int, ...] = ()
    iterations: int = 0
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jitter: float = 0.0
    phase1_iterations: int = 0
    max_violation: float = 0.0


def _phase1(A: np.ndarray, b: np.ndarray, lb: np.ndarray, ub: np.ndarray,
            x0: np.ndarray, tol: float) -> tuple[np.ndarray, bool, int]:
    """Find a point of {A x <= b, lb <= x <= ub} or certify none exists.

    Solves the elastic program min 0.5 s^2 subject to A x - s <= b over the
    box with the same active-set core; (x0, max-violation + 1) is strictly
    feasible for it, so no bootstrap is needed.  The optimal s is the
    smallest achievable worst violation, which certifies infeasibility
    whenever it exceeds ``tol``.
    """
    x = x0.copy()
    viol0 = float((A @ x - b).max())
    if viol0 <= tol:
        return x, True, 0
    d = x.size
    s0 = viol0 + 1.0
    H = np.zeros((d + 1, d + 1))
    H[d, d] = 1.0
    g = np.zeros(d + 1)
    C = np.vstack((np.hstack((A, -np.ones((A.shape[0], 1)))),
                   np.eye(d + 1), -np.eye(d + 1)))
    c = np.concatenate((b, ub, (s0 + 1.0,), -lb, (0.0,)))
    z0 = np.append(x, s0)
    z, status, _, _, iters = _asm_core(H, g, C, c, z0, 100 * (d + 1))
    s_star = float(z[d])
    return z[:d], s_star <= tol and status == "optimal", iters


def _independent_rows(C: np.ndarray, candidates: np.ndarray, limit: int,
                      tol: float = 1e-10) -> list[int]:
    """Greedy subset of ``candidates`` with linearly independent rows of C."""
    basis: list[np.ndarray] = []
    out: list[int] = []
    for i in candidates:
        if len(out) == limit:
            break
        v = C[i].astype(float, copy=True)
        nrm0 = np.linalg.norm(v)
        if nrm0 == 0.0:
            continue
        for bvec in basis:
            v -= (bvec @ v) * bvec
        nrm = np.linalg.norm(v)
        if nrm > tol * nrm0:
            basis.append(v / nrm)
            out.append(int(i))
    return out


def _asm_core(H: np.ndarray, g: np.ndarray, C: np.ndarray, c: np.ndarray,
              x0: np.ndarray, max_iter: int):
    """Primal active-set iteration for min 0.5 x'Hx + g'x s.t. C x <= c.

    Assumes ``x0`` satisfies the constraints (up to FEAS_TOL).  Equality
    subproblems are solved in range space against the jittered Hessian;
    ties in blocking constraints and in multiplier drops go to the
    smallest constraint index, which makes the active-set path
    deterministic.
    """
    d = g.size
    tr = float(np.trace(H))
    jitter = 1e-10 * (tr / d if tr > 0 else 1.0)
    Hj = H + jitter * np.eye(d)
    Hi = np.linalg.inv(Hj)

    x = x0
    slack = c - C @ x
    active0 = np.nonzero(slack <= FEAS_TOL * (1.0 + np.abs(c)))[0]
    W = _independent_rows(C, active0, d)

    iters = 0
    mu = np.zeros(0)
    while iters < max_iter:
        iters += 1
        grad = Hj @ x + g
        Hig = Hi @ grad
        if W:
            Aw = C[W]
            HiAt = Hi @ Aw.T
            S = Aw @ HiAt
            rhs = Aw @ Hig + (c[W] - Aw @ x)
            try:
                mu = -np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                mu = -np.linalg.lstsq(S, rhs, rcond=None)[0]
            p = -Hig - HiAt @ mu
        else:
            mu = np.zeros(0)
            p = -Hig
        if float(np.max(np.abs(p), initial=0.0)) <= 1e-11 * (1.0 + float(np.max(np.abs(x)))):
            if not W:
                return x, "optimal", W, mu, iters
            k = min(range(len(W)), key=lambda j: (mu[j], W[j]))
            if mu[k] >= -OPT_TOL:
                return x, "optimal", W, mu, iters
            W.pop(k)
            continue
        # ratio test against constraints outside the working set
        s = c - C @ x
        Cp = C @ p
        mask = np.ones(C.shape[0], dtype=bool)
        mask[W] = False
        mask &= Cp > 1e-12
        alpha = 1.0
        blocking = -1
        if mask.any():
            ids = np.nonzero(mask)[0]
            ratios = np.maximum(s[ids], 0.0) / Cp[ids]
            amin = float(ratios.min())
            if amin < 1.0:
                ties = ids[ratios <= amin + 1e-12]
                blocking = int(ties.min())
                alpha = amin
        x = x + alpha * p
        if blocking >= 0:
            W.append(blocking)
    return x, "iteration_limit", W, mu, iters


def _active_set_loop(H: np.ndarray, g: np.ndarray, A: np.ndarray, b: np.ndarray,
                     lb: np.ndarray, ub: np.ndarray, warm_x: np.ndarray | None,
                     max_iter: int):
    d = g.size
    q = b.size
    eye = np.eye(d)
    C = np.vstack((A, eye, -eye)) if q else np.vstack((eye, -eye))
    c = np.concatenate((b, ub, -lb)) if q else np.concatenate((ub, -lb))
    tr = float(np.trace(H))
    jitter = 1e-10 * (tr / d if tr > 0 else 1.0)

    x = np.clip(warm_x if warm_x is not None else np.zeros(d), lb, ub)
    p1_iters = 0
    if q:
        x, feasible, p1_iters = _phase1(A, b, lb, ub, x, FEAS_TOL)
        if not feasible:
            viol = float((A @ x - b).max())
            return x, "infeasible", [], np.zeros(0), 0, p1_iters, jitter, max(viol, 0.0)

    x, status, W, mu, iters = _asm_core(H, g, C, c, x, max_iter)
    viol = float(np.max(C @ x - c, initial=0.0))
    return x, status, W, mu, iters, p1_iters, jitter, max(viol, 0.0)


def solve(problem: QpProblem, warm: "QpSolution | np.ndarray | None" = None,
          max_iter: int | None = None) -> QpSolution:
    """Solve the QP, optionally warm-started from a previous solution.

    Only the warm point is reused; the initial working set is re-derived
    from the constraints active at that point, which makes a re-solve from
    the optimum terminate in a single iteration.
    """
    d = problem.d
    q = problem.q
    if max_iter is None:
        max_iter = 200 * d
    warm_x = None
    if warm is not None:
        warm_x = np.asarray(warm.u_star if isinstance(warm, QpSolution) else warm, dtype=float)
        if warm_x.size != d:
            raise ValueError("warm start has wrong dimension")

    fixed = problem.lb == problem.ub
    if fixed.all():
        u = problem.lb.copy()
        viol = float(np.max(problem.A_ineq @ u - problem.b_ineq, initial=0.0))
        status = "optimal" if viol <= FEAS_TOL else "infeasible"
        obj = float(0.5 * u @ problem.H @ u + problem.g @ u)
        return QpSolution(u, obj, status, (), 0, max_violation=max(viol, 0.0))

    free = ~fixed
    x_fix = problem.lb[fixed]
    Hr = problem.H[np.ix_(free, free)]
    gr = problem.g[free] + problem.H[np.ix_(free, fixed)] @ x_fix
    if q:
        Ar = problem.A_ineq[:, free]
        br = problem.b_ineq - problem.A_ineq[:, fixed] @ x_fix
    else:
        Ar = np.zeros((0, int(free.sum())))
        br = np.zeros(0)
    w0 = warm_x[free] if warm_x is not None else None

    xr, status, W, mu, iters, p1, jitter, viol = _active_set_loop(
        Hr, gr, Ar, br, problem.lb[free], problem.ub[free], w0, max_iter)

    u = np.empty(d)
    u[fixed] = x_fix
    u[free] = xr
    # map reduced constraint ids back to the full indexing
    free_idx = np.nonzero(free)[0]
    dr = free_idx.size
    mapped = []
    for rid in W:
        if rid < q:
            mapped.append(rid)
        elif rid < q + dr:
            mapped.append(q + int(free_idx[rid - q]))
        else:
            mapped.append(q + d + int(free_idx[rid - q - dr]))
    obj = float(0.5 * u @ problem.H @ u + problem.g @ u)
    return QpSolution(u, obj, status, tuple(mapped), iters,
                      multipliers=np.asarray(mu, dtype=float), jitter=jitter,
                      phase1_iterations=p1, max_violation=viol)
