"""Small dense linear programs: bounded-variable primal simplex with Bland's rule.

Problems here have a few dozen variables and a handful of two-sided
constraints, so the basis is re-factorised from scratch every iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["LinearProgram", "LPResult", "solve_min", "dual_bound"]

FEAS_TOL = 1e-12
PIVOT_TOL = 1e-12
COST_TOL = 1e-12
MAX_ITER = 5000


@dataclass
class LinearProgram:
    """minimize c.x subject to lo_k <= a_k.x <= hi_k and l_i <= x_i <= u_i.

    Infinite constraint sides are allowed (``-inf``/``inf``); variable lower
    bounds must be finite.
    """

    objective: np.ndarray
    constraints: list[tuple[np.ndarray, float, float]] = field(default_factory=list)
    variable_bounds: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = len(self.objective)
        if self.variable_bounds is None:
            self.variable_bounds = [(0.0, math.inf)] * n
        if len(self.variable_bounds) != n:
            raise ValueError("one (lo, hi) pair per variable is required")
        cons = []
        for a, lo, hi in self.constraints:
            a = np.asarray(a, dtype=float)
            if a.shape != (n,):
                raise ValueError(f"constraint has {a.shape} coefficients, expected {n}")
            if lo > hi:
                raise ValueError(f"constraint bounds out of order: {lo} > {hi}")
            cons.append((a, float(lo), float(hi)))
        self.constraints = cons
        for lo, hi in self.variable_bounds:
            if not math.isfinite(lo):
                raise ValueError("variable lower bounds must be finite")
            if lo > hi:
                raise ValueError(f"variable bounds out of order: {lo} > {hi}")

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def is_feasible(self, x: Sequence[float], tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        for (lo, hi), xi in zip(self.variable_bounds, x):
            if xi < lo - tol or xi > hi + tol:
                return False
        for a, lo, hi in self.constraints:
            v = float(a @ x)
            if v < lo - tol or v > hi + tol:
                return False
        return True


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float
    point: np.ndarray | None
    iterations: int = 0
    # per constraint: multipliers of the lower and upper side, both >= 0
    duals: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Simplex:
    """Revised bounded simplex on  A x = b, 0 <= x <= u."""

    def __init__(self, A: np.ndarray, b: np.ndarray, u: np.ndarray, basis: list[int]):
        self.A = A
        self.b = b
        self.u = u
        self.m, self.n = A.shape
        self.basis = list(basis)
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.iterations = 0

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.u, 0.0)
        x[self.basis] = 0.0
        B = self.A[:, self.basis]
        x[self.basis] = np.linalg.solve(B, self.b - self.A @ x)
        return x

    def multipliers(self, c: np.ndarray) -> np.ndarray:
        B = self.A[:, self.basis]
        return np.linalg.solve(B.T, c[self.basis])

    def run(self, c: np.ndarray) -> str:
        while True:
            if self.iterations >= MAX_ITER:
                raise RuntimeError("simplex iteration limit reached")
            x = self.values()
            y = self.multipliers(c)
            d = c - self.A.T @ y
            in_basis = np.zeros(self.n, dtype=bool)
            in_basis[self.basis] = True
            entering = -1
            # Bland: lowest-index improving nonbasic variable
            for j in range(self.n):
                if in_basis[j]:
                    continue
                if not self.at_upper[j] and d[j] < -COST_TOL and self.u[j] > 0:
                    entering, direction = j, 1.0
                    break
                if self.at_upper[j] and d[j] > COST_TOL:
                    entering, direction = j, -1.0
                    break
            if entering < 0:
                return "optimal"
            self.iterations += 1

            B = self.A[:, self.basis]
            w = np.linalg.solve(B, self.A[:, entering])
            step = self.u[entering]  # bound flip of the entering variable
            leave_row, leave_to_upper = -1, False
            for i, var in enumerate(self.basis):
                alpha = direction * w[i]
                if alpha > PIVOT_TOL:
                    limit = max(x[var], 0.0) / alpha
                    to_upper = False
                elif alpha < -PIVOT_TOL and math.isfinite(self.u[var]):
                    limit = max(self.u[var] - x[var], 0.0) / -alpha
                    to_upper = True
                else:
                    continue
                if limit < step - FEAS_TOL * 1e-3 or (
                    leave_row >= 0 and abs(limit - step) <= FEAS_TOL * 1e-3 and var < self.basis[leave_row]
                ):
                    step, leave_row, leave_to_upper = limit, i, to_upper
            if not math.isfinite(step):
                return "unbounded"
            if leave_row < 0:
                self.at_upper[entering] = not self.at_upper[entering]
                continue
            leaving = self.basis[leave_row]
            self.basis[leave_row] = entering
            self.at_upper[entering] = False
            self.at_upper[leaving] = leave_to_upper


def _standard_form(lp: LinearProgram):
    """Rows G x' <= h over shifted variables x' = x - l in [0, u - l]."""
    lower = np.array([lo for lo, _ in lp.variable_bounds])
    upper = np.array([hi for _, hi in lp.variable_bounds])
    rows, rhs, origin = [], [], []
    for k, (a, lo, hi) in enumerate(lp.constraints):
        shift = float(a @ lower)
        if math.isfinite(hi):
            rows.append(a)
            rhs.append(hi - shift)
            origin.append((k, 1))
        if math.isfinite(lo):
            rows.append(-a)
            rhs.append(-(lo - shift))
            origin.append((k, 0))
    G = np.array(rows, dtype=float).reshape(len(rows), lp.n_vars)
    return G, np.array(rhs, dtype=float), lower, upper - lower, origin


def solve_min(lp: LinearProgram) -> LPResult:
    """Minimise ``lp``; infeasibility and unboundedness are reported as statuses."""
    G, h, shift, width, origin = _standard_form(lp)
    n = lp.n_vars
    m = len(h)
    if m == 0:
        # box only: each variable sits at the bound favoured by its cost
        x = np.where(lp.objective >= 0, 0.0, width)
        if np.any(~np.isfinite(x)):
            return LPResult("unbounded", -math.inf, None)
        point = shift + x
        return LPResult("optimal", float(lp.objective @ point), point, 0, np.zeros((len(lp.constraints), 2)))

    neg = h < 0
    k = int(neg.sum())
    # columns: x' (n) | slacks (m) | artificials (k)
    A = np.zeros((m, n + m + k))
    b = np.where(neg, -h, h)
    sign = np.where(neg, -1.0, 1.0)
    A[:, :n] = G * sign[:, None]
    A[np.arange(m), n + np.arange(m)] = sign
    basis = []
    art = 0
    for i in range(m):
        if neg[i]:
            A[i, n + m + art] = 1.0
            basis.append(n + m + art)
            art += 1
        else:
            basis.append(n + i)
    u = np.concatenate([width, np.full(m, math.inf), np.full(k, math.inf)])
    sx = _Simplex(A, b, u, basis)

    if k:
        c1 = np.zeros(n + m + k)
        c1[n + m:] = 1.0
        sx.run(c1)
        x = sx.values()
        if x[n + m:].sum() > FEAS_TOL * max(1.0, np.abs(b).max()):
            return LPResult("infeasible", math.nan, None, sx.iterations)
        # pin artificials at zero and pivot any basic ones out where possible
        sx.u[n + m:] = 0.0
        for r, var in enumerate(list(sx.basis)):
            if var < n + m:
                continue
            B = A[:, sx.basis]
            row = np.linalg.solve(B.T, np.eye(m)[r]) @ A[:, : n + m]
            for j in np.argsort(-np.abs(row)):
                if j not in sx.basis and abs(row[j]) > 1e-9:
                    sx.basis[r] = int(j)
                    sx.at_upper[j] = False
                    break

    c2 = np.concatenate([lp.objective, np.zeros(m + k)])
    status = sx.run(c2)
    if status != "optimal":
        return LPResult(status, -math.inf, None, sx.iterations)
    x = sx.values()
    point = shift + np.clip(x[:n], 0.0, width)
    y = sx.multipliers(c2)
    # row i of G x' <= h carries multiplier -y_i * sign_i >= 0
    lam = np.clip(-(y * sign), 0.0, None)
    duals = np.zeros((len(lp.constraints), 2))
    for i, (kk, side) in enumerate(origin):
        duals[kk, side] = lam[i]
    return LPResult("optimal", float(lp.objective @ point), point, sx.iterations, duals)


def dual_bound(lp: LinearProgram, duals: np.ndarray) -> float:
    """Lagrangian lower bound on the optimum for non-negative constraint multipliers.

    For any ``duals >= 0`` the result is <= the true minimum; equality certifies
    optimality of a primal point with the same objective value.
    """
    duals = np.clip(np.asarray(duals, dtype=float), 0.0, None)
    d = lp.objective.copy()
    const = 0.0
    for (a, lo, hi), (l_lo, l_hi) in zip(lp.constraints, duals):
        if l_lo > 0:
            d -= l_lo * a
            const += l_lo * lo
        if l_hi > 0:
            d += l_hi * a
            const -= l_hi * hi
    total = const
    for dj, (lo, hi) in zip(d, lp.variable_bounds):
        if dj >= 0:
            total += dj * lo
        elif math.isfinite(hi):
            total += dj * hi
        else:
            return -math.inf
    return total
