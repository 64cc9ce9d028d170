"""Dense bounded-variable primal simplex for the small LPs of this package.

    minimize    c^T x
    subject to  A x <= b,  lb <= x <= ub

Phase 1 minimizes the sum of artificial variables, phase 2 the real objective.
Pricing is Dantzig (largest reduced cost); after a run of degenerate pivots it
switches to Bland's rule until progress resumes, which rules out cycling.
Nonbasic variables sit at one of their bounds, so the bounds never become rows.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from app.errors import LPDimensionError, LPIterationLimitError

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
OPTIMALITY_TOL = 1e-9
PIVOT_TOL = 1e-11
SOLUTION_TOL = 1e-7
DEGENERATE_RUN_BEFORE_BLAND = 50


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class StandardLP:
    """min c^T x s.t. A x <= b, lb <= x <= ub.

    Bounds may be infinite (a free variable has lb=-inf, ub=+inf); every entry of
    c, A and b must be finite.
    """
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        lb = np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.asarray(self.ub, dtype=float).reshape(-1)

        if A.ndim != 2 or A.shape[1] != n:
            raise LPDimensionError(f"A has shape {A.shape}, expected (m, {n})")
        if b.size != A.shape[0]:
            raise LPDimensionError(f"b has length {b.size}, expected {A.shape[0]}")
        if lb.size != n or ub.size != n:
            raise LPDimensionError(f"bounds have lengths {lb.size}/{ub.size}, expected {n}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise LPDimensionError("c, A and b must be finite")
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
            raise LPDimensionError("bounds must not be NaN")
        if np.any(lb > ub) or np.any(lb == np.inf) or np.any(ub == -np.inf):
            raise LPDimensionError("every variable needs lb <= ub with lb < inf and ub > -inf")

        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def max_violation(self, x: np.ndarray) -> float:
        """Largest violation of A x <= b and of the bounds at x (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        rows = self.A @ x - self.b if self.m else np.zeros(0)
        parts = [np.maximum(rows, 0.0), np.maximum(self.lb - x, 0.0), np.maximum(x - self.ub, 0.0)]
        return float(max((p.max() if p.size else 0.0) for p in parts))


@dataclass(frozen=True)
class LPSolution:
    status: LPStatus
    x: Optional[np.ndarray]
    objective: float
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == LPStatus.OPTIMAL


class _BoundedSimplex:
    """One solve of one problem; all state lives on the instance."""

    def __init__(self, problem: StandardLP):
        self.problem = problem
        self.iterations = 0
        self._shift_columns()

    def _shift_columns(self):
        # Every column becomes 0 <= x' <= u: x = lb + x', x = ub - x', or x = x+ - x-.
        p = self.problem
        cols: List[np.ndarray] = []
        costs: List[float] = []
        uppers: List[float] = []
        origin: List[Tuple[int, float]] = []
        offset = np.zeros(p.n)
        for j in range(p.n):
            lo, hi, a = p.lb[j], p.ub[j], p.A[:, j]
            if np.isfinite(lo):
                offset[j] = lo
                cols.append(a); costs.append(p.c[j]); uppers.append(hi - lo); origin.append((j, 1.0))
            elif np.isfinite(hi):
                offset[j] = hi
                cols.append(-a); costs.append(-p.c[j]); uppers.append(np.inf); origin.append((j, -1.0))
            else:
                cols.append(a); costs.append(p.c[j]); uppers.append(np.inf); origin.append((j, 1.0))
                cols.append(-a); costs.append(-p.c[j]); uppers.append(np.inf); origin.append((j, -1.0))

        self.A1 = np.column_stack(cols) if cols else np.zeros((p.m, 0))
        self.c1 = np.asarray(costs, dtype=float)
        self.u1 = np.asarray(uppers, dtype=float)
        self.offset = offset
        self.origin_index = np.asarray([o[0] for o in origin], dtype=int)
        self.origin_sign = np.asarray([o[1] for o in origin], dtype=float)
        self.rhs = p.b - p.A @ offset if p.m else np.zeros(0)

    def _crash(self) -> Tuple[np.ndarray, np.ndarray]:
        """Greedy choice of starting bounds that lowers the total row infeasibility."""
        at_upper = np.zeros(self.A1.shape[1], dtype=bool)
        residual = self.rhs.copy()
        infeasibility = np.maximum(-residual, 0.0).sum()
        for j in range(self.A1.shape[1]):
            u = self.u1[j]
            if not np.isfinite(u) or u <= 0.0:
                continue
            trial = residual - self.A1[:, j] * u
            trial_infeasibility = np.maximum(-trial, 0.0).sum()
            if trial_infeasibility < infeasibility - FEASIBILITY_TOL:
                at_upper[j] = True
                residual = trial
                infeasibility = trial_infeasibility
        return at_upper, residual

    def _run(self, T, basis, beta, upper, at_upper, cost, allowed) -> str:
        m, width = T.shape
        is_basic = np.zeros(width, dtype=bool)
        is_basic[basis] = True
        d = cost - cost[basis] @ T
        degenerate_run = 0
        max_iter = 50 * (m + width) + 100

        for _ in range(max_iter):
            eligible = allowed & ~is_basic & (
                (~at_upper & (d < -OPTIMALITY_TOL)) | (at_upper & (d > OPTIMALITY_TOL))
            )
            if not eligible.any():
                return "optimal"
            self.iterations += 1
            idx = np.flatnonzero(eligible)
            if degenerate_run > DEGENERATE_RUN_BEFORE_BLAND:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(d[idx]))])

            direction = -1.0 if at_upper[j] else 1.0
            alpha = direction * T[:, j]
            basic_upper = upper[basis]

            ratios = np.full(m, np.inf)
            dec = alpha > PIVOT_TOL
            ratios[dec] = np.maximum(beta[dec], 0.0) / alpha[dec]
            inc = (alpha < -PIVOT_TOL) & np.isfinite(basic_upper)
            ratios[inc] = np.maximum(basic_upper[inc] - beta[inc], 0.0) / -alpha[inc]
            theta_rows = ratios.min() if m else np.inf
            flip = upper[j]

            if not np.isfinite(flip) and not np.isfinite(theta_rows):
                return "unbounded"

            if flip <= theta_rows:
                beta -= flip * alpha
                at_upper[j] = not at_upper[j]
                degenerate_run = degenerate_run + 1 if flip <= FEASIBILITY_TOL else 0
                continue

            ties = np.flatnonzero(ratios <= theta_rows + 1e-12 * max(1.0, theta_rows))
            r = int(ties[np.argmin(basis[ties])])
            theta = ratios[r]
            leaving = int(basis[r])
            leave_to_upper = bool(alpha[r] < 0)

            beta -= theta * alpha
            beta[r] = theta if direction > 0 else upper[j] - theta

            pivot_row = T[r] / T[r, j]
            factors = T[:, j].copy()
            factors[r] = 0.0
            nz = np.flatnonzero(factors)
            if nz.size:
                T[nz] -= np.outer(factors[nz], pivot_row)
            T[r] = pivot_row
            d -= d[j] * pivot_row

            basis[r] = j
            is_basic[j] = True
            is_basic[leaving] = False
            at_upper[j] = False
            at_upper[leaving] = leave_to_upper
            degenerate_run = degenerate_run + 1 if theta <= FEASIBILITY_TOL else 0

        raise LPIterationLimitError(f"simplex did not terminate within {max_iter} iterations")

    def solve(self) -> LPSolution:
        p = self.problem
        m, n1 = self.A1.shape
        start_upper, residual = self._crash()

        negative = residual < 0.0
        art_rows = np.flatnonzero(negative)
        n_art = art_rows.size
        art_start = n1 + m
        width = art_start + n_art

        T = np.zeros((m, width))
        T[:, :n1] = self.A1
        T[:, n1:art_start] = np.eye(m)
        T[:, :art_start] *= np.where(negative, -1.0, 1.0)[:, None]
        T[art_rows, art_start + np.arange(n_art)] = 1.0

        basis = n1 + np.arange(m)
        basis[art_rows] = art_start + np.arange(n_art)
        beta = np.abs(residual)
        upper = np.concatenate([self.u1, np.full(m + n_art, np.inf)])
        at_upper = np.concatenate([start_upper, np.zeros(m + n_art, dtype=bool)])

        if n_art:
            cost = np.zeros(width)
            cost[art_start:] = 1.0
            if self._run(T, basis, beta, upper, at_upper, cost, np.ones(width, dtype=bool)) != "optimal":
                raise LPIterationLimitError("phase 1 reported an unbounded ray")
            remaining = beta[basis >= art_start].sum()
            scale = 1.0 + (np.abs(self.rhs).max() if m else 0.0)
            if remaining > FEASIBILITY_TOL * scale:
                logger.debug(f"LP infeasible: phase 1 residual {remaining:.3e}")
                return LPSolution(LPStatus.INFEASIBLE, None, float("nan"), self.iterations)
            upper[art_start:] = 0.0

        cost = np.zeros(width)
        cost[:n1] = self.c1
        allowed = np.ones(width, dtype=bool)
        allowed[art_start:] = False
        if self._run(T, basis, beta, upper, at_upper, cost, allowed) == "unbounded":
            return LPSolution(LPStatus.UNBOUNDED, None, float("-inf"), self.iterations)

        values = np.where(at_upper, upper, 0.0)
        values[basis] = beta
        x = self.offset.copy()
        np.add.at(x, self.origin_index, self.origin_sign * values[:n1])
        x = np.clip(x, p.lb, p.ub)

        violation = p.max_violation(x)
        if violation > SOLUTION_TOL * (1.0 + (np.abs(p.b).max() if p.m else 0.0)):
            logger.warning(f"LP solution violates constraints by {violation:.3e}")
        return LPSolution(LPStatus.OPTIMAL, x, float(p.c @ x), self.iterations)


def solve_lp(problem: StandardLP) -> LPSolution:
    """Solve ``problem``; the same input always yields the same output."""
    return _BoundedSimplex(problem).solve()
