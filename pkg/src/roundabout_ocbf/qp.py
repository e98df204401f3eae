"""Exact solver for the per-step tracking QP in ``(u, e)``.

    minimize    relax_weight * e^2 + (u - u_ref)^2 / 2
    subject to  a_u * u + a_e * e <= rhs   for every row

Two variables and a handful of rows, so every active set of size 0, 1 or 2
is tried and the KKT point that is primal and dual feasible is kept. The
cost is strictly convex, which makes that point the unique minimiser.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

FEAS_TOL = 1e-9
DUAL_TOL = 1e-10


@dataclass(frozen=True)
class Row:
    """Affine constraint ``a_u * u + a_e * e <= rhs``."""

    a_u: float
    a_e: float
    rhs: float
    label: str = ""
    hard: bool = True

    def slack(self, u: float, e: float) -> float:
        return self.rhs - self.a_u * u - self.a_e * e


@dataclass
class QpProblem:
    u_ref: float
    rows: list[Row] = field(default_factory=list)
    relax_weight: float = 1.0

    def __post_init__(self):
        if not self.relax_weight > 0:
            raise ValueError("relax_weight must be positive for a strictly convex cost")

    def objective(self, u: float, e: float) -> float:
        return self.relax_weight * e * e + 0.5 * (u - self.u_ref) ** 2

    def max_violation(self, u: float, e: float) -> float:
        return max((-r.slack(u, e) for r in self.rows), default=0.0)


@dataclass(frozen=True)
class QpSolution:
    u: float
    e: float
    feasible: bool
    active: tuple[str, ...] = ()
    multipliers: tuple[float, ...] = ()
    objective: float = float("nan")


def _candidate(problem: QpProblem, rows: tuple[Row, ...]):
    """KKT point with ``rows`` held at equality, or None when degenerate."""
    h_u, h_e = 1.0, 2.0 * problem.relax_weight
    u0, e0 = problem.u_ref, 0.0
    if not rows:
        return u0, e0, ()
    if len(rows) == 1:
        r = rows[0]
        denom = r.a_u**2 / h_u + r.a_e**2 / h_e
        if denom <= 1e-14:
            return None
        lam = (r.a_u * u0 + r.a_e * e0 - r.rhs) / denom
        return u0 - lam * r.a_u / h_u, e0 - lam * r.a_e / h_e, (lam,)
    r1, r2 = rows
    det = r1.a_u * r2.a_e - r1.a_e * r2.a_u
    scale = max(abs(r1.a_u), abs(r1.a_e), 1e-300) * max(abs(r2.a_u), abs(r2.a_e), 1e-300)
    if abs(det) <= 1e-12 * scale:
        return None
    u = (r1.rhs * r2.a_e - r1.a_e * r2.rhs) / det
    e = (r1.a_u * r2.rhs - r1.rhs * r2.a_u) / det
    # stationarity: H z + c + A^T lam = 0
    g_u = -h_u * (u - u0)
    g_e = -h_e * (e - e0)
    lam1 = (g_u * r2.a_e - r2.a_u * g_e) / det
    lam2 = (r1.a_u * g_e - g_u * r1.a_e) / det
    return u, e, (lam1, lam2)


def hard_interval(rows: list[Row]) -> tuple[float, float, bool]:
    """Bounds on ``u`` implied by the rows without a relaxation term."""
    lo, hi, ok = float("-inf"), float("inf"), True
    for r in rows:
        if r.a_e != 0.0:
            continue
        if r.a_u > 0:
            hi = min(hi, r.rhs / r.a_u)
        elif r.a_u < 0:
            lo = max(lo, r.rhs / r.a_u)
        elif r.rhs < -FEAS_TOL:
            ok = False
    return lo, hi, ok


def solve_step_qp(problem: QpProblem) -> QpSolution:
    rows = problem.rows
    best = None
    for k in (0, 1, 2):
        for subset in itertools.combinations(range(len(rows)), k):
            cand = _candidate(problem, tuple(rows[i] for i in subset))
            if cand is None:
                continue
            u, e, lam = cand
            if any(m < -DUAL_TOL * max(1.0, abs(m)) for m in lam):
                continue
            scale = 1.0 + abs(u) + abs(e)
            if any(r.slack(u, e) < -FEAS_TOL * max(scale, abs(r.rhs)) for r in rows):
                continue
            obj = problem.objective(u, e)
            if best is None or obj < best[0]:
                best = (obj, u, e, tuple(rows[i].label for i in subset), lam)
    if best is None:
        return QpSolution(problem.u_ref, 0.0, False)
    obj, u, e, active, lam = best
    return QpSolution(u, e, True, active, tuple(lam), obj)
