"""Budgeted treatment allocation through the Lagrangian dual.

Each merchant takes ``argmax_c f(i, c) - lam * c``. Spend is non-increasing in
``lam``, so bisection finds the smallest feasible multiplier; leftover budget is
then spent greedily on single-merchant upgrades. The dual value at any ``lam``
upper-bounds the integer optimum, which gives an auditable ``gap_bound``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleBudgetError, NonFiniteError, NonIntegerCostsError, TooLargeError

LAMBDA_TOL = 1e-9
ORACLE_MAX_CELLS = 10**7
_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """``scores[i, k]`` is the predicted objective of merchant ``i`` at ``treatments[k]``."""

    merchants: np.ndarray
    treatments: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.treatments, dtype=np.float64).ravel()
        s = np.asarray(self.scores, dtype=np.float64)
        m = np.asarray(self.merchants)
        if c.size < 1:
            raise ValueError("need at least one treatment")
        if np.any(np.diff(c) <= 0):
            raise ValueError("treatments must be strictly increasing")
        if s.ndim != 2 or s.shape != (m.size, c.size):
            raise ValueError(f"scores shape {s.shape} does not match ({m.size}, {c.size})")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(c))):
            raise NonFiniteError("score table contains NaN or Inf")
        object.__setattr__(self, "treatments", c)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "merchants", m)

    @classmethod
    def from_curves(cls, merchants, gradients, intercepts, treatments) -> "ScoreTable":
        c = np.asarray(treatments, dtype=np.float64)
        g = np.asarray(gradients, dtype=np.float64)[:, None]
        p = np.asarray(intercepts, dtype=np.float64)[:, None]
        return cls(np.asarray(merchants), c, g * c[None, :] + p)

    @property
    def size(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True, eq=False)
class AllocationPlan:
    assignment: np.ndarray  # treatment index per merchant
    total_spend: float
    total_objective: float
    lam: float
    gap_bound: float
    budget: float
    dual_assignment: np.ndarray  # best response at ``lam`` before residual upgrades

    def treatments(self, table: ScoreTable) -> np.ndarray:
        return table.treatments[self.assignment]

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "total_spend": self.total_spend,
            "total_objective": self.total_objective,
            "gap_bound": self.gap_bound,
            "budget": self.budget,
        }


def best_response(table: ScoreTable, lam: float) -> np.ndarray:
    """Per merchant ``argmax_c f(i, c) - lam * c``; near-ties go to the cheapest ``c``."""
    if not math.isfinite(lam):
        raise NonFiniteError("lambda must be finite")
    if table.size == 0:
        return np.zeros(0, dtype=np.int64)
    val = table.scores - lam * table.treatments[None, :]
    top = val.max(axis=1, keepdims=True)
    tol = _TIE_RTOL * np.maximum(np.abs(table.scores).max(axis=1, keepdims=True) + abs(lam) * table.treatments[-1], 1.0)
    return np.argmax(val >= top - tol, axis=1)


def spend(table: ScoreTable, assignment) -> float:
    return float(table.treatments[np.asarray(assignment, dtype=np.int64)].sum())


def objective(table: ScoreTable, assignment) -> float:
    a = np.asarray(assignment, dtype=np.int64)
    return float(table.scores[np.arange(table.size), a].sum())


def dual_value(table: ScoreTable, lam: float, budget: float) -> float:
    """Lagrangian dual ``sum_i max_c (f - lam c) + lam B``; never below the optimum."""
    val = table.scores - lam * table.treatments[None, :]
    return float(val.max(axis=1).sum() + lam * budget)


def _lambda_upper(table: ScoreTable) -> float:
    # above the steepest score slope relative to the cheapest treatment, everyone takes min(C)
    c = table.treatments
    if c.size == 1 or table.size == 0:
        return 0.0
    slopes = (table.scores[:, 1:] - table.scores[:, :1]) / (c[1:] - c[0])
    return max(float(slopes.max()), 0.0) * (1.0 + 1e-9) + 1.0


def _greedy_upgrade(table: ScoreTable, assignment: np.ndarray, budget: float) -> np.ndarray:
    a = assignment.copy()
    c = table.treatments
    rows = np.arange(table.size)
    slack = budget - spend(table, a)
    while True:
        d_cost = c[None, :] - c[a][:, None]
        d_obj = table.scores - table.scores[rows, a][:, None]
        ok = (d_cost > 0) & (d_cost <= slack + 1e-12 * max(budget, 1.0)) & (d_obj > 0)
        if not ok.any():
            return a
        ratio = np.where(ok, d_obj / np.where(d_cost > 0, d_cost, 1.0), -np.inf)
        i, k = np.unravel_index(np.argmax(ratio), ratio.shape)
        slack -= d_cost[i, k]
        a[i] = k


def solve_budget(table: ScoreTable, budget: float) -> AllocationPlan:
    """One treatment per merchant maximizing total predicted objective within ``budget``."""
    if not math.isfinite(budget):
        raise NonFiniteError("budget must be finite")
    c = table.treatments
    min_spend = table.size * c[0]
    if min_spend > budget:
        raise InfeasibleBudgetError(f"infeasible budget: minimum spend {min_spend:g} exceeds {budget:g}")

    lo, hi = 0.0, _lambda_upper(table)
    a_hi = best_response(table, hi)
    bound = dual_value(table, hi, budget)
    a0 = best_response(table, 0.0)
    if spend(table, a0) <= budget:
        hi, a_hi = 0.0, a0
        bound = min(bound, dual_value(table, 0.0, budget))
    else:
        while hi - lo > LAMBDA_TOL * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            a_mid = best_response(table, mid)
            bound = min(bound, dual_value(table, mid, budget))
            if spend(table, a_mid) <= budget:
                hi, a_hi = mid, a_mid
            else:
                lo = mid
    final = _greedy_upgrade(table, a_hi, budget)
    total = objective(table, final)
    return AllocationPlan(
        assignment=final,
        total_spend=spend(table, final),
        total_objective=total,
        lam=hi,
        gap_bound=max(bound - total, 0.0),
        budget=float(budget),
        dual_assignment=a_hi,
    )


def _integer_scale(values: np.ndarray, max_scale: int = 10**6) -> int:
    scale = 1
    while scale <= max_scale:
        scaled = values * scale
        if np.all(np.abs(scaled - np.round(scaled)) <= 1e-9 * np.maximum(1.0, np.abs(scaled))):
            return scale
        scale *= 10
    raise NonIntegerCostsError("treatments are not integers after decimal scaling up to 1e6")


def lp_oracle(table: ScoreTable, budget: float) -> tuple[np.ndarray, float]:
    """Exact optimum by multiple-choice knapsack dynamic programming over budget.

    Costs are scaled by a power of ten until integral; the table must fit in
    ``ORACLE_MAX_CELLS`` merchant-by-budget cells.
    """
    c = table.treatments
    scale = _integer_scale(c)
    cost = np.round(c * scale).astype(np.int64)
    cap = int(math.floor(budget * scale + 1e-9))
    M = table.size
    if M * (cap + 1) > ORACLE_MAX_CELLS:
        raise TooLargeError(f"{M} merchants x {cap + 1} budget cells exceeds {ORACLE_MAX_CELLS}")
    if M * cost[0] > cap:
        raise InfeasibleBudgetError(f"infeasible budget: minimum spend {M * c[0]:g} exceeds {budget:g}")

    neg = -np.inf
    best = np.zeros(cap + 1)  # best[b]: max objective of processed merchants with spend <= b
    choice = np.zeros((M, cap + 1), dtype=np.int16)
    for i in range(M):
        nxt = np.full(cap + 1, neg)
        pick = np.zeros(cap + 1, dtype=np.int16)
        for k in range(c.size):
            w = cost[k]
            if w > cap:
                break
            cand = np.full(cap + 1, neg)
            cand[w:] = best[:cap + 1 - w] + table.scores[i, k]
            better = cand > nxt
            nxt[better] = cand[better]
            pick[better] = k
        best = nxt
        choice[i] = pick
    assign = np.zeros(M, dtype=np.int64)
    b = cap
    for i in range(M - 1, -1, -1):
        k = int(choice[i, b])
        assign[i] = k
        b -= cost[k]
    return assign, objective(table, assign)


def brute_force(table: ScoreTable, budget: float) -> tuple[np.ndarray, float]:
    """Exhaustive search over all ``|C|^M`` assignments (tiny instances only)."""
    M, K = table.scores.shape
    if K ** M > 2_000_000:
        raise TooLargeError("brute force limited to 2e6 assignments")
    grids = np.stack(np.meshgrid(*[np.arange(K)] * M, indexing="ij"), axis=-1).reshape(-1, M) if M else np.zeros((1, 0), np.int64)
    spends = table.treatments[grids].sum(axis=1)
    objs = table.scores[np.arange(M)[None, :], grids].sum(axis=1)
    feasible = spends <= budget + 1e-9
    if not feasible.any():
        raise InfeasibleBudgetError("no feasible assignment")
    objs = np.where(feasible, objs, -np.inf)
    j = int(np.argmax(objs))
    return grids[j].astype(np.int64), float(objs[j])
