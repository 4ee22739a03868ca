"""Rectangular linear assignment: maximize ``<X, S>`` over universe matchings.

``solve_lap_auction`` is the production solver (forward auction with
epsilon-scaling, followed by reverse iterations that restore the
asymmetric optimality condition on unassigned columns). ``solve_lap_exact``
enumerates every injective row -> column map and serves as its oracle.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleError, SizeLimitError, ValidationError
from .matching import UniverseMatching

EXACT_MAX_D = 10


@dataclass(frozen=True)
class LapResult:
    matching: UniverseMatching
    objective: float
    # best minus second-best objective; only the exhaustive solver knows it
    margin: float = math.nan

    @property
    def cols(self) -> np.ndarray:
        return self.matching.cols


def _as_scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValidationError(f"score matrix must be 2-D, got shape {s.shape}")
    m, d = s.shape
    if m > d:
        raise InfeasibleError(f"{m} rows cannot be assigned injectively to {d} columns")
    if not np.isfinite(s).all():
        raise ValidationError("score matrix contains non-finite entries")
    return s


def objective(s: np.ndarray, cols: Sequence[int]) -> float:
    """Sum of selected scores, accumulated in row order."""
    total = 0.0
    for r, c in enumerate(cols):
        total += float(s[r, c])
    return total


def default_schedule(s: np.ndarray, granularity: float = 1e-9) -> list[float]:
    """``eps_0 = max|S|`` divided by 4 each phase, ending at ``granularity / (m + 1)``."""
    m = s.shape[0]
    final = granularity / (m + 1)
    eps = float(np.abs(s).max()) if s.size else 0.0
    schedule = []
    while eps > final:
        schedule.append(eps)
        eps /= 4.0
    schedule.append(final)
    return schedule


def _forward_phase(s, prices, eps, assigned=None):
    m, d = s.shape
    owner = np.full(d, -1, dtype=np.int64)
    if assigned is None:
        assigned = np.full(m, -1, dtype=np.int64)
    else:
        assigned = assigned.copy()
        owner[assigned[assigned >= 0]] = np.flatnonzero(assigned >= 0)
    queue = deque(np.flatnonzero(assigned < 0).tolist())
    while queue:
        i = queue.popleft()
        values = s[i] - prices
        j = int(np.argmax(values))
        best = values[j]
        if d > 1:
            values[j] = -np.inf
            second = values.max()
        else:
            second = best - eps
        prices[j] += best - second + eps
        prev = owner[j]
        owner[j] = i
        assigned[i] = j
        if prev >= 0:
            assigned[prev] = -1
            queue.append(int(prev))
    return assigned, owner


def _reverse_phase(s, prices, assigned, owner, eps):
    """Lower prices of unassigned columns to the assigned-price floor."""
    m, d = s.shape
    if m == d or m == 0:
        return
    floor = prices[assigned].min()
    profits = s[np.arange(m), assigned] - prices[assigned]
    queue = deque(j for j in range(d) if owner[j] < 0 and prices[j] > floor)
    while queue:
        j = queue.popleft()
        values = s[:, j] - profits
        i = int(np.argmax(values))
        best = values[i]
        if m > 1:
            values[i] = -np.inf
            second = values.max()
        else:
            second = -np.inf
        if floor >= best - eps:
            prices[j] = floor
            continue
        prices[j] = max(floor, second - eps)
        profits[i] = s[i, j] - prices[j]
        old = assigned[i]
        owner[old] = -1
        owner[j] = i
        assigned[i] = j
        if prices[old] > floor:
            queue.append(int(old))


def _row_argmax_certificate(s: np.ndarray) -> np.ndarray | None:
    # an injective row-wise argmax attains the trivial upper bound, hence is optimal
    cols = s.argmax(axis=1)
    if np.unique(cols).size == cols.size:
        return cols
    return None


def solve_lap_auction(
    s, epsilon_schedule: Iterable[float] | None = None, granularity: float = 1e-9
) -> LapResult:
    """Assign each row to a distinct column maximizing the total score.

    With the default schedule the result is exactly optimal whenever the
    optimum beats every other assignment by more than ``granularity``.
    Rows bid in index order, so results are deterministic.
    """
    s = _as_scores(s)
    m, d = s.shape
    if m == 0:
        return LapResult(UniverseMatching([], d), 0.0)
    cols = _row_argmax_certificate(s)
    if cols is None:
        schedule = list(epsilon_schedule) if epsilon_schedule is not None else default_schedule(s, granularity)
        if not schedule or any(not (e > 0) for e in schedule):
            raise ValidationError("epsilon schedule must be a non-empty list of positive reals")
        prices = np.zeros(d)
        rows = np.arange(m)
        for eps in schedule:
            if cols is not None:
                # keep assignments that already satisfy eps-complementary slackness
                values = s - prices
                cols = np.where(values[rows, cols] >= values.max(axis=1) - eps, cols, -1)
            cols, owner = _forward_phase(s, prices, eps, cols)
            _reverse_phase(s, prices, cols, owner, eps)
    return LapResult(UniverseMatching(cols, d), objective(s, cols))


def solve_lap_exact(s) -> LapResult:
    """Exhaustive optimum; ties go to the lexicographically smallest column vector."""
    s = _as_scores(s)
    m, d = s.shape
    if d > EXACT_MAX_D:
        raise SizeLimitError(f"exhaustive assignment supports d <= {EXACT_MAX_D}, got {d}")
    if m == 0:
        return LapResult(UniverseMatching([], d), 0.0, math.inf)
    perms = np.array(list(itertools.permutations(range(d), m)), dtype=np.int64).reshape(-1, m)
    totals = np.zeros(len(perms))
    for r in range(m):
        totals += s[r, perms[:, r]]
    best = int(np.argmax(totals))
    if len(perms) > 1:
        rest = np.delete(totals, best)
        margin = float(totals[best] - rest.max())
    else:
        margin = math.inf
    cols = perms[best]
    return LapResult(UniverseMatching(cols, d), objective(s, cols), margin)
