"""Scores for pairwise matchings and the thresholded pairwise baseline."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assignment import solve_lap_auction
from .errors import ContractError, DimensionError, ValidationError
from .geometry import Graph
from .matching import (
    MatchingCollection,
    PartialPermutation,
    identity_holds,
    symmetry_holds,
    transitivity_holds,
)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def _prf(tp: int, n_pred: int, n_gt: int) -> PRF:
    if n_pred == 0 and n_gt == 0:
        return PRF(1.0, 1.0, 1.0)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gt if n_gt else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f)


def _pair_counts(pred: PartialPermutation, gt: PartialPermutation) -> tuple[int, int, int]:
    if pred.shape != gt.shape:
        raise DimensionError(f"predicted matching {pred.shape} vs ground truth {gt.shape}")
    hit = (pred.cols >= 0) & (pred.cols == gt.cols)
    return int(hit.sum()), pred.n_matches, gt.n_matches


def _pair_lists(pred, gt) -> tuple[list, list]:
    if isinstance(pred, MatchingCollection) and isinstance(gt, MatchingCollection):
        if pred.sizes != gt.sizes:
            raise DimensionError(f"collections cover different graphs: {pred.sizes} vs {gt.sizes}")
        pairs = list(itertools.combinations(range(pred.k), 2))
        return [pred.get(i, j) for i, j in pairs], [gt.get(i, j) for i, j in pairs]
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise DimensionError(f"{len(pred)} predicted pairs vs {len(gt)} ground-truth pairs")
    return pred, gt


def f1_score(pred, gt) -> PRF:
    """Micro-averaged precision, recall and F1 over unordered pairs ``i < j``.

    Accepts two collections over the same graphs, or two aligned sequences
    of pairwise matchings.
    """
    tp = n_pred = n_gt = 0
    for p, g in zip(*_pair_lists(pred, gt)):
        a, b, c = _pair_counts(p, g)
        tp, n_pred, n_gt = tp + a, n_pred + b, n_gt + c
    return _prf(tp, n_pred, n_gt)


def f1_macro(pred, gt) -> float:
    """Mean of the per-pair F1 values."""
    scores = [_prf(*_pair_counts(p, g)).f1 for p, g in zip(*_pair_lists(pred, gt))]
    return float(np.mean(scores)) if scores else 1.0


def universe_f1(pred_cols: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> PRF:
    """Micro F1 of the pairwise matchings induced by per-graph universe assignments.

    Same value as :func:`f1_score` on the expanded collections, obtained
    by counting: a column shared by ``n`` graphs contributes ``n(n-1)/2``
    matches, since each graph uses a column at most once.
    """
    if len(pred_cols) != len(labels):
        raise DimensionError("one prediction per labeled graph required")
    cols = [np.asarray(c, dtype=np.int64) for c in pred_cols]
    labs = [np.asarray(l, dtype=np.int64) for l in labels]
    for c, l in zip(cols, labs):
        if c.shape != l.shape:
            raise DimensionError("prediction and labels differ in length")
    if not cols or sum(len(c) for c in cols) == 0:
        return _prf(0, 0, 0)
    allc, alll = np.concatenate(cols), np.concatenate(labs)

    def pairs(counts):
        counts = counts.astype(np.int64)
        return int((counts * (counts - 1) // 2).sum())

    width = int(max(alll.max(), allc.max())) + 1
    n_pred = pairs(np.bincount(allc))
    n_gt = pairs(np.bincount(alll))
    tp = pairs(np.bincount(allc * width + alll))
    return _prf(tp, n_pred, n_gt)


# --
# Intersection evaluation


def intersection_filter(gi: Graph, gj: Graph) -> tuple[Graph, Graph] | None:
    """Restrict two labeled graphs to their shared labels, keeping node order.

    Returns ``None`` when the graphs share no label.
    """
    if gi.labels is None or gj.labels is None:
        raise ContractError("intersection filtering needs labeled graphs")
    common = np.intersect1d(gi.labels, gj.labels)
    if common.size == 0:
        return None
    keep_i = np.flatnonzero(np.isin(gi.labels, common))
    keep_j = np.flatnonzero(np.isin(gj.labels, common))
    return gi.subgraph(keep_i), gj.subgraph(keep_j)


def gt_pairwise(gi: Graph, gj: Graph) -> PartialPermutation:
    """Ground-truth matching of two labeled graphs."""
    pos = {int(l): b for b, l in enumerate(gj.labels)}
    return PartialPermutation(np.array([pos.get(int(l), -1) for l in gi.labels], dtype=np.int64), gj.m)


def _is_bijection(x: PartialPermutation) -> bool:
    return x.n_rows == x.n_cols and x.n_matches == x.n_rows


def accuracy(pred: Sequence[PartialPermutation], gt: Sequence[PartialPermutation]) -> float:
    """Fraction of correctly assigned rows, pooled over all pairs."""
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise DimensionError(f"{len(pred)} predicted pairs vs {len(gt)} ground-truth pairs")
    correct = total = 0
    for p, g in zip(pred, gt):
        if not (_is_bijection(p) and _is_bijection(g)):
            raise ContractError("accuracy is defined for full (bijective) matchings only")
        if p.shape != g.shape:
            raise DimensionError(f"predicted matching {p.shape} vs ground truth {g.shape}")
        correct += int((p.cols == g.cols).sum())
        total += p.n_rows
    return correct / total if total else 1.0


# --
# Cycle consistency


def _triple_fails(c: MatchingCollection, idx: Sequence[int]) -> bool:
    x = {}

    def get(i, j):
        if (i, j) not in x:
            x[i, j] = c.get(i, j)
        return x[i, j]

    if any(not identity_holds(get(i, i)) for i in idx):
        return True
    if any(not symmetry_holds(get(i, j), get(j, i)) for i, j in itertools.combinations(idx, 2)):
        return True
    return any(
        not transitivity_holds(get(i, j), get(j, l), get(i, l)) for i, j, l in itertools.product(idx, repeat=3)
    )


def violation_rate(c: MatchingCollection, n_triples: int = 1000, seed: int = 0) -> float:
    """Fraction of graph triples ``{i, j, l}`` on which any consistency condition fails.

    Every ordering inside a triple is checked. All triples are visited when
    there are at most ``n_triples`` of them, otherwise ``n_triples`` are
    drawn uniformly with a seeded generator. Collections of fewer than three
    graphs count as one triple over all their graphs.
    """
    k = c.k
    if k == 0:
        return 0.0
    if k < 3:
        return float(_triple_fails(c, tuple(range(k))))
    if n_triples <= 0:
        raise ValidationError("n_triples must be positive")
    if math.comb(k, 3) <= n_triples:
        triples = list(itertools.combinations(range(k), 3))
    else:
        rng = np.random.default_rng(seed)
        triples = [tuple(sorted(rng.choice(k, 3, replace=False).tolist())) for _ in range(n_triples)]
    return sum(_triple_fails(c, t) for t in triples) / len(triples)


# --
# Baseline


def _lap_pairs(sim: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if sim.shape[0] <= sim.shape[1]:
        rows = np.arange(sim.shape[0])
        return rows, solve_lap_auction(sim).cols
    cols = np.arange(sim.shape[1])
    return solve_lap_auction(sim.T).cols, cols


def pairwise_baseline_match(fi, fj, tau: float) -> PartialPermutation:
    """LAP on ``F_i F_j^T`` over the smaller side, then drop pairs scoring below ``tau``."""
    fi, fj = np.asarray(fi, dtype=np.float64), np.asarray(fj, dtype=np.float64)
    if fi.ndim != 2 or fj.ndim != 2 or fi.shape[1] != fj.shape[1]:
        raise DimensionError(f"feature matrices {fi.shape} and {fj.shape} are incompatible")
    sim = fi @ fj.T
    cols = np.full(len(fi), -1, dtype=np.int64)
    if sim.size:
        rows, matched = _lap_pairs(sim)
        keep = sim[rows, matched] >= tau
        cols[rows[keep]] = matched[keep]
    return PartialPermutation(cols, len(fj))


def baseline_threshold(features: Sequence[np.ndarray], quantile: float = 0.75) -> float:
    """``quantile`` of the LAP-matched similarities over consecutive feature pairs."""
    if not 0.0 <= quantile <= 1.0:
        raise ValidationError("quantile must lie in [0, 1]")
    values = []
    for fi, fj in zip(features[:-1], features[1:]):
        sim = np.asarray(fi) @ np.asarray(fj).T
        if sim.size:
            rows, cols = _lap_pairs(sim)
            values.append(sim[rows, cols])
    if not values:
        raise ValidationError("need at least two non-empty graphs to calibrate the threshold")
    return float(np.quantile(np.concatenate(values), quantile))


def baseline_collection(features: Sequence[np.ndarray], tau: float) -> MatchingCollection:
    """Independent pairwise matchings for ``i < j``; the lower half is their transpose."""
    sizes = [len(f) for f in features]
    upper = {
        (i, j): pairwise_baseline_match(features[i], features[j], tau)
        for i, j in itertools.combinations(range(len(features)), 2)
    }
    return MatchingCollection.from_upper(sizes, upper)


def gt_collection(graphs: Sequence[Graph]) -> MatchingCollection:
    upper = {(i, j): gt_pairwise(graphs[i], graphs[j]) for i, j in itertools.combinations(range(len(graphs)), 2)}
    return MatchingCollection.from_upper([g.m for g in graphs], upper)
