"""Training, evaluation and parameter sweeps on synthetic data."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .assignment import solve_lap_auction
from .config import ExperimentConfig
from .errors import DimensionError, ValidationError
from .geometry import Graph
from .matching import PartialPermutation
from .metrics import (
    accuracy,
    baseline_collection,
    baseline_threshold,
    f1_score,
    gt_collection,
    gt_pairwise,
    intersection_filter,
    universe_f1,
    violation_rate,
)
from .model import (
    LOG_FLOOR,
    EncoderConfig,
    GraphBatch,
    batch_loss,
    centroid_universe,
    discretize,
    infer,
    init_params,
    match_collection,
    smoothed_targets,
)
from .params import AdamState, ParamStore, adam_step, save_checkpoint
from .synth import SynthDataset

SWEEP_AXES = {"visibility": "p_vis", "size": "n_univ"}
SWEEP_DEFAULTS = {"visibility": (0.2, 0.4, 0.6, 0.8, 1.0), "size": (25, 50, 100, 200, 500, 1000)}
SWEEP_HEADER = ("axis", "value", "f1", "precision", "recall", "violation_rate", "wall_time_ms",
                "train_steps", "epoch_of_best")
EVAL_HEADER = ("method", "mode", "f1", "precision", "recall", "accuracy", "violation_rate", "wall_time_ms")


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def model_config(cfg: ExperimentConfig, store: ParamStore | None = None) -> EncoderConfig:
    """Architecture from ``store`` when given (a loaded checkpoint), regularization from ``cfg``."""
    if store is None:
        return cfg.model
    return EncoderConfig.from_store(store, dropout_rate=cfg.model.dropout_rate,
                                    label_smoothing=cfg.model.label_smoothing)


def check_compatible(store: ParamStore, ds: SynthDataset) -> None:
    f = store["input.weight"].shape[0]
    d = store["universe"].shape[0]
    if f != ds.cfg.feat_dim or d != ds.cfg.n_univ:
        raise DimensionError(
            f"checkpoint expects {f}-D features and {d} universe points, "
            f"dataset has {ds.cfg.feat_dim} and {ds.cfg.n_univ}"
        )


# --
# Training


@dataclass
class TrainResult:
    final: ParamStore
    best: ParamStore
    best_epoch: int
    steps: int
    log: list[dict]


def step_cap(cfg: ExperimentConfig) -> int | None:
    """Gradient-step limit from ``train.max_steps`` and ``train.node_step_budget``."""
    caps = []
    if cfg.train.max_steps is not None:
        caps.append(cfg.train.max_steps)
    if cfg.train.node_step_budget is not None:
        nodes_per_step = cfg.train.batch_size * cfg.synth.p_vis * cfg.synth.n_univ
        caps.append(max(1, int(cfg.train.node_step_budget // nodes_per_step)))
    return min(caps) if caps else None


def training_metrics(graphs: Sequence[Graph], store: ParamStore, mcfg: EncoderConfig,
                     node_budget: int = 4096) -> tuple[float, float]:
    """Dropout-free training loss and universe F1 over ``graphs``."""
    _, _, softs = infer(graphs, store, mcfg, node_budget=node_budget)
    loss = 0.0
    for g, s in zip(graphs, softs):
        target = smoothed_targets(g.labels, mcfg.universe_size, mcfg.label_smoothing)
        loss -= float((target * np.log(np.maximum(s, LOG_FLOOR))).sum()) / g.m
    f1 = universe_f1([discretize(s).cols for s in softs], [g.labels for g in graphs]).f1
    return loss, f1


def train(
    ds: SynthDataset,
    cfg: ExperimentConfig,
    store: ParamStore | None = None,
    log: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam on the summed per-graph loss; the best state is the one with the lowest training loss.

    One log record per epoch (epoch 0 is the initialization) with the mean
    dropout batch loss, the dropout-free training loss and training F1.
    """
    mcfg = model_config(cfg, store)
    store = store.copy() if store is not None else init_params(mcfg, cfg.train.seed)
    check_compatible(store, ds)
    graphs = list(ds.train)
    for g in graphs:
        if g.m > mcfg.universe_size:
            raise ValidationError(f"training graph with {g.m} nodes exceeds the universe size")
    order_rng = _stream(cfg.train.seed, 2)
    dropout_rng = _stream(cfg.train.seed, 3)
    state = AdamState()
    decay = {"universe": cfg.train.decay_universe}
    cap = step_cap(cfg)
    bs = cfg.train.batch_size

    records: list[dict] = []

    def record(epoch, steps, batch_losses):
        loss, f1 = training_metrics(graphs, store, mcfg, cfg.eval.node_budget) if graphs else (0.0, 1.0)
        rec = {"epoch": epoch, "steps": steps,
               "batch_loss": float(np.mean(batch_losses)) if batch_losses else None,
               "loss": loss, "train_f1": f1}
        records.append(rec)
        if log is not None:
            log(rec)
        return loss

    steps = 0
    best_loss = record(0, 0, [])
    best, best_epoch = store.copy(), 0
    for epoch in range(1, cfg.train.epochs + 1):
        if not graphs or (cap is not None and steps >= cap):
            break
        perm = order_rng.permutation(len(graphs))
        losses = []
        for start in range(0, len(graphs), bs):
            if cap is not None and steps >= cap:
                break
            batch = GraphBatch([graphs[i] for i in perm[start:start + bs]])
            with ad.Tape() as tape:
                loss = batch_loss(batch, store, mcfg, dropout_rng)
            grads = ad.backward(loss, store)
            tape.clear()
            adam_step(store, grads, state, lr=cfg.train.lr, beta1=cfg.train.beta1, beta2=cfg.train.beta2,
                      eps=cfg.train.adam_eps, weight_decay=cfg.train.weight_decay, decay=decay)
            losses.append(float(loss.value))
            steps += 1
        current = record(epoch, steps, losses)
        if current < best_loss:
            best_loss, best, best_epoch = current, store.copy(), epoch
    return TrainResult(store, best, best_epoch, steps, records)


def write_training_outputs(result: TrainResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.final, out / "final.urlm")
    save_checkpoint(result.best, out / "best.urlm")


def log_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


# --
# Evaluation


def _universe_for(ds: SynthDataset, store: ParamStore, mcfg: EncoderConfig, cfg: ExperimentConfig):
    if cfg.eval.centroid_mode is None:
        return None
    graphs = list(ds.train)
    feats, _, _ = infer(graphs, store, mcfg, node_budget=cfg.eval.node_budget)
    return centroid_universe(feats, [g.labels for g in graphs], d=mcfg.universe_size, mode=cfg.eval.centroid_mode)


def _row(method: str, mode: str, **values) -> dict:
    row = dict.fromkeys(EVAL_HEADER)
    row.update(method=method, mode=mode, **values)
    return row


def _lap_bijection(sim: np.ndarray) -> PartialPermutation:
    return PartialPermutation(solve_lap_auction(sim).cols, sim.shape[1])


def _eval_union(ds, store, mcfg, cfg, universe, baseline) -> list[dict]:
    test = list(ds.test)
    t0 = time.perf_counter()
    res = match_collection(test, store, mcfg, universe)
    wall = (time.perf_counter() - t0) * 1000.0
    prf = universe_f1([x.cols for x in res.hard], [g.labels for g in test])
    rows = [_row("url", "union", f1=prf.f1, precision=prf.precision, recall=prf.recall,
                 violation_rate=violation_rate(res.collection(), cfg.eval.n_triples, seed=cfg.train.seed),
                 wall_time_ms=wall)]
    if baseline:
        train_feats, _, _ = infer(list(ds.train), store, mcfg, universe, cfg.eval.node_budget)
        tau = baseline_threshold(train_feats, cfg.eval.baseline_quantile)
        t0 = time.perf_counter()
        coll = baseline_collection(res.features, tau)
        wall = (time.perf_counter() - t0) * 1000.0
        prf = f1_score(coll, gt_collection(test))
        rows.append(_row("baseline", "union", f1=prf.f1, precision=prf.precision, recall=prf.recall,
                         violation_rate=violation_rate(coll, cfg.eval.n_triples, seed=cfg.train.seed),
                         wall_time_ms=wall))
    return rows


def _eval_intersection(ds, store, mcfg, cfg, universe, baseline) -> list[dict]:
    test = list(ds.test)
    pairs, filtered = [], []
    for i, j in itertools.combinations(range(len(test)), 2):
        sub = intersection_filter(test[i], test[j])
        if sub is not None:
            pairs.append(len(filtered))
            filtered.extend(sub)
    gts = [gt_pairwise(filtered[a], filtered[a + 1]) for a in pairs]
    t0 = time.perf_counter()
    feats, _, softs = infer(filtered, store, mcfg, universe, cfg.eval.node_budget)
    preds = [_lap_bijection(softs[a] @ softs[a + 1].T) for a in pairs]
    wall = (time.perf_counter() - t0) * 1000.0
    prf = f1_score(preds, gts)
    rows = [_row("url", "intersection", f1=prf.f1, precision=prf.precision, recall=prf.recall,
                 accuracy=accuracy(preds, gts), wall_time_ms=wall)]
    if baseline:
        t0 = time.perf_counter()
        preds = [_lap_bijection(feats[a] @ feats[a + 1].T) for a in pairs]
        wall = (time.perf_counter() - t0) * 1000.0
        prf = f1_score(preds, gts)
        rows.append(_row("baseline", "intersection", f1=prf.f1, precision=prf.precision, recall=prf.recall,
                         accuracy=accuracy(preds, gts), wall_time_ms=wall))
    return rows


def evaluate(ds: SynthDataset, store: ParamStore, cfg: ExperimentConfig, baseline: bool = False) -> list[dict]:
    """Test-set scores in ``cfg.eval.mode``; one row for the model, one more for the baseline."""
    check_compatible(store, ds)
    mcfg = model_config(cfg, store)
    universe = _universe_for(ds, store, mcfg, cfg)
    if cfg.eval.mode == "union":
        return _eval_union(ds, store, mcfg, cfg, universe, baseline)
    return _eval_intersection(ds, store, mcfg, cfg, universe, baseline)


# --
# Sweeps


def parse_values(axis: str, text: str | None) -> list:
    if axis not in SWEEP_AXES:
        raise ValidationError(f"axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    if text is None:
        return list(SWEEP_DEFAULTS[axis])
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            value = float(item) if axis == "visibility" else int(item)
        except ValueError:
            raise ValidationError(f"bad sweep value {item!r} for axis {axis}") from None
        out.append(value)
    if not out:
        raise ValidationError("empty sweep value list")
    return out


def sweep_point(cfg: ExperimentConfig, axis: str, value, log: Callable[[dict], None] | None = None) -> dict:
    point_cfg = cfg.with_synth(**{SWEEP_AXES[axis]: value})
    ds = SynthDataset(point_cfg.synth)
    result = train(ds, point_cfg, log=log)
    row = evaluate(ds, result.best, replace(point_cfg, eval=replace(point_cfg.eval, mode="union")))[0]
    return {"axis": axis, "value": value, "f1": row["f1"], "precision": row["precision"],
            "recall": row["recall"], "violation_rate": row["violation_rate"],
            "wall_time_ms": row["wall_time_ms"], "train_steps": result.steps,
            "epoch_of_best": result.best_epoch}


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, log: Callable[[dict], None] | None = None,
          on_row: Callable[[dict], None] | None = None) -> list[dict]:
    rows = []
    for value in values:
        row = sweep_point(cfg, axis, value, log)
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def format_csv(rows: Sequence[dict], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row.get(name)) for name in header])
    return buf.getvalue()
