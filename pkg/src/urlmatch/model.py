"""The universe-point matching network.

Pipeline per graph: linear input projection, 2-D spline-kernel blocks
over normalized edge offsets, a per-node virtual coordinate predicted
from those features, 3-D spline blocks whose third pseudo-coordinate is
the difference of virtual coordinates, then a row-wise softmax against
learned universe embeddings. Hard matchings come from the linear
assignment solver, and pairwise matchings are products of universe
matchings, hence cycle-consistent.

Several graphs are processed at once by stacking them into one
disconnected graph (:class:`GraphBatch`).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .assignment import solve_lap_auction
from .autodiff import Tensor
from .errors import DimensionError, InfeasibleError, SupervisionError, ValidationError
from .geometry import Graph, pseudo_coords
from .matching import MatchingCollection, PartialPermutation, UniverseMatching, pairwise_from_universe
from .params import ParamStore

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 1024
    hidden_dim: int = 64
    spline_layers_2d: int = 2
    spline_layers_3d: int = 1
    kernel_knots: int = 5
    mlp_z_hidden: int = 32
    dropout_rate: float = 0.35
    label_smoothing: float = 0.4
    universe_size: int = 25

    def __post_init__(self):
        dims = ("input_dim", "hidden_dim", "mlp_z_hidden", "universe_size")
        for name in dims:
            if getattr(self, name) <= 0:
                raise ValidationError(f"model.{name} must be positive")
        if self.spline_layers_2d < 0 or self.spline_layers_3d < 0:
            raise ValidationError("layer counts must be non-negative")
        if self.kernel_knots < 2:
            raise ValidationError("model.kernel_knots must be at least 2")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValidationError("model.label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("model.dropout_rate must lie in [0, 1)")

    @classmethod
    def from_store(cls, store: ParamStore, **overrides) -> EncoderConfig:
        """Recover architecture sizes from parameter shapes (e.g. after loading a checkpoint)."""
        f, h = store["input.weight"].shape
        n2 = sum(1 for n in store if n.startswith("conv2d.") and n.endswith(".root"))
        n3 = sum(1 for n in store if n.startswith("conv3d.") and n.endswith(".root"))
        if n3:
            k = round(store["conv3d.0.kernel"].shape[0] ** (1 / 3))
        elif n2:
            k = round(math.sqrt(store["conv2d.0.kernel"].shape[0]))
        else:
            k = cls.kernel_knots
        values = dict(
            input_dim=f,
            hidden_dim=h,
            spline_layers_2d=n2,
            spline_layers_3d=n3,
            kernel_knots=k,
            mlp_z_hidden=store["mlp_z.w1"].shape[1],
            universe_size=store["universe"].shape[0],
        )
        values.update(overrides)
        return cls(**values)


def init_params(cfg: EncoderConfig, seed: int = 123) -> ParamStore:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    f, h, k = cfg.input_dim, cfg.hidden_dim, cfg.kernel_knots

    def glorot(n_in, n_out, *lead):
        return rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), size=(*lead, n_in, n_out))

    store = ParamStore()
    store["input.weight"] = glorot(f, h)
    store["input.bias"] = np.zeros(h)
    for dim, count in ((2, cfg.spline_layers_2d), (3, cfg.spline_layers_3d)):
        for layer in range(count):
            prefix = f"conv{dim}d.{layer}"
            store[f"{prefix}.root"] = glorot(h, h)
            store[f"{prefix}.bias"] = np.zeros(h)
            store[f"{prefix}.kernel"] = glorot(h, h, k**dim)
    store["mlp_z.w1"] = glorot(h, cfg.mlp_z_hidden)
    store["mlp_z.b1"] = np.zeros(cfg.mlp_z_hidden)
    store["mlp_z.w2"] = glorot(cfg.mlp_z_hidden, 1)
    store["mlp_z.b2"] = np.zeros(1)
    store["universe"] = rng.normal(0.0, 1.0 / math.sqrt(h), size=(cfg.universe_size, h))
    return store


# --
# Batching


@dataclass
class GraphBatch:
    """Several graphs stacked into one disconnected graph."""

    graphs: Sequence[Graph]
    features: np.ndarray = field(init=False)
    src: np.ndarray = field(init=False)
    dst: np.ndarray = field(init=False)
    inv_deg: np.ndarray = field(init=False)
    inv_2r: np.ndarray = field(init=False)
    u2d: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = [g.m for g in self.graphs]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.features = np.concatenate([g.features for g in self.graphs]) if self.graphs else np.zeros((0, 0))
        src, dst, inv_2r, u2d = [], [], [], []
        for g, off in zip(self.graphs, self.offsets):
            dst.append(g.edges[:, 0] + off)
            src.append(g.edges[:, 1] + off)
            inv_2r.append(np.full(len(g.edges), 1.0 / (2.0 * g.scale())))
            u2d.append(pseudo_coords(g))
        self.src = np.concatenate(src) if src else np.zeros(0, np.int64)
        self.dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
        self.inv_2r = np.concatenate(inv_2r) if inv_2r else np.zeros(0)
        self.u2d = np.concatenate(u2d) if u2d else np.zeros((0, 2))
        deg = np.bincount(self.dst, minlength=self.n_nodes)
        self.inv_deg = 1.0 / np.maximum(deg, 1)

    @property
    def n_nodes(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def labels(self) -> np.ndarray:
        if any(g.labels is None for g in self.graphs):
            raise SupervisionError("every training graph needs ground-truth labels")
        return np.concatenate([g.labels for g in self.graphs])

    @cached_property
    def node_weight(self) -> np.ndarray:
        return np.concatenate([np.full(g.m, 1.0 / g.m) for g in self.graphs])

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        return [values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def as_batch(graphs: Graph | Sequence[Graph] | GraphBatch) -> GraphBatch:
    if isinstance(graphs, GraphBatch):
        return graphs
    if isinstance(graphs, Graph):
        graphs = [graphs]
    return GraphBatch(list(graphs))


# --
# Spline kernels


def spline_basis(u, k: int) -> tuple[Tensor, np.ndarray]:
    """Degree-1 tensor-product basis on ``k`` uniform knots per dimension.

    Returns per-edge weights and flat kernel indices for the ``2^D``
    active knots; index ``sum_d g_d * k**d``. Derivatives at knots are
    taken from the right.
    """
    u = ad.as_tensor(u)
    E, D = u.shape
    x = u.value * (k - 1)
    j = np.clip(np.floor(x), 0, k - 2)
    t = x - j
    j = j.astype(np.int64)
    corners = np.array([[(c >> dim) & 1 for dim in range(D)] for c in range(2**D)], dtype=np.int64)
    factors = np.where(corners[None, :, :] == 1, t[:, None, :], 1.0 - t[:, None, :])
    weights = factors.prod(axis=2)
    idx = ((j[:, None, :] + corners[None, :, :]) * (k ** np.arange(D))).sum(axis=2)
    sign = np.where(corners == 1, 1.0, -1.0)

    def vjp(g):
        du = np.zeros((E, D))
        for dim in range(D):
            others = np.delete(factors, dim, axis=2).prod(axis=2)
            du[:, dim] = (g * others * sign[None, :, dim]).sum(axis=1) * (k - 1)
        return (du,)

    return ad.custom(weights, (u,), vjp, "spline_basis"), idx


def spline_aggregate(x, weights, idx, src, dst, inv_deg, kernel) -> Tensor:
    """Mean over incoming edges of ``K(u_e) x_src``, with ``K(u) = sum_g B_g(u) Theta_g``."""
    x, weights, kernel = ad.as_tensor(x), ad.as_tensor(weights), ad.as_tensor(kernel)
    n, c_in = x.shape
    K, k_in, c_out = kernel.shape
    if k_in != c_in:
        raise DimensionError(f"kernel expects {k_in} input channels, features have {c_in}")
    E, C = idx.shape
    if E == 0:
        return ad.custom(
            np.zeros((n, c_out)),
            (x, weights, kernel),
            lambda g: (np.zeros(x.shape), np.zeros(weights.shape), np.zeros(kernel.shape)),
            "spline_aggregate",
        )
    if idx.max() >= K:
        raise DimensionError("pseudo-coordinate dimension does not match the kernel")
    r_src = np.repeat(src, C)
    key = idx.reshape(-1) * n + np.repeat(dst, C)
    uniq, inv = np.unique(key, return_inverse=True)
    inv = inv.reshape(-1)
    n_u = len(uniq)
    u_g, u_v = uniq // n, uniq % n
    # one row per (kernel index, center) pair, summing weighted neighbour features
    gather = sp.csr_matrix((weights.value.reshape(-1), (inv, r_src)), shape=(n_u, n))
    a = gather @ x.value
    bounds = np.searchsorted(u_g, np.arange(K + 1))
    groups = [(g, bounds[g], bounds[g + 1]) for g in np.flatnonzero(np.diff(bounds))]
    y = np.empty((n_u, c_out))
    for g, s, e in groups:
        y[s:e] = a[s:e] @ kernel.value[g]
    coef = inv_deg[u_v]
    scatter = sp.csr_matrix((coef, (u_v, np.arange(n_u))), shape=(n, n_u))
    out = scatter @ y

    def vjp(g_out):
        gy = coef[:, None] * g_out[u_v]
        gk = np.zeros(kernel.shape) if kernel.requires_grad else None
        da = np.empty((n_u, c_in))
        for g, s, e in groups:
            if gk is not None:
                gk[g] = a[s:e].T @ gy[s:e]
            da[s:e] = gy[s:e] @ kernel.value[g].T
        gx = gather.T @ da if x.requires_grad else None
        gw = None
        if weights.requires_grad:
            gw = np.einsum("ij,ij->i", x.value[r_src], da[inv]).reshape(E, C)
        return gx, gw, gk

    return ad.custom(out, (x, weights, kernel), vjp, "spline_aggregate")


def spline_conv(
    store: Mapping[str, Tensor],
    prefix: str,
    x,
    src: np.ndarray,
    dst: np.ndarray,
    inv_deg: np.ndarray,
    pseudo,
    knots: int,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """``relu(x W_root + b + mean_w K(u_{v->w}) x_w)``, then dropout when ``rng`` is given."""
    kernel = store[f"{prefix}.kernel"]
    pseudo = ad.as_tensor(pseudo)
    if knots ** pseudo.shape[1] != kernel.shape[0]:
        raise DimensionError(f"{prefix}: kernel holds {kernel.shape[0]} knots, pseudo-coords are {pseudo.shape[1]}-D")
    weights, idx = spline_basis(pseudo, knots)
    msg = spline_aggregate(x, weights, idx, src, dst, inv_deg, kernel)
    out = ad.add(ad.add(ad.matmul(x, store[f"{prefix}.root"]), store[f"{prefix}.bias"]), msg)
    out = ad.relu(out)
    if rng is not None and dropout_rate > 0:
        mask = rng.random(out.shape) >= dropout_rate
        out = ad.dropout(out, mask, dropout_rate)
    return out


def lift_virtual_coordinate(features, store: Mapping[str, Tensor]) -> Tensor:
    """One scalar per node: ``w2 . relu(W1 f + b1) + b2`` (shape ``m x 1``)."""
    hidden = ad.relu(ad.add(ad.matmul(features, store["mlp_z.w1"]), store["mlp_z.b1"]))
    return ad.add(ad.matmul(hidden, store["mlp_z.w2"]), store["mlp_z.b2"])


def _pseudo_3d(batch: GraphBatch, z: Tensor) -> Tensor:
    dz = ad.sub(ad.gather_rows(z, batch.src), ad.gather_rows(z, batch.dst))
    uz = ad.clamp(ad.add(ad.mul(dz, batch.inv_2r[:, None]), 0.5), 0.0, 1.0)
    return ad.concat([batch.u2d, uz], axis=1)


@dataclass
class Encoded:
    features: Tensor
    z: Tensor


def encode_batch(
    batch: GraphBatch,
    store: Mapping[str, Tensor],
    cfg: EncoderConfig,
    rng: np.random.Generator | None = None,
) -> Encoded:
    if batch.features.shape[1] != cfg.input_dim:
        raise DimensionError(f"graphs carry {batch.features.shape[1]}-D features, model expects {cfg.input_dim}")
    common = dict(src=batch.src, dst=batch.dst, inv_deg=batch.inv_deg, knots=cfg.kernel_knots,
                  dropout_rate=cfg.dropout_rate, rng=rng)
    x = ad.add(ad.matmul(batch.features, store["input.weight"]), store["input.bias"])
    for layer in range(cfg.spline_layers_2d):
        x = spline_conv(store, f"conv2d.{layer}", x, pseudo=batch.u2d, **common)
    z = lift_virtual_coordinate(x, store)
    if cfg.spline_layers_3d:
        pseudo = _pseudo_3d(batch, z)
        for layer in range(cfg.spline_layers_3d):
            x = spline_conv(store, f"conv3d.{layer}", x, pseudo=pseudo, **common)
    return Encoded(x, z)


def encode(graph: Graph, store: Mapping[str, Tensor], cfg: EncoderConfig,
           rng: np.random.Generator | None = None) -> Tensor:
    """Node embeddings ``m x h`` of a single graph; dropout only when ``rng`` is given."""
    return encode_batch(as_batch(graph), store, cfg, rng).features


# --
# Matching and loss


def soft_matching(features, universe) -> Tensor:
    """Row-wise softmax of ``F U^T``."""
    features, universe = ad.as_tensor(features), ad.as_tensor(universe)
    if features.shape[0] > universe.shape[0]:
        raise InfeasibleError(f"{features.shape[0]} nodes exceed the universe size {universe.shape[0]}")
    if features.shape[1] != universe.shape[1]:
        raise DimensionError(f"feature width {features.shape[1]} != universe width {universe.shape[1]}")
    return ad.row_softmax(ad.matmul(features, ad.transpose(universe)))


def smoothed_targets(labels: np.ndarray, d: int, smoothing: float) -> np.ndarray:
    target = np.full((len(labels), d), smoothing / d)
    target[np.arange(len(labels)), labels] += 1.0 - smoothing
    return target


def _labels_of(gt) -> np.ndarray:
    if isinstance(gt, UniverseMatching):
        return gt.cols
    return np.asarray(gt, dtype=np.int64)


def node_loss(soft, gt, smoothing: float = 0.0) -> Tensor:
    """Mean over nodes of the cross-entropy against label-smoothed one-hot targets."""
    soft = ad.as_tensor(soft)
    labels = _labels_of(gt)
    m, d = soft.shape
    if len(labels) != m:
        raise DimensionError(f"{len(labels)} labels for {m} rows")
    target = smoothed_targets(labels, d, smoothing)
    ce = ad.sum(ad.mul(ad.log(soft, floor=LOG_FLOOR), target))
    return ad.scale(ce, -1.0 / m)


def batch_loss(batch: GraphBatch, store: Mapping[str, Tensor], cfg: EncoderConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    """Sum over the batch of per-graph node losses, computed in one pass."""
    labels = batch.labels
    for g in batch.graphs:
        if g.m > cfg.universe_size:
            raise InfeasibleError(f"graph with {g.m} nodes exceeds the universe size {cfg.universe_size}")
    if len(labels) and labels.max() >= cfg.universe_size:
        raise ValidationError("label outside the universe")
    enc = encode_batch(batch, store, cfg, rng)
    soft = ad.row_softmax(ad.matmul(enc.features, ad.transpose(store["universe"])))
    target = smoothed_targets(labels, cfg.universe_size, cfg.label_smoothing) * batch.node_weight[:, None]
    return ad.scale(ad.sum(ad.mul(ad.log(soft, floor=LOG_FLOOR), target)), -1.0)


def total_loss(graphs: Sequence[Graph], store: Mapping[str, Tensor], cfg: EncoderConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    return batch_loss(as_batch(graphs), store, cfg, rng)


def discretize(soft) -> UniverseMatching:
    """Hard universe matching maximizing ``<X, S>``."""
    values = soft.value if isinstance(soft, Tensor) else np.asarray(soft, dtype=np.float64)
    return solve_lap_auction(values).matching


def centroid_universe(features: Sequence[np.ndarray], matchings: Sequence[UniverseMatching | np.ndarray],
                      d: int | None = None, mode: str = "paper") -> np.ndarray:
    """Closed-form universe embeddings from encoded nodes and ground-truth matchings.

    ``paper``: ``(1/k) sum_i X_i^T F_i``, the minimizer of
    ``sum_i ||X_i^T F_i - U||^2``. ``occurrence``: each row averaged over
    the graphs that actually contain that universe point.
    """
    if mode not in ("paper", "occurrence"):
        raise ValidationError(f"unknown centroid mode {mode!r}")
    if not features:
        raise ValidationError("need at least one graph")
    cols = [m.cols if isinstance(m, UniverseMatching) else np.asarray(m, dtype=np.int64) for m in matchings]
    if d is None:
        d = next((m.d for m in matchings if isinstance(m, UniverseMatching)), None)
        if d is None:
            d = int(max(c.max() for c in cols if c.size)) + 1
    h = np.asarray(features[0]).shape[1]
    total = np.zeros((d, h))
    counts = np.zeros(d)
    for f, c in zip(features, cols):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (len(c), h):
            raise DimensionError(f"features {f.shape} do not fit {len(c)} matched nodes of width {h}")
        np.add.at(total, c, f)
        np.add.at(counts, c, 1.0)
    if mode == "paper":
        return total / len(features)
    return np.divide(total, counts[:, None], out=np.zeros_like(total), where=counts[:, None] > 0)


# --
# Collection-level inference


class _LazyPairwise(Mapping):
    def __init__(self, hard: Sequence[UniverseMatching]):
        self._hard = hard
        self._cache: dict[tuple[int, int], PartialPermutation] = {}

    def __getitem__(self, key):
        i, j = key
        if not (0 <= i < len(self._hard) and 0 <= j < len(self._hard)):
            raise KeyError(key)
        if key not in self._cache:
            self._cache[key] = pairwise_from_universe(self._hard[i], self._hard[j])
        return self._cache[key]

    def __iter__(self):
        k = len(self._hard)
        return ((i, j) for i in range(k) for j in range(k))

    def __len__(self):
        return len(self._hard) ** 2


@dataclass
class MatchResult:
    soft: list[np.ndarray]
    hard: list[UniverseMatching]
    z: list[np.ndarray]
    features: list[np.ndarray]

    def pairwise(self, i: int, j: int) -> PartialPermutation:
        return pairwise_from_universe(self.hard[i], self.hard[j])

    def collection(self) -> MatchingCollection:
        return MatchingCollection(tuple(x.m for x in self.hard), _LazyPairwise(self.hard))


def _chunks(graphs: Sequence[Graph], node_budget: int):
    chunk, used = [], 0
    for g in graphs:
        if chunk and used + g.m > node_budget:
            yield chunk
            chunk, used = [], 0
        chunk.append(g)
        used += g.m
    if chunk:
        yield chunk


def infer(graphs: Sequence[Graph], store: Mapping[str, Tensor], cfg: EncoderConfig,
          universe: np.ndarray | None = None, node_budget: int = 4096) -> tuple[list, list, list]:
    """Tape-free encoding: per-graph features, virtual coordinates and soft matchings."""
    u = store["universe"].value if universe is None else np.asarray(universe, dtype=np.float64)
    feats, zs, softs = [], [], []
    for chunk in _chunks(list(graphs), node_budget):
        for g in chunk:
            if g.m > u.shape[0]:
                raise InfeasibleError(f"graph with {g.m} nodes exceeds the universe size {u.shape[0]}")
        batch = GraphBatch(chunk)
        enc = encode_batch(batch, store, cfg)
        soft = ad.row_softmax(enc.features.value @ u.T).value
        feats += batch.split(enc.features.value)
        zs += batch.split(enc.z.value[:, 0])
        softs += batch.split(soft)
    return feats, zs, softs


def match_collection(graphs: Sequence[Graph], store: Mapping[str, Tensor], cfg: EncoderConfig | None = None,
                     universe: np.ndarray | None = None) -> MatchResult:
    """Match every graph to the universe independently and expose pairwise products."""
    cfg = cfg or EncoderConfig.from_store(store)
    feats, zs, softs = infer(graphs, store, cfg, universe)
    hard = [discretize(s) for s in softs]
    return MatchResult(softs, hard, zs, feats)
