"""Synthetic keypoint graphs drawn from a random anchor.

Every graph is a noisy, partially visible, affinely transformed copy of
one anchor. Labels are the anchor (universe) indices of the surviving
points, in increasing order. Each graph has its own random stream
derived from ``(seed, graph index)``, so any graph can be regenerated
on its own and in any order.

Dataset files are JSON lines: a ``meta`` record followed by one
``graph`` record per graph (see :func:`save_dataset`).
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import Graph

MIN_NODES = 3
FORMAT = "urlmatch-synth"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    n_univ: int = 25
    p_vis: float = 0.8
    sigma_feat: float = 1.5
    sigma_coo: float = 10.0
    feat_dim: int = 1024
    canvas: float = 256.0
    n_train: int = 200
    n_test: int = 100
    rotation_deg: float = 30.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    translation: float = 20.0
    seed: int = 123

    def __post_init__(self):
        if not 0.0 <= self.p_vis <= 1.0:
            raise ValidationError(f"synth.p_vis must lie in [0, 1], got {self.p_vis}")
        if self.sigma_feat < 0 or self.sigma_coo < 0:
            raise ValidationError("noise standard deviations must be non-negative")
        if self.n_univ < MIN_NODES:
            raise ValidationError(f"synth.n_univ must be at least {MIN_NODES}")
        if self.p_vis == 0.0:
            raise ValidationError(f"synth.p_vis = 0 can never produce {MIN_NODES} visible points")
        if self.feat_dim <= 0 or self.canvas <= 0:
            raise ValidationError("synth.feat_dim and synth.canvas must be positive")
        if self.n_train < 0 or self.n_test < 0:
            raise ValidationError("graph counts must be non-negative")
        if self.rotation_deg < 0 or self.translation < 0:
            raise ValidationError("affine ranges must be non-negative")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValidationError("need 0 < synth.scale_min <= synth.scale_max")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def n_graphs(self) -> int:
        return self.n_train + self.n_test

    def noise_free(self) -> SynthConfig:
        """Same sizes, zero noise and the identity transform."""
        return replace_config(self, sigma_feat=0.0, sigma_coo=0.0, rotation_deg=0.0,
                              scale_min=1.0, scale_max=1.0, translation=0.0)


def replace_config(cfg: SynthConfig, **changes) -> SynthConfig:
    values = asdict(cfg)
    unknown = set(changes) - set(values)
    if unknown:
        raise ValidationError(f"unknown synth settings {sorted(unknown)}")
    values.update(changes)
    return SynthConfig(**values)


@dataclass(frozen=True)
class Anchor:
    features: np.ndarray
    coords: np.ndarray


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def generate_anchor(cfg: SynthConfig, seed: int | None = None) -> Anchor:
    rng = _stream(cfg.seed if seed is None else seed, 0)
    features = rng.uniform(-1.0, 1.0, size=(cfg.n_univ, cfg.feat_dim))
    coords = rng.uniform(0.0, cfg.canvas, size=(cfg.n_univ, 2))
    return Anchor(features, coords)


def random_affine(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(A, b)`` for ``p -> p A^T + b``: rotation and scale about the canvas center, then a shift."""
    theta = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    s = rng.uniform(cfg.scale_min, cfg.scale_max)
    shift = rng.uniform(-cfg.translation, cfg.translation, size=2)
    c, sn = math.cos(theta), math.sin(theta)
    a = s * np.array([[c, -sn], [sn, c]])
    center = np.full(2, cfg.canvas / 2.0)
    return a, center - a @ center + shift


def sample_graph(anchor: Anchor, cfg: SynthConfig, seed: int | None = None, index: int = 0) -> Graph:
    rng = _stream(cfg.seed if seed is None else seed, 1, index)
    n = len(anchor.features)
    while True:
        keep = np.flatnonzero(rng.random(n) < cfg.p_vis)
        if len(keep) >= MIN_NODES:
            break
    a, b = random_affine(rng, cfg)
    m = len(keep)
    features = anchor.features[keep] + rng.normal(0.0, cfg.sigma_feat, size=(m, anchor.features.shape[1]))
    coords = anchor.coords[keep] @ a.T + b + rng.normal(0.0, cfg.sigma_coo, size=(m, 2))
    return Graph(coords, features, keep)


class GraphSequence(Sequence):
    """Graphs ``start .. start+count-1`` of a dataset, generated on access."""

    def __init__(self, dataset: SynthDataset, start: int, count: int):
        self._dataset, self._start, self._count = dataset, start, count

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._count))]
        if i < 0:
            i += self._count
        if not 0 <= i < self._count:
            raise IndexError(i)
        return self._dataset.graph(self._start + i)


class SynthDataset:
    """Train graphs take ids ``0 .. n_train-1``, test graphs follow."""

    # graphs are kept in memory only while the whole dataset stays below this size
    CACHE_BYTES = 512 * 2**20

    def __init__(self, cfg: SynthConfig, anchor: Anchor | None = None, graphs: Sequence[Graph] | None = None):
        self.cfg = cfg
        self.anchor = anchor if anchor is not None else generate_anchor(cfg)
        self._graphs: dict[int, Graph] = {}
        if graphs is not None:
            if len(graphs) != cfg.n_graphs:
                raise ValidationError(f"expected {cfg.n_graphs} graphs, got {len(graphs)}")
            self._graphs = dict(enumerate(graphs))
            self._cache = True
        else:
            approx = cfg.n_graphs * cfg.n_univ * cfg.p_vis * (cfg.feat_dim + 8) * 8
            self._cache = approx <= self.CACHE_BYTES
        self.train = GraphSequence(self, 0, cfg.n_train)
        self.test = GraphSequence(self, cfg.n_train, cfg.n_test)

    def graph(self, gid: int) -> Graph:
        g = self._graphs.get(gid)
        if g is None:
            g = sample_graph(self.anchor, self.cfg, index=gid)
            if self._cache:
                self._graphs[gid] = g
        return g

    def split_of(self, gid: int) -> str:
        return "train" if gid < self.cfg.n_train else "test"


# --
# Files


def _fmt(values: np.ndarray) -> str:
    if values.ndim == 1:
        return "[" + ",".join(format(float(v), ".17g") for v in values) + "]"
    return "[" + ",".join(_fmt(row) for row in values) + "]"


def save_dataset(ds: SynthDataset, path: str | Path) -> None:
    """Write ``ds`` as JSON lines with floats at 17 significant digits.

    ``{"type": "meta", "format", "version", "config", "anchor": {"features", "coords"}}``
    then per graph ``{"type": "graph", "id", "split", "labels", "coords", "features"}``.
    Edges are not stored; they are recomputed on load.
    """
    config = json.dumps(asdict(ds.cfg), sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f'{{"type": "meta", "format": "{FORMAT}", "version": {FORMAT_VERSION}, "config": {config}, '
            f'"anchor": {{"features": {_fmt(ds.anchor.features)}, "coords": {_fmt(ds.anchor.coords)}}}}}\n'
        )
        for gid in range(ds.cfg.n_graphs):
            g = ds.graph(gid)
            labels = "[" + ",".join(str(int(v)) for v in g.labels) + "]"
            fh.write(
                f'{{"type": "graph", "id": {gid}, "split": "{ds.split_of(gid)}", "labels": {labels}, '
                f'"coords": {_fmt(g.coords)}, "features": {_fmt(g.features)}}}\n'
            )


def _matrix(value, cols: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, cols)
    if arr.ndim != 2 or arr.shape[1] != cols:
        raise ValidationError(f"{what}: expected rows of width {cols}")
    return arr


def load_dataset(path: str | Path) -> SynthDataset:
    with open(path, encoding="utf-8") as fh:
        try:
            meta = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed metadata record ({exc})") from None
        if meta.get("type") != "meta" or meta.get("format") != FORMAT:
            raise ValidationError(f"{path}: not a synthetic dataset file")
        if meta.get("version") != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported dataset version {meta.get('version')}")
        known = {f.name for f in fields(SynthConfig)}
        try:
            cfg = SynthConfig(**{k: v for k, v in meta["config"].items() if k in known})
            anchor = Anchor(
                _matrix(meta["anchor"]["features"], cfg.feat_dim, "anchor features"),
                _matrix(meta["anchor"]["coords"], 2, "anchor coords"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: incomplete metadata ({exc})") from None
        graphs = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("type") != "graph" or rec["id"] != len(graphs):
                    raise ValidationError(f"{path}:{lineno}: expected graph record {len(graphs)}")
                g = Graph(
                    _matrix(rec["coords"], 2, "coords"),
                    _matrix(rec["features"], cfg.feat_dim, "features"),
                    np.asarray(rec["labels"], dtype=np.int64),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed graph record ({exc})") from None
            if len(g.labels) and g.labels.max() >= cfg.n_univ:
                raise ValidationError(f"{path}:{lineno}: label outside the universe")
            graphs.append(g)
    return SynthDataset(cfg, anchor, graphs)
