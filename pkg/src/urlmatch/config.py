"""Experiment configuration and its ``key = value`` file format.

Example::

    seed = 7
    [synth]
    p_vis = 0.6
    [train]
    epochs = 50
    model.hidden_dim = 32   # dotted keys work anywhere

Keys inside a ``[section]`` are prefixed with the section name unless
they already start with a section name. ``#``
starts a comment. Values are parsed according to the target field type;
``none`` clears optional fields.
"""

from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ValidationError
from .model import EncoderConfig
from .synth import SynthConfig

EVAL_MODES = ("union", "intersection")
CENTROID_MODES = ("paper", "occurrence")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 7e-4
    weight_decay: float = 3e-7
    decay_universe: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 300
    batch_size: int = 16
    seed: int = 123
    # caps on gradient steps; the node budget divides by the expected nodes per batch
    max_steps: int | None = None
    node_step_budget: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("train.epochs must be non-negative")
        if self.batch_size <= 0:
            raise ValidationError("train.batch_size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValidationError("need train.lr > 0 and train.weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("invalid Adam constants")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValidationError("train.max_steps must be non-negative")
        if self.node_step_budget is not None and self.node_step_budget <= 0:
            raise ValidationError("train.node_step_budget must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "union"
    centroid_mode: str | None = None
    n_triples: int = 1000
    baseline_quantile: float = 0.75
    node_budget: int = 4096

    def __post_init__(self):
        if self.mode not in EVAL_MODES:
            raise ValidationError(f"eval.mode must be one of {EVAL_MODES}, got {self.mode!r}")
        if self.centroid_mode is not None and self.centroid_mode not in CENTROID_MODES:
            raise ValidationError(f"eval.centroid_mode must be one of {CENTROID_MODES}, got {self.centroid_mode!r}")
        if self.n_triples <= 0 or self.node_budget <= 0:
            raise ValidationError("eval.n_triples and eval.node_budget must be positive")
        if not 0.0 <= self.baseline_quantile <= 1.0:
            raise ValidationError("eval.baseline_quantile must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # the model's input width and universe size always follow the data
        model = replace(self.model, input_dim=self.synth.feat_dim, universe_size=self.synth.n_univ)
        object.__setattr__(self, "model", model)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, synth=replace(self.synth, seed=seed), train=replace(self.train, seed=seed))

    def with_synth(self, **changes) -> ExperimentConfig:
        return replace(self, synth=_rebuild(self.synth, changes))

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in ("synth", "model", "train", "eval")}


def _rebuild(obj, changes: dict):
    try:
        return replace(obj, **changes)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


_DERIVED = {"model.input_dim": "synth.feat_dim", "model.universe_size": "synth.n_univ"}


def _field_type(cls, name: str):
    hints = typing.get_type_hints(cls)
    if name not in hints:
        raise ValidationError(f"unknown config key {cls.__name__}.{name}")
    return hints[name]


def _coerce(raw: str, hint, key: str):
    text = raw.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional:
        if text.lower() in ("none", "null", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    try:
        if hint is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw.strip()!r} as {hint.__name__}") from None
    raise ValidationError(f"{key}: unsupported field type {hint}")  # pragma: no cover


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    changes: dict[str, dict] = {"synth": {}, "model": {}, "train": {}, "eval": {}}
    seed = None
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        absolute = "." in key and key.split(".", 1)[0] in changes
        full = f"{section}.{key}" if section and not absolute else key
        if full == "seed":
            seed = _coerce(value, int, "seed")
            continue
        group, _, name = full.partition(".")
        if group not in changes or not name or "." in name:
            raise ValidationError(f"line {lineno}: unknown config key {full!r}")
        target = getattr(cfg, group)
        changes[group][name] = _coerce(value, _field_type(type(target), name), full)
    for key, source in _DERIVED.items():
        group, name = key.split(".")
        if name in changes[group]:
            src_group, src_name = source.split(".")
            want = changes[src_group].get(src_name, getattr(getattr(cfg, src_group), src_name))
            if changes[group].pop(name) != want:
                raise ValidationError(f"{key} must equal {source}")
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return ExperimentConfig(
        **{group: _rebuild(getattr(cfg, group), values) for group, values in changes.items()}
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for group, values in cfg.to_dict().items():
        lines.append(f"[{group}]")
        for name, value in values.items():
            if f"{group}.{name}" in _DERIVED:
                continue
            lines.append(f"{name} = {_render(value)}")
        lines.append("")
    return "\n".join(lines)
