"""Named parameter storage, the Adam optimizer and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"URLM"            magic
    u32                format version (1)
    u32                tensor count
    per tensor:
      u32 + bytes      name length, UTF-8 name
      u32              rank
      u64 * rank       dims
      f64 * prod(dims) values, C order
"""

from __future__ import annotations

import struct
from collections.abc import MutableMapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError, ContractError

MAGIC = b"URLM"
FORMAT_VERSION = 1


class ParamStore(MutableMapping):
    """Insertion-ordered map ``name -> Tensor`` of trainable parameters."""

    def __init__(self, items: Mapping[str, np.ndarray] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, value in (items or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __setitem__(self, name: str, value) -> None:
        arr = value.value if isinstance(value, Tensor) else value
        arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        if name in self._tensors:
            # keep the Tensor object so references held by callers stay valid
            if self._tensors[name].shape != arr.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {self._tensors[name].shape}")
            self._tensors[name].value[...] = arr
        else:
            self._tensors[name] = Tensor(arr, requires_grad=True)

    def __delitem__(self, name: str) -> None:
        del self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def copy(self) -> ParamStore:
        return ParamStore({name: t.value for name, t in self._tensors.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self._tensors.items()}

    def num_values(self) -> int:
        return sum(t.value.size for t in self._tensors.values())

    def equals(self, other: ParamStore) -> bool:
        """Bit-exact comparison of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(
            self[n].shape == other[n].shape and self[n].value.tobytes() == other[n].value.tobytes()
            for n in self
        )


# --
# Optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 7e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 3e-7,
    decay: Mapping[str, bool] | None = None,
) -> ParamStore:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``decay`` optionally switches weight decay off per parameter name.
    """
    missing = [name for name in store if name not in grads]
    if missing:
        raise ContractError(f"no gradient for {missing}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store:
        theta = store[name].value
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            v = state.v[name] = np.zeros_like(theta)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay and (decay is None or decay.get(name, True)):
            theta *= 1.0 - lr * weight_decay
        denom = np.sqrt(v / c2)
        denom += eps
        theta -= (lr / c1) * m / denom
    return store


# --
# Checkpoints


def save_checkpoint(store: ParamStore, path: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(store))]
    for name in store:
        value = store[name].value
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> ParamStore:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        offset = 12
        store = ParamStore()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + n].decode("utf-8")
            offset += n
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if offset + 8 * size > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            values = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(dims)
            offset += 8 * size
            if name in store:
                raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
            store[name] = values
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return store
