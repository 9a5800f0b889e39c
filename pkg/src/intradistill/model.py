"""Small MLP family with a flat, segment-addressed parameter view."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import DropoutMask, Graph, RngStream, ShapeError, Tensor, draw_mask

TASKS = ("classification", "regression")
INIT_STREAM = 2**62

_MAGIC = b"IDCKPT01"


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    task: str = "classification"
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def parameter_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(**d)


@dataclass(frozen=True)
class ParameterVector:
    """All model parameters, as named segments over one flat index space.

    Segments are ``layer{i}.weight`` with shape ``(fan_in, fan_out)`` and
    ``layer{i}.bias`` with shape ``(fan_out,)``, in layer order.
    """

    config: MlpConfig
    segments: tuple[tuple[str, np.ndarray], ...]
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        frozen = []
        for name, arr in self.segments:
            a = np.array(arr, dtype=np.float64)
            a.setflags(write=False)
            frozen.append((name, a))
        object.__setattr__(self, "segments", tuple(frozen))
        sizes = [a.size for _, a in frozen]
        object.__setattr__(self, "_offsets", np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64))
        expected = _segment_shapes(self.config)
        got = [(n, a.shape) for n, a in frozen]
        if got != expected:
            raise ShapeError(f"parameter segments {got} do not match config layout {expected}")

    @property
    def total_count(self) -> int:
        return int(self._offsets[-1])

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.segments]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for _, a in self.segments])

    def with_flat(self, values: np.ndarray) -> "ParameterVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.total_count,):
            raise ShapeError(f"expected {self.total_count} values, got shape {values.shape}")
        segs = []
        for (name, arr), lo, hi in zip(self.segments, self._offsets[:-1], self._offsets[1:]):
            segs.append((name, values[lo:hi].reshape(arr.shape)))
        return ParameterVector(self.config, tuple(segs))

    def locate(self, index: int) -> tuple[int, int]:
        """Flat index -> (segment number, offset inside the segment)."""
        if not 0 <= index < self.total_count:
            raise IndexError(f"flat index {index} out of range [0, {self.total_count})")
        seg = int(np.searchsorted(self._offsets, index, side="right")) - 1
        return seg, int(index - self._offsets[seg])

    def flat_index(self, segment: int, offset: int) -> int:
        size = self.segments[segment][1].size
        if not 0 <= offset < size:
            raise IndexError(f"offset {offset} out of range for segment of size {size}")
        return int(self._offsets[segment] + offset)

    def layer_names(self) -> list[str]:
        """Segment name for every flat index."""
        out: list[str] = []
        for name, arr in self.segments:
            out.extend([name] * arr.size)
        return out


@dataclass(frozen=True)
class ParameterSubset:
    indices: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        uniq = np.unique(idx)
        if uniq.size != idx.size:
            raise ValueError("parameter subset contains duplicate indices")
        uniq.setflags(write=False)
        object.__setattr__(self, "indices", uniq)

    def __len__(self) -> int:
        return int(self.indices.size)

    def validate(self, total: int) -> None:
        if self.indices.size and (self.indices[0] < 0 or self.indices[-1] >= total):
            raise IndexError(f"subset indices must lie in [0, {total})")


def _segment_shapes(config: MlpConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    for i, (fan_in, fan_out) in enumerate(config.layer_dims):
        shapes.append((f"layer{i}.weight", (fan_in, fan_out)))
        shapes.append((f"layer{i}.bias", (fan_out,)))
    return shapes


def init(config: MlpConfig, rng: RngStream | int) -> ParameterVector:
    """Uniform fan-based weights, zero biases."""
    if isinstance(rng, int):
        rng = RngStream(rng, INIT_STREAM)
    segs = []
    for name, shape in _segment_shapes(config):
        if name.endswith(".bias"):
            segs.append((name, np.zeros(shape)))
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            u = rng.uniform(shape[0] * shape[1]).reshape(shape)
            segs.append((name, (2.0 * u - 1.0) * limit))
    return ParameterVector(config, tuple(segs))


def bind(params: ParameterVector, graph: Graph) -> list[Tensor]:
    """Leaf tensors for every segment, in segment order."""
    return [graph.leaf(arr, name) for name, arr in params.segments]


def draw_masks(config: MlpConfig, rows: int, rng: RngStream) -> list[DropoutMask]:
    return [draw_mask(rng, (rows, h), config.dropout_rate) for h in config.hidden_dims]


def forward(
    params: ParameterVector,
    batch,
    masks: Sequence[DropoutMask] | None = None,
    graph: Graph | None = None,
    leaves: Sequence[Tensor] | None = None,
) -> Tensor:
    """Run the MLP. Classification returns row log-probabilities, regression
    returns an ``(rows, output_dim)`` tensor of raw outputs.

    ``masks`` (one per hidden layer) switch on training-mode dropout.
    Pass shared ``leaves`` to accumulate gradients across several passes.
    """
    config = params.config
    graph = graph if graph is not None else Graph()
    if leaves is None:
        leaves = bind(params, graph)
    h = batch if isinstance(batch, Tensor) else graph.leaf(batch)
    if h.value.ndim != 2 or h.shape[1] != config.input_dim:
        raise ShapeError(f"forward: batch shape {h.shape} does not match input_dim {config.input_dim}")
    n_hidden = len(config.hidden_dims)
    if masks is not None and len(masks) != n_hidden:
        raise ShapeError(f"forward: expected {n_hidden} masks, got {len(masks)}")
    for layer in range(n_hidden + 1):
        w, b = leaves[2 * layer], leaves[2 * layer + 1]
        h = graph.add_bias(graph.matmul(h, w), b)
        if layer < n_hidden:
            h = graph.relu(h)
            if masks is not None:
                m = masks[layer]
                if m.shape != h.shape:
                    raise ShapeError(f"forward: mask shape {m.shape} does not match activation {h.shape}")
                h = graph.multiply(h, graph.leaf(m.scaled()))
    if config.task == "classification":
        h = graph.log_softmax(h)
    return h


def zero_out(params: ParameterVector, subset: ParameterSubset) -> ParameterVector:
    subset.validate(params.total_count)
    flat = params.flat()
    flat[subset.indices] = 0.0
    return params.with_flat(flat)


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout (little-endian):
#   magic[8] | u32 config_len | config json | u32 n_segments
#   | per segment: u16 name_len | name | u8 ndim | u32 dims...
#   | f64 values (all segments, flat order)


def save_checkpoint(path, params: ParameterVector, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    parts = [_MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params.segments))]
    for name, arr in params.segments:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(params.flat().astype("<f8").tobytes())
    path.write_bytes(b"".join(parts))
    meta = {
        "format": "intradistill-checkpoint-v1",
        "parameter_count": params.total_count,
        "segments": ",".join(params.names),
        **params.config.to_dict(),
        **(extra or {}),
    }
    sidecar = path.with_name(path.name + ".meta.txt")
    sidecar.write_text("".join(f"{k}: {_meta_str(v)}\n" for k, v in meta.items()))
    return path


def _meta_str(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def load_checkpoint(path) -> ParameterVector:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not an intradistill checkpoint")
    pos = 8
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = MlpConfig.from_dict(json.loads(data[pos : pos + n]))
    pos += n
    (nseg,) = struct.unpack_from("<I", data, pos)
    pos += 4
    layout = []
    for _ in range(nseg):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        layout.append((name, shape))
    values = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
    segs, off = [], 0
    for name, shape in layout:
        size = math.prod(shape)
        segs.append((name, values[off : off + size].reshape(shape)))
        off += size
    if off != values.size:
        raise ValueError(f"{path}: {values.size} stored values, layout expects {off}")
    return ParameterVector(config, tuple(segs))
