"""Declarative model specs, the block CNN builder, and checkpoint I/O."""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    ShapeError,
    SpecError,
    TruncatedCheckpointError,
    UnknownVersionError,
)
from .layers import (
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GradBundle,
    Layer,
    MaxPool2x2,
    PadToEven,
    ReLU,
    Sigmoid,
    Softmax,
)
from .tensor import PRECISIONS, dtype_for

TASK_OUTPUTS = {"binary": 1, "three_class": 3}


@dataclass
class ModelSpec:
    task: str = "binary"
    input_size: tuple = (224, 224)
    channels: int = 3
    block_filters: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    convs_per_block: int = 2
    dense_sizes: list = field(default_factory=lambda: [512, 128, 64])
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5
    kernel: int = 3
    bn_momentum: float = 0.9
    pad_odd: bool = True
    precision: str = "f32"
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.block_filters = [int(v) for v in self.block_filters]
        self.dense_sizes = [int(v) for v in self.dense_sizes]
        self.validate()

    @property
    def n_outputs(self) -> int:
        return TASK_OUTPUTS[self.task]

    @property
    def loss_kind(self) -> str:
        return "bce" if self.task == "binary" else "cce"

    def validate(self):
        if self.task not in TASK_OUTPUTS:
            raise SpecError(f"task must be one of {sorted(TASK_OUTPUTS)}, got {self.task!r}")
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise SpecError(f"input_size must be two positive ints, got {self.input_size}")
        if self.channels < 1:
            raise SpecError("channels must be positive")
        if not self.block_filters or min(self.block_filters) < 1:
            raise SpecError(f"block_filters must be non-empty and positive, got {self.block_filters}")
        if self.convs_per_block < 1:
            raise SpecError("convs_per_block must be >= 1")
        if self.dense_sizes and min(self.dense_sizes) < 1:
            raise SpecError(f"dense sizes must be positive, got {self.dense_sizes}")
        for rate in (self.dropout_conv, self.dropout_dense):
            if not 0 <= rate < 1:
                raise SpecError(f"dropout rate {rate} outside [0, 1)")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise SpecError(f"kernel side must be odd, got {self.kernel}")
        if self.precision not in PRECISIONS:
            raise SpecError(f"precision must be f32 or f64, got {self.precision!r}")
        if not self.pad_odd:
            depth = 2 ** len(self.block_filters)
            if any(v % depth for v in self.input_size):
                raise SpecError(
                    f"input {self.input_size} not divisible by 2^{len(self.block_filters)} "
                    "and odd-extent padding is disabled"
                )

    def feature_shape(self) -> tuple:
        """(channels, height, width) of the map entering the flatten layer."""
        h, w = self.input_size
        for _ in self.block_filters:
            h, w = (h + 1) // 2, (w + 1) // 2
        return (self.block_filters[-1], h, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(**d)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Model:
    """A built network: feature blocks, dense head, and output activation.

    ``layers`` ends with the output dense layer, so ``run(x)`` over all of
    them yields logits; ``forward`` adds the sigmoid/softmax.
    """

    def __init__(self, spec: ModelSpec, layers: list, blocks: list):
        self.spec = spec
        self.layers = layers
        self.blocks = blocks  # (start, stop) layer index range per conv block
        self.output = Sigmoid() if spec.task == "binary" else Softmax()

    @property
    def dtype(self):
        return dtype_for(self.spec.precision)

    def conv_indices(self) -> list:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv2D)]

    def named_parameters(self) -> dict:
        return {
            f"layer{i:02d}.{layer.kind}.{name}": arr
            for i, layer in enumerate(self.layers)
            for name, arr in layer.params.items()
        }

    def named_buffers(self) -> dict:
        return {
            f"layer{i:02d}.{layer.kind}.{name}": arr
            for i, layer in enumerate(self.layers)
            for name, arr in layer.buffers.items()
        }

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.named_parameters().values())

    def _check_input(self, x):
        expected = (self.spec.channels, *self.spec.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"model expects b x {expected[0]} x {expected[1]} x {expected[2]}, got {x.shape}")

    def run(self, x, train=False, rng=None, start=0, stop=None):
        """Apply ``layers[start:stop]``; no output activation."""
        for layer in self.layers[start:stop]:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def logits(self, x, train=False, rng=None):
        x = np.asarray(x)
        self._check_input(x)
        if not (x.dtype.kind == "f" and x.dtype.itemsize >= self.dtype.itemsize):
            x = x.astype(self.dtype)
        return self.run(x, train=train, rng=rng)

    def forward(self, x, train=False, rng=None):
        return self.output.forward(self.logits(x, train=train, rng=rng), train=train)

    def predict_proba(self, x):
        return self.forward(x, train=False)

    def backward_from(self, upstream, stop, start=0) -> GradBundle:
        """Backpropagate ``upstream`` through ``layers[start:stop]`` in reverse."""
        grads = {}
        g = upstream
        for i in range(stop - 1, start - 1, -1):
            layer = self.layers[i]
            bundle = layer.backward(g)
            for name, arr in bundle.grads.items():
                grads[f"layer{i:02d}.{layer.kind}.{name}"] = arr
            g = bundle.input_grad
        return GradBundle(grads, g)

    def backward_logits(self, upstream) -> GradBundle:
        return self.backward_from(upstream, len(self.layers))

    def backward(self, upstream) -> GradBundle:
        """Backpropagate a gradient with respect to the output probabilities."""
        g = self.output.backward(upstream).input_grad
        return self.backward_logits(g)

    def __repr__(self):
        return f"Model({self.spec.task}, {len(self.layers)} layers, {self.parameter_count()} params)"


def build(spec: ModelSpec) -> Model:
    """Build the block CNN described by ``spec`` with He-uniform weights."""
    spec.validate()
    dtype = dtype_for(spec.precision)
    layers: list[Layer] = []
    blocks = []
    in_ch = spec.channels
    for filters in spec.block_filters:
        start = len(layers)
        for _ in range(spec.convs_per_block):
            layers += [
                Conv2D(in_ch, filters, spec.kernel, dtype=dtype),
                BatchNorm2D(filters, momentum=spec.bn_momentum, dtype=dtype),
                ReLU(),
            ]
            in_ch = filters
        if spec.pad_odd:
            layers.append(PadToEven())
        layers += [MaxPool2x2(), Dropout(spec.dropout_conv)]
        blocks.append((start, len(layers)))
    layers.append(Flatten())
    n_in = int(np.prod(spec.feature_shape()))
    for size in spec.dense_sizes:
        layers += [Dense(n_in, size, dtype=dtype), ReLU(), Dropout(spec.dropout_dense)]
        n_in = size
    layers.append(Dense(n_in, spec.n_outputs, dtype=dtype))

    rng = np.random.default_rng(spec.seed)
    for layer in layers:
        if isinstance(layer, (Conv2D, Dense)):
            W = layer.params["W"]
            limit = math.sqrt(6.0 / layer.fan_in)
            W[...] = rng.uniform(-limit, limit, size=W.shape)
    return Model(spec, layers, blocks)


# --------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   b"RDNT" | u16 version | u32 header_len | header (canonical JSON, utf-8)
#   u32 n_tensors | per tensor: u32 name_len, name, u32 rank, u32 dims[rank], raw data
# tensors are float32 unless the header says tensor_dtype == "f64"

MAGIC = b"RDNT"
VERSION = 1


@dataclass
class Checkpoint:
    model: Model
    state: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # extra tensors, e.g. optimizer moments


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def checkpoint_bytes(model: Model, state=None, extra_tensors=None) -> bytes:
    dtype = dtype_for(model.spec.precision)
    header = {
        "format": "radnet-checkpoint",
        "spec": model.spec.to_dict(),
        "state": state or {},
        "tensor_dtype": model.spec.precision,
    }
    tensors = {**model.named_parameters(), **model.named_buffers(), **(extra_tensors or {})}
    buf = io.BytesIO()
    head = _canonical_json(header)
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(head)))
    buf.write(head)
    buf.write(struct.pack("<I", len(tensors)))
    le = dtype.newbyteorder("<")
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=le)
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save(model: Model, path, state=None, extra_tensors=None):
    """Write a checkpoint atomically (temp file + rename)."""
    path = Path(path)
    data = checkpoint_bytes(model, state, extra_tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < len(MAGIC) and MAGIC.startswith(data):
        raise TruncatedCheckpointError(f"checkpoint truncated: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagicError("bad magic: not a radnet checkpoint")
    r.take(4)
    version, head_len = r.unpack("<HI")
    if version != VERSION:
        raise UnknownVersionError(f"unknown checkpoint version {version} (supported: {VERSION})")
    try:
        header = json.loads(r.take(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    spec = ModelSpec.from_dict(header["spec"])
    dtype = dtype_for(header.get("tensor_dtype", "f32")).newbyteorder("<")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype_for(spec.precision))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint tensors")

    model = build(spec)
    owned = {**model.named_parameters(), **model.named_buffers()}
    for name, arr in owned.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if tensors[name].shape != arr.shape:
            raise CheckpointError(f"tensor {name}: stored {tensors[name].shape}, model needs {arr.shape}")
        arr[...] = tensors.pop(name)
    # stored running statistics count as loaded, trained or not
    for layer in model.layers:
        if isinstance(layer, BatchNorm2D):
            layer.stats_ready = True
    return Checkpoint(model, header.get("state", {}), tensors)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def load(path) -> Model:
    return load_checkpoint(path).model
