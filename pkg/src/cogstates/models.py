"""The two fixed sequence classifiers and their layer-table summaries.

Both models consume (B, 277, 214) inputs and emit 6-way softmax
probabilities. Layer stacks, kernel size 3, and 64 hidden units per LSTM
direction are fixed by the parameter-count arithmetic of the reference
layer tables; only dropout rate, seed, and numeric width are configurable.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tz
from .tensor import Parameter, ShapeError, Tensor

INPUT_LENGTH = 277
INPUT_CHANNELS = 214
N_CLASSES = 6

CNN_KERNEL = 3
CNN_FILTERS = (64, 128)
CNN_DENSE = 128
LSTM_HIDDEN = 64
BILSTM_DENSE = 64

CHECKPOINT_MAGIC = b"CGSTCKP1"
CHECKPOINT_VERSION = 1


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    """Build-time knobs; dropout defaults differ per architecture (0.4 CNN, 0.5 BiLSTM)."""

    kind: str = "cnn"  # "cnn" | "bilstm"
    dropout_rate: Optional[float] = None
    seed: int = 0
    dtype: str = "float64"  # "float64" | "float32"

    def __post_init__(self):
        if self.kind not in ("cnn", "bilstm"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.dtype not in ("float64", "float32"):
            raise ModelError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.dropout_rate is None:
            self.dropout_rate = 0.4 if self.kind == "cnn" else 0.5
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


@dataclass
class SummaryRow:
    layer: str
    output_shape: tuple
    param_count: int


@dataclass
class ModelSummary:
    rows: list[SummaryRow]
    total_params: int

    def param_counts(self) -> list[int]:
        return [r.param_count for r in self.rows]

    def output_shapes(self) -> list[tuple]:
        return [r.output_shape for r in self.rows]

    def to_json(self) -> str:
        payload = {
            "layers": [{"layer": r.layer, "output_shape": list(r.output_shape),
                        "param_count": r.param_count} for r in self.rows],
            "total_params": self.total_params,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _lstm_uniform(rng: np.random.Generator, fan_in: int, four_h: int, dtype):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, four_h)).astype(dtype)


class Layer:
    """One stage of the stack; stateless apart from its parameters."""

    name: str = "Layer"

    def params(self) -> list[Parameter]:
        return []

    def forward(self, x: Tensor, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError


class InputLayer(Layer):
    name = "InputLayer"

    def __init__(self, length: int, channels: int):
        self.length = length
        self.channels = channels

    def forward(self, x, mode, rng):
        if x.shape[1:] != (self.length, self.channels):
            raise ShapeError(
                f"input batch must be (B, {self.length}, {self.channels}), got {x.shape}")
        return x

    def output_shape(self, in_shape):
        return (self.length, self.channels)


class Conv1DLayer(Layer):
    name = "Conv1D (ReLU)"

    def __init__(self, kernel: int, cin: int, cout: int, rng, dtype, tag: str):
        self.kernel = kernel
        self.cout = cout
        w = _glorot_uniform(rng, (kernel, cin, cout), kernel * cin, kernel * cout, dtype)
        self.w = Parameter(Tensor(w), name=f"{tag}.w")
        self.b = Parameter(Tensor(np.zeros(cout, dtype=dtype)), name=f"{tag}.b")

    def params(self):
        return [self.w, self.b]

    def forward(self, x, mode, rng):
        return tz.relu(tz.conv1d(x, self.w.tensor, self.b.tensor))

    def output_shape(self, in_shape):
        return (in_shape[0], self.cout)


class DropoutLayer(Layer):
    def __init__(self, rate: float):
        self.rate = rate
        self.name = f"Dropout ({rate:g})"

    def forward(self, x, mode, rng):
        return tz.dropout(x, self.rate, mode, rng)

    def output_shape(self, in_shape):
        return in_shape


class MaxPool1DLayer(Layer):
    name = "MaxPooling1D"

    def __init__(self, pool: int = 2):
        self.pool = pool

    def forward(self, x, mode, rng):
        return tz.maxpool1d(x, pool=self.pool, stride=self.pool)

    def output_shape(self, in_shape):
        return (in_shape[0] // self.pool, in_shape[1])


class FlattenLayer(Layer):
    name = "Flatten"

    def forward(self, x, mode, rng):
        return tz.flatten(x)

    def output_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)


class DenseLayer(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str, rng, dtype, tag: str,
                 name: str):
        self.name = name
        self.n_out = n_out
        self.activation = activation
        w = _glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.w = Parameter(Tensor(w), name=f"{tag}.w")
        self.b = Parameter(Tensor(np.zeros(n_out, dtype=dtype)), name=f"{tag}.b")

    def params(self):
        return [self.w, self.b]

    def forward(self, x, mode, rng):
        out = tz.dense(x, self.w.tensor, self.b.tensor)
        if self.activation == "relu":
            return tz.relu(out)
        if self.activation == "softmax":
            return tz.softmax(out)
        return out

    def output_shape(self, in_shape):
        return (self.n_out,)


class BidirectionalLSTMLayer(Layer):
    name = "Bidirectional (tanh/sigmoid)"

    def __init__(self, cin: int, hidden: int, rng, dtype, tag: str):
        self.hidden = hidden
        fan_in = cin + hidden
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden:2 * hidden] = 1.0  # forget-gate bias stabilizes early training
        self.wf = Parameter(Tensor(_lstm_uniform(rng, fan_in, 4 * hidden, dtype)), name=f"{tag}.fwd.w")
        self.bf = Parameter(Tensor(bias.copy()), name=f"{tag}.fwd.b")
        self.wb = Parameter(Tensor(_lstm_uniform(rng, fan_in, 4 * hidden, dtype)), name=f"{tag}.bwd.w")
        self.bb = Parameter(Tensor(bias.copy()), name=f"{tag}.bwd.b")

    def params(self):
        return [self.wf, self.bf, self.wb, self.bb]

    def forward(self, x, mode, rng):
        return tz.bilstm_forward(x, (self.wf.tensor, self.bf.tensor),
                                 (self.wb.tensor, self.bb.tensor))

    def output_shape(self, in_shape):
        return (in_shape[0], 2 * self.hidden)


class Model:
    """An ordered layer stack with a fixed input contract."""

    def __init__(self, config: ModelConfig, layers: list[Layer], input_length: int):
        self.config = config
        self.layers = layers
        self.input_length = input_length
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ModelError("duplicate parameter names in model")

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: Tensor, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> Tensor:
        if mode == "train" and rng is None and any(
                isinstance(l, DropoutLayer) and l.rate > 0 for l in self.layers):
            raise ModelError("train-mode forward requires an rng for dropout")
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def summary(self) -> ModelSummary:
        rows = []
        shape: tuple = ()
        for layer in self.layers:
            shape = layer.output_shape(shape)
            count = sum(p.tensor.size for p in layer.params())
            rows.append(SummaryRow(layer.name, shape, count))
        return ModelSummary(rows, sum(r.param_count for r in rows))

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.tensor.data) for p in self.parameters()]

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise ModelError(f"checkpoint missing parameter {p.name!r}")
            src = arrays[p.name]
            if src.shape != p.tensor.data.shape:
                raise ModelError(
                    f"checkpoint parameter {p.name!r} has shape {src.shape}, "
                    f"model expects {p.tensor.data.shape}")
            p.tensor.data[...] = src.astype(p.tensor.data.dtype)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data.copy() for p in self.parameters()}


def build_cnn(config: ModelConfig, input_length: int = INPUT_LENGTH) -> Model:
    """Conv(3,64) -> Drop -> Pool -> Conv(3,128) -> Drop -> Pool -> Flatten
    -> Dense(128) -> Drop -> Dense(6, softmax)."""
    if config.kind != "cnn":
        raise ModelError(f"build_cnn called with kind={config.kind!r}")
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    rate = config.dropout_rate
    flat = (input_length // 4) * CNN_FILTERS[1]
    layers = [
        InputLayer(input_length, INPUT_CHANNELS),
        Conv1DLayer(CNN_KERNEL, INPUT_CHANNELS, CNN_FILTERS[0], rng, dt, "conv1"),
        DropoutLayer(rate),
        MaxPool1DLayer(2),
        Conv1DLayer(CNN_KERNEL, CNN_FILTERS[0], CNN_FILTERS[1], rng, dt, "conv2"),
        DropoutLayer(rate),
        MaxPool1DLayer(2),
        FlattenLayer(),
        DenseLayer(flat, CNN_DENSE, "relu", rng, dt, "fc1", "Fully Connected Layer (ReLU)"),
        DropoutLayer(rate),
        DenseLayer(CNN_DENSE, N_CLASSES, "softmax", rng, dt, "out", "Output Layer (SoftMax)"),
    ]
    return Model(config, layers, input_length)


def build_bilstm(config: ModelConfig, input_length: int = INPUT_LENGTH) -> Model:
    """BiLSTM(64 per direction) -> Flatten -> Drop -> Dense(64) -> Drop
    -> Dense(6, softmax)."""
    if config.kind != "bilstm":
        raise ModelError(f"build_bilstm called with kind={config.kind!r}")
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    rate = config.dropout_rate
    flat = input_length * 2 * LSTM_HIDDEN
    layers = [
        InputLayer(input_length, INPUT_CHANNELS),
        BidirectionalLSTMLayer(INPUT_CHANNELS, LSTM_HIDDEN, rng, dt, "bilstm"),
        FlattenLayer(),
        DropoutLayer(rate),
        DenseLayer(flat, BILSTM_DENSE, "relu", rng, dt, "fc1", "Fully Connected Layer (ReLU)"),
        DropoutLayer(rate),
        DenseLayer(BILSTM_DENSE, N_CLASSES, "softmax", rng, dt, "out", "Output Layer (SoftMax)"),
    ]
    return Model(config, layers, input_length)


def build_model(config: ModelConfig, input_length: int = INPUT_LENGTH) -> Model:
    return build_cnn(config, input_length) if config.kind == "cnn" else build_bilstm(config, input_length)


def predict(model: Model, batch, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode class probabilities and argmax labels (lowest index wins ties)."""
    data = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if data.ndim != 3:
        raise ShapeError(f"predict expects a (B, T, C) batch, got shape {data.shape}")
    probs = np.empty((data.shape[0], N_CLASSES), dtype=data.dtype)
    for lo in range(0, data.shape[0], batch_size):
        chunk = Tensor(data[lo:lo + batch_size])
        probs[lo:lo + chunk.shape[0]] = model.forward(chunk, mode="eval").data
    return probs, probs.argmax(axis=1)


def save_checkpoint(path, model: Model) -> None:
    """Self-describing container: magic, version, JSON header, raw LE parameter blob."""
    header = {
        "config": {
            "kind": model.config.kind,
            "dropout_rate": model.config.dropout_rate,
            "seed": model.config.seed,
            "dtype": model.config.dtype,
        },
        "input_length": model.input_length,
        "layers": [layer.name for layer in model.layers],
        "params": [{"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
                   for name, arr in model.state_arrays()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for _, arr in model.state_arrays():
        buf.write(np.ascontiguousarray(arr).astype("<" + arr.dtype.str[1:]).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a model checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    cfg = ModelConfig(**header["config"])
    model = build_model(cfg, input_length=header["input_length"])
    offset = 16 + hlen
    arrays = {}
    for spec in header["params"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dtype).reshape(spec["shape"])
        arrays[spec["name"]] = arr
        offset += nbytes
    if offset != len(blob):
        raise ModelError(f"{path}: trailing bytes in checkpoint")
    model.load_state(arrays)
    return model
