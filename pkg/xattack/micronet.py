"""
MicroNet: a small self-implemented convolutional classifier.

Architecture (input W×H×C, J classes):

    conv 3×3, 8 filters, stride 1, zero padding 1
    → ReLU → average pool 2×2
    → conv 3×3, 16 filters, stride 1, zero padding 1
    → ReLU → global average pool → dense(J)

Gradients are exact reverse mode, written as one backward function per layer.
Every forward pass can record a layer trace (inputs, outputs and the
input-side vector-Jacobian product of each linear layer); DeepLIFT consumes it.

The `ModelBackend` base class is the black-box interface f(·) the attack uses:
predictions, logits, input gradients and the layer trace. `LinearBackend` is a
second, affine implementation used as an analytic oracle.

Weights file layout (all integers uint32 little-endian, floats float64 LE):

    b"XATKW" + b"001"           magic and format version
    J, W, H, C
    6 × (name length, name UTF-8, rank, dims..., raw values)

in the order of PARAM_ORDER.
"""

import io
import logging
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from tqdm import tqdm

from .data_io import BinaryReader, FormatError, LabeledDataset, read_header, write_header
from .tensor_core import AttributionMap, ImageTensor, Rng, ShapeMismatchError
from .utils import PathLike, XAttackError, atomic_write_bytes

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"XATKW"
WEIGHTS_VERSION = b"001"

PARAM_ORDER = (
    "conv1.weight", "conv1.bias",
    "conv2.weight", "conv2.bias",
    "dense.weight", "dense.bias",
)
CONV1_FILTERS = 8
CONV2_FILTERS = 16


def param_shapes(num_classes: int, channels: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "conv1.weight": (3, 3, channels, CONV1_FILTERS),
        "conv1.bias": (CONV1_FILTERS,),
        "conv2.weight": (3, 3, CONV1_FILTERS, CONV2_FILTERS),
        "conv2.bias": (CONV2_FILTERS,),
        "dense.weight": (CONV2_FILTERS, num_classes),
        "dense.bias": (num_classes,),
    }


# Layer kinds whose input-side map is linear; DeepLIFT propagates through them with `vjp`
LINEAR_KINDS = frozenset({"conv", "avgpool", "gap", "dense", "identity"})


class ClassIndexError(XAttackError, IndexError):
    """Class index outside [0, J)"""


class EmptyDatasetError(XAttackError, ValueError):
    """Training was asked to run on an empty dataset"""


class TrainingDivergedError(XAttackError, ArithmeticError):
    """Loss became NaN or infinite during training"""


@dataclass
class LayerRecord:
    """One layer of a forward trace"""
    kind: str
    name: str
    inputs: np.ndarray
    outputs: np.ndarray
    vjp: Optional[Callable[[np.ndarray], np.ndarray]] = None


LayerTrace = List[LayerRecord]


@dataclass(frozen=True, eq=False)
class ClassProbs:
    """Probability simplex vector f(x)"""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True).reshape(-1)
        if probs.size < 1 or np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("class probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"class probabilities sum to {probs.sum()!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, index: int) -> float:
        return float(self.probs[index])

    def __len__(self) -> int:
        return self.num_classes


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row maximum"""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class ForwardResult(NamedTuple):
    logits: np.ndarray
    probs: ClassProbs
    trace: LayerTrace


class ModelBackend(ABC):
    """Black-box classifier interface: predictions, logits, input gradients, layer trace"""

    @property
    @abstractmethod
    def num_classes(self) -> int:
        ...

    @property
    @abstractmethod
    def input_shape(self) -> Tuple[int, int, int]:
        """(W, H, C)"""

    @abstractmethod
    def logits_batch(self, xs: np.ndarray) -> np.ndarray:
        """(N, H, W, C) array → (N, J) logits"""

    @abstractmethod
    def input_gradient_batch(self, xs: np.ndarray, class_index: int) -> np.ndarray:
        """(N, H, W, C) array → ∂ logit_j / ∂x for every row"""

    @abstractmethod
    def layer_trace(self, xs: np.ndarray) -> LayerTrace:
        """Forward trace of a (N, H, W, C) batch"""

    def check_input(self, x: ImageTensor) -> None:
        if x.shape != self.input_shape:
            raise ShapeMismatchError(x.shape, self.input_shape, "input and model")

    def check_class(self, class_index: int) -> None:
        if not 0 <= class_index < self.num_classes:
            raise ClassIndexError(f"class index {class_index} outside [0, {self.num_classes})")

    def logits(self, x: ImageTensor) -> np.ndarray:
        self.check_input(x)
        return self.logits_batch(x.data[None])[0]

    def predict(self, x: ImageTensor) -> ClassProbs:
        return ClassProbs(softmax(self.logits(x)))

    def predict_batch(self, xs: np.ndarray) -> np.ndarray:
        return softmax(self.logits_batch(xs))

    def input_gradient(self, x: ImageTensor, class_index: int) -> AttributionMap:
        self.check_input(x)
        self.check_class(class_index)
        return AttributionMap(self.input_gradient_batch(x.data[None], class_index)[0])


# Per-layer forward / backward functions (batched, NHWC)

def _conv_windows(x: np.ndarray) -> np.ndarray:
    """Zero-pad by one and return im2col rows of shape (N·H·W, 9·C)"""
    n, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, h, w, _ = x.shape
    out = _conv_windows(x) @ weight.reshape(-1, weight.shape[-1]) + bias
    return out.reshape(n, h, w, weight.shape[-1])


def conv_input_vjp(grad: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Transpose convolution: full correlation of grad with the flipped kernel"""
    flipped = weight[::-1, ::-1].transpose(0, 1, 3, 2)  # (3, 3, Cout, Cin)
    return conv_forward(grad, flipped, np.zeros(flipped.shape[-1]))


def conv_param_grads(x: np.ndarray, grad: np.ndarray, weight_shape) -> Tuple[np.ndarray, np.ndarray]:
    cols = _conv_windows(x)
    flat_grad = grad.reshape(-1, grad.shape[-1])
    return (cols.T @ flat_grad).reshape(weight_shape), flat_grad.sum(axis=0)


def avgpool_forward(x: np.ndarray) -> np.ndarray:
    """2×2 average pool; an odd trailing row/column is dropped"""
    n, h, w, c = x.shape
    cropped = x[:, : 2 * (h // 2), : 2 * (w // 2)]
    return cropped.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool_vjp(grad: np.ndarray, input_shape) -> np.ndarray:
    out = np.zeros((grad.shape[0],) + tuple(input_shape[1:]))
    spread = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2) / 4.0
    out[:, : spread.shape[1], : spread.shape[2]] = spread
    return out


def gap_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(1, 2))


def gap_vjp(grad: np.ndarray, input_shape) -> np.ndarray:
    _, h, w, c = input_shape
    return np.broadcast_to(grad[:, None, None, :] / (h * w), (grad.shape[0], h, w, c)).copy()


@dataclass
class MicroNet(ModelBackend):
    """conv → ReLU → avgpool → conv → ReLU → GAP → dense"""
    params: Dict[str, np.ndarray]
    shape: Tuple[int, int, int]  # (W, H, C)
    classes: int
    activation: str = "relu"  # "identity" builds the linearized test network

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"activation must be 'relu' or 'identity', got {self.activation!r}")
        missing = [name for name in PARAM_ORDER if name not in self.params]
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        self.params = {name: np.asarray(self.params[name], dtype=np.float64) for name in PARAM_ORDER}
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {name} contains non-finite values")

    @classmethod
    def initialize(cls, num_classes: int, width: int, height: int, channels: int, rng: Rng,
                   activation: str = "relu") -> "MicroNet":
        """He-normal filters, zero biases"""
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        params = {
            "conv1.weight": rng.gaussian(9 * channels * CONV1_FILTERS).reshape(3, 3, channels, CONV1_FILTERS)
            * np.sqrt(2.0 / (9 * channels)),
            "conv1.bias": np.zeros(CONV1_FILTERS),
            "conv2.weight": rng.gaussian(9 * CONV1_FILTERS * CONV2_FILTERS).reshape(3, 3, CONV1_FILTERS, CONV2_FILTERS)
            * np.sqrt(2.0 / (9 * CONV1_FILTERS)),
            "conv2.bias": np.zeros(CONV2_FILTERS),
            "dense.weight": rng.gaussian(CONV2_FILTERS * num_classes).reshape(CONV2_FILTERS, num_classes)
            * np.sqrt(1.0 / CONV2_FILTERS),
            "dense.bias": np.zeros(num_classes),
        }
        return cls(params=params, shape=(width, height, channels), classes=num_classes, activation=activation)

    @property
    def num_classes(self) -> int:
        return self.classes

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.shape)

    def copy(self, activation: Optional[str] = None) -> "MicroNet":
        return MicroNet(
            params={name: value.copy() for name, value in self.params.items()},
            shape=self.shape,
            classes=self.classes,
            activation=activation or self.activation,
        )

    def _check_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        width, height, channels = self.shape
        if xs.ndim != 4 or xs.shape[1:] != (height, width, channels):
            got = (xs.shape[2], xs.shape[1], xs.shape[3]) if xs.ndim == 4 else tuple(xs.shape)
            raise ShapeMismatchError(got, self.shape, "input batch and model")
        return xs

    def _activation_record(self, name: str, x: np.ndarray) -> LayerRecord:
        if self.activation == "identity":
            return LayerRecord("identity", name, x, x, vjp=lambda g: g)
        return LayerRecord("relu", name, x, np.maximum(x, 0.0))

    def layer_trace(self, xs: np.ndarray) -> LayerTrace:
        xs = self._check_batch(xs)
        p = self.params
        trace: LayerTrace = []

        w1, w2, wd = p["conv1.weight"], p["conv2.weight"], p["dense.weight"]
        h = conv_forward(xs, w1, p["conv1.bias"])
        trace.append(LayerRecord("conv", "conv1", xs, h, vjp=lambda g: conv_input_vjp(g, w1)))

        record = self._activation_record("relu1", h)
        trace.append(record)

        pool_in = record.outputs
        h = avgpool_forward(pool_in)
        trace.append(LayerRecord("avgpool", "pool1", pool_in, h,
                                 vjp=lambda g, s=pool_in.shape: avgpool_vjp(g, s)))

        conv2_in = h
        h = conv_forward(conv2_in, w2, p["conv2.bias"])
        trace.append(LayerRecord("conv", "conv2", conv2_in, h, vjp=lambda g: conv_input_vjp(g, w2)))

        record = self._activation_record("relu2", h)
        trace.append(record)

        gap_in = record.outputs
        h = gap_forward(gap_in)
        trace.append(LayerRecord("gap", "gap", gap_in, h, vjp=lambda g, s=gap_in.shape: gap_vjp(g, s)))

        dense_in = h
        logits = dense_in @ wd + p["dense.bias"]
        trace.append(LayerRecord("dense", "dense", dense_in, logits, vjp=lambda g: g @ wd.T))
        return trace

    def logits_batch(self, xs: np.ndarray) -> np.ndarray:
        return self.layer_trace(xs)[-1].outputs

    def backward(self, trace: LayerTrace, grad_logits: np.ndarray,
                 want_params: bool = False) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Reverse pass over a trace; returns (input gradient, parameter gradients)"""
        grads: Dict[str, np.ndarray] = {}
        g = grad_logits
        for record in reversed(trace):
            if want_params:
                if record.kind == "dense":
                    grads["dense.weight"] = record.inputs.T @ g
                    grads["dense.bias"] = g.sum(axis=0)
                elif record.kind == "conv":
                    weight_shape = self.params[f"{record.name}.weight"].shape
                    grads[f"{record.name}.weight"], grads[f"{record.name}.bias"] = conv_param_grads(
                        record.inputs, g, weight_shape
                    )
            if record.kind == "relu":
                g = g * (record.inputs > 0.0)
            else:
                g = record.vjp(g)
        return g, grads

    def input_gradient_batch(self, xs: np.ndarray, class_index: int) -> np.ndarray:
        self.check_class(class_index)
        trace = self.layer_trace(xs)
        seed = np.zeros((trace[-1].outputs.shape[0], self.classes))
        seed[:, class_index] = 1.0
        grad, _ = self.backward(trace, seed)
        return grad

    def forward(self, x: ImageTensor) -> ForwardResult:
        self.check_input(x)
        trace = self.layer_trace(x.data[None])
        logits = trace[-1].outputs[0].copy()
        return ForwardResult(logits=logits, probs=ClassProbs(softmax(logits)), trace=trace)


def forward(net: MicroNet, x: ImageTensor) -> ForwardResult:
    return net.forward(x)


def input_gradient(net: ModelBackend, x: ImageTensor, class_index: int) -> AttributionMap:
    return net.input_gradient(x, class_index)


class LinearBackend(ModelBackend):
    """Affine classifier logits = W·vec(x) + b over the flat layout; analytic oracle"""

    def __init__(self, weight: np.ndarray, bias: Optional[np.ndarray] = None,
                 shape: Optional[Tuple[int, int, int]] = None):
        weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
        self.weight = weight
        self.bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        self.shape = tuple(shape) if shape is not None else (weight.shape[1], 1, 1)
        width, height, channels = self.shape
        if width * height * channels != weight.shape[1]:
            raise ValueError(
                f"weight has {weight.shape[1]} columns, shape {self.shape} needs {width * height * channels}"
            )

    @property
    def num_classes(self) -> int:
        return int(self.weight.shape[0])

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return self.shape

    def _flatten(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return xs.reshape(xs.shape[0], -1)

    def logits_batch(self, xs: np.ndarray) -> np.ndarray:
        return self._flatten(xs) @ self.weight.T + self.bias

    def input_gradient_batch(self, xs: np.ndarray, class_index: int) -> np.ndarray:
        self.check_class(class_index)
        xs = np.asarray(xs, dtype=np.float64)
        return np.broadcast_to(self.weight[class_index].reshape(xs.shape[1:]), xs.shape).copy()

    def layer_trace(self, xs: np.ndarray) -> LayerTrace:
        xs = np.asarray(xs, dtype=np.float64)
        flat = self._flatten(xs)
        image_shape = xs.shape[1:]
        weight = self.weight
        return [LayerRecord(
            "dense", "linear", flat, flat @ weight.T + self.bias,
            vjp=lambda g: (g @ weight).reshape((g.shape[0],) + image_shape),
        )]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingLog:
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].accuracy if self.epochs else 0.0

    @property
    def losses(self) -> List[float]:
        return [stats.loss for stats in self.epochs]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits"""
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def evaluate(net: ModelBackend, dataset: LabeledDataset, batch: int = 256) -> Tuple[float, float]:
    """(mean loss, accuracy) over a dataset"""
    images, labels = dataset.stack(), np.asarray(dataset.labels)
    total_loss, correct = 0.0, 0
    for start in range(0, len(labels), batch):
        logits = net.logits_batch(images[start:start + batch])
        loss, _ = cross_entropy(logits, labels[start:start + batch])
        total_loss += loss * len(logits)
        correct += int((logits.argmax(axis=1) == labels[start:start + batch]).sum())
    return total_loss / len(labels), correct / len(labels)


def train(net: MicroNet, dataset: LabeledDataset, epochs: int = 40, lr: float = 0.05, batch: int = 32,
          rng: Optional[Rng] = None, momentum: float = 0.9) -> Tuple[MicroNet, TrainingLog]:
    """Minibatch SGD (with momentum) on cross-entropy; returns a trained copy and the epoch log"""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    labels = np.asarray(dataset.labels)
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise ClassIndexError(f"dataset labels must lie in [0, {net.num_classes})")
    if dataset.image_shape != net.input_shape:
        raise ShapeMismatchError(dataset.image_shape, net.input_shape, "dataset and model")

    rng = rng or Rng(0)
    trained = net.copy()
    images = dataset.stack()
    velocity = {name: np.zeros_like(value) for name, value in trained.params.items()}
    log = TrainingLog()

    logger.info(f"🏋️ Training MicroNet: {len(labels)} images, {epochs} epochs, lr={lr}, batch={batch}")
    for epoch in tqdm(range(epochs), desc="train", disable=None):
        order = rng.child("epoch", epoch).permutation(len(labels))
        for start in range(0, len(order), batch):
            rows = order[start:start + batch]
            trace = trained.layer_trace(images[rows])
            loss, grad_logits = cross_entropy(trace[-1].outputs, labels[rows])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch starting at {start}; try a smaller learning rate"
                )
            _, grads = trained.backward(trace, grad_logits, want_params=True)
            for name in PARAM_ORDER:
                velocity[name] = momentum * velocity[name] - lr * grads[name]
                trained.params[name] = trained.params[name] + velocity[name]

        epoch_loss, accuracy = evaluate(trained, dataset)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"loss became {epoch_loss} after epoch {epoch}")
        log.epochs.append(EpochStats(epoch=epoch, loss=epoch_loss, accuracy=accuracy))
        logger.debug(f"📊 epoch {epoch}: loss={epoch_loss:.4f} accuracy={accuracy:.3f}")

    logger.info(f"✅ Training finished, train accuracy {log.final_accuracy:.3f}")
    return trained, log


def weights_to_bytes(net: MicroNet) -> bytes:
    buffer = io.BytesIO()
    width, height, channels = net.input_shape
    write_header(buffer, WEIGHTS_MAGIC, WEIGHTS_VERSION, (net.num_classes, width, height, channels))
    for name in PARAM_ORDER:
        value = np.ascontiguousarray(net.params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buffer.write(struct.pack("<I", len(encoded)))
        buffer.write(encoded)
        buffer.write(struct.pack("<I", value.ndim))
        buffer.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buffer.write(value.tobytes())
    return buffer.getvalue()


def weights_from_bytes(payload: bytes, source: str = "<bytes>") -> MicroNet:
    reader = BinaryReader(payload, source)
    num_classes, width, height, channels = read_header(reader, WEIGHTS_MAGIC, WEIGHTS_VERSION, 4)
    shapes = param_shapes(num_classes, channels)
    params = {}
    for expected in PARAM_ORDER:
        raw = reader.read_bytes(reader.read_u32(), "parameter name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: parameter name {raw!r} is not UTF-8") from exc
        if name != expected:
            raise FormatError(f"{source}: expected parameter {expected!r}, found {name!r}")
        rank = reader.read_u32()
        dims = tuple(int(d) for d in reader.read_u32s(rank, f"{name} dims"))
        if dims != shapes[name]:
            raise FormatError(f"{source}: {name} has shape {dims}, header (J={num_classes}, C={channels}) "
                              f"needs {shapes[name]}")
        params[name] = reader.read_f64(int(np.prod(dims)), name).reshape(dims)
    return MicroNet(params=params, shape=(width, height, channels), classes=num_classes)


def save_weights(net: MicroNet, path: PathLike) -> Path:
    target = atomic_write_bytes(path, weights_to_bytes(net))
    logger.info(f"💾 Saved MicroNet weights to {target}")
    return target


def load_weights(path: PathLike) -> MicroNet:
    net = weights_from_bytes(Path(path).read_bytes(), str(path))
    logger.info(f"📂 Loaded MicroNet weights from {path} (J={net.num_classes}, shape={net.input_shape})")
    return net
