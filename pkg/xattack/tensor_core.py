"""
Tensor Core Module.

Dense 3-D image and attribution tensors plus the seeded random generator
shared by every other module.

Layout: a tensor of width W, height H and C channels is stored as a read-only
float64 NumPy array of shape (H, W, C). In C order the flat offset of the
element at column w, row h, channel c is therefore

    offset = c + C * (w + W * h)

(channel fastest, then column, then row). Every module addresses tensors
through `flat_index` / `unflatten_index` or through this array layout, and all
file formats store payloads in this order.

Random streams: `Rng` wraps NumPy's PCG64 bit generator. A child stream for
label L of a generator with seed S and path P is seeded from the BLAKE2b
digest of "S/P/L", so the same (seed, label path) always yields the same
bit-identical sequence on every platform, and no two workers ever share a
stream. Gaussian samples use NumPy's ziggurat transform
(`Generator.standard_normal`).
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .utils import XAttackError

logger = logging.getLogger(__name__)

Shape = Tuple[int, int, int]


class ShapeMismatchError(XAttackError, ValueError):
    """Two tensors that must agree in shape do not"""

    def __init__(self, left: Shape, right: Shape, context: str = "operands"):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(
            f"shape mismatch between {context}: (W,H,C)={self.left} vs (W,H,C)={self.right}"
        )


def _as_frozen(data: np.ndarray) -> np.ndarray:
    array = np.array(data, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class _Tensor3:
    """Common shape handling for ImageTensor and AttributionMap"""

    data: np.ndarray

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> Shape:
        """(W, H, C)"""
        return (self.width, self.height, self.channels)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Read-only flat view in documented offset order"""
        return self.data.reshape(-1)

    def at(self, w: int, h: int, c: int) -> float:
        return float(self.data[h, w, c])

    def equals(self, other: "_Tensor3") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


class ImageTensor(_Tensor3):
    """W×H×C image with every intensity in [0, 1]"""

    def __init__(self, data: np.ndarray):
        array = _as_frozen(data)
        if array.ndim != 3 or min(array.shape) < 1:
            raise ValueError(f"image data must be a nonempty (H, W, C) array, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("image contains non-finite values")
        if array.min() < 0.0 or array.max() > 1.0:
            raise ValueError(
                f"image values must lie in [0, 1], got range [{array.min()}, {array.max()}]"
            )
        object.__setattr__(self, "data", array)

    @classmethod
    def zeros(cls, width: int, height: int, channels: int) -> "ImageTensor":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def from_flat(cls, values, width: int, height: int, channels: int) -> "ImageTensor":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height * channels:
            raise ValueError(f"expected {width * height * channels} values, got {values.size}")
        return cls(values.reshape(height, width, channels))

    def __repr__(self) -> str:
        return f"ImageTensor(W={self.width}, H={self.height}, C={self.channels})"


class AttributionMap(_Tensor3):
    """Signed, finite attribution scores with the shape of the image they explain"""

    def __init__(self, data: np.ndarray):
        array = _as_frozen(data)
        if array.ndim != 3 or min(array.shape) < 1:
            raise ValueError(f"attribution data must be a nonempty (H, W, C) array, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("attribution map contains non-finite values")
        object.__setattr__(self, "data", array)

    @classmethod
    def from_flat(cls, values, width: int, height: int, channels: int) -> "AttributionMap":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height * channels:
            raise ValueError(f"expected {width * height * channels} values, got {values.size}")
        return cls(values.reshape(height, width, channels))

    def __repr__(self) -> str:
        return f"AttributionMap(W={self.width}, H={self.height}, C={self.channels})"


def flat_index(w: int, h: int, c: int, shape: Shape) -> int:
    """(w, h, c) → c + C·(w + W·h)"""
    width, height, channels = shape
    if not (0 <= w < width and 0 <= h < height and 0 <= c < channels):
        raise IndexError(f"coordinate {(w, h, c)} outside (W,H,C)={shape}")
    return c + channels * (w + width * h)


def unflatten_index(offset: int, shape: Shape) -> Tuple[int, int, int]:
    """Inverse of flat_index"""
    width, height, channels = shape
    if not 0 <= offset < width * height * channels:
        raise IndexError(f"offset {offset} outside tensor of (W,H,C)={shape}")
    c = offset % channels
    rest = offset // channels
    return rest % width, rest // width, c


def check_same_shape(a: _Tensor3, b: _Tensor3, context: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape, context)


KINDS = ("abs_diff_sum", "abs_sum", "elementwise_blend")


def tensor_map_reduce(a: _Tensor3, b: Optional[_Tensor3] = None, kind: str = "abs_diff_sum", *,
                      alpha: float = 0.0, mask: Optional[np.ndarray] = None):
    """
    Shared elementwise kernels.

    - abs_diff_sum: Σ|a − b| over all W·H·C entries
    - abs_sum: Σ|a|
    - elementwise_blend: clip((1 − alpha)·a + alpha·b, 0, 1) where mask is set,
      a unchanged elsewhere; returns an ImageTensor
    """
    if kind == "abs_sum":
        return float(np.abs(a.data).sum())

    if kind not in KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")
    if b is None:
        raise ValueError(f"kernel {kind!r} needs two operands")
    check_same_shape(a, b)

    if kind == "abs_diff_sum":
        return float(np.abs(a.data - b.data).sum())

    if mask is None:
        mask = np.ones(a.data.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(a.data.shape)
    blended = np.clip((1.0 - alpha) * a.data + alpha * b.data, 0.0, 1.0)
    return ImageTensor(np.where(mask, blended, a.data))


def abs_diff_sum(a: _Tensor3, b: _Tensor3) -> float:
    return tensor_map_reduce(a, b, "abs_diff_sum")


def abs_sum(a: _Tensor3) -> float:
    return tensor_map_reduce(a, kind="abs_sum")


class Rng:
    """Seedable PCG64 stream with hash-derived child streams (single owner)"""

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path
        digest = hashlib.blake2b(f"{self.seed}/{path}".encode("utf-8"), digest_size=16).digest()
        entropy = int.from_bytes(digest, "little")
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, *labels) -> "Rng":
        """Independent substream for the label path (labels are stringified)"""
        suffix = "/".join(str(label) for label in labels)
        path = f"{self.path}/{suffix}" if self.path else suffix
        return Rng(self.seed, path)

    def gaussian(self, n: int) -> np.ndarray:
        """n standard-normal samples (ziggurat transform)"""
        if n < 0:
            raise ValueError(f"sample count must be non-negative, got {n}")
        return self._generator.standard_normal(n)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, n)

    def integers(self, low: int, high: int, n: Optional[int] = None):
        return self._generator.integers(low, high, size=n)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, population: int, k: int) -> np.ndarray:
        """k distinct integers from range(population), uniformly"""
        if not 0 <= k <= population:
            raise ValueError(f"cannot draw {k} distinct values from {population}")
        return self._generator.choice(population, size=k, replace=False)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path!r})"


def rng_gaussian(rng: Rng, n: int) -> np.ndarray:
    return rng.gaussian(n)
