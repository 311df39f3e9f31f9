"""
Dataset generation and file formats.

- A procedural toy dataset whose classes sit on a hue/shape continuum, so that
  neighbouring classes are confusable and running-up classes are meaningful.
- Binary P6 PPM reading and writing (maxval 255).
- The "XATKD001" container for labelled stacks of W×H×C float64 tensors
  (datasets and attribution dumps).

Container layout (uint32 little-endian integers, float64 little-endian data):

    b"XATKD" + b"001"     magic and format version
    N, J, W, H, C
    N labels
    N·H·W·C values in the documented tensor offset order, image after image
"""

import colorsys
import io
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor_core import AttributionMap, ImageTensor, Rng
from .utils import PathLike, XAttackError, atomic_write_bytes

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"XATKD"
DATASET_VERSION = b"001"
PPM_MAXVAL = 255


class FormatError(XAttackError, ValueError):
    """Malformed file"""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes"""


class VersionMismatchError(FormatError):
    """Known magic but unsupported format version"""


class TruncatedFileError(FormatError):
    """File ended before a field could be read"""

    def __init__(self, source: str, offset: int, needed: int, available: int, what: str):
        self.offset = offset
        self.needed = needed
        self.available = available
        super().__init__(
            f"{source}: truncated while reading {what} at byte offset {offset} "
            f"(needed {needed} bytes, {available} available)"
        )


class MaxvalError(FormatError):
    """PPM maxval other than 255"""


class BinaryReader:
    """Sequential little-endian reader that reports the offset of any truncation"""

    def __init__(self, payload: bytes, source: str = "<bytes>"):
        self.payload = payload
        self.source = source
        self.offset = 0

    def read_bytes(self, count: int, what: str) -> bytes:
        available = len(self.payload) - self.offset
        if count > available:
            raise TruncatedFileError(self.source, self.offset, count, available, what)
        chunk = self.payload[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def read_u32(self, what: str = "integer") -> int:
        return struct.unpack("<I", self.read_bytes(4, what))[0]

    def read_u32s(self, count: int, what: str = "integers") -> Tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.read_bytes(4 * count, what))

    def read_f64(self, count: int, what: str = "values") -> np.ndarray:
        return np.frombuffer(self.read_bytes(8 * count, what), dtype="<f8").astype(np.float64)

    def at_end(self) -> bool:
        return self.offset == len(self.payload)


def write_header(stream: BinaryIO, magic: bytes, version: bytes, fields: Sequence[int]) -> None:
    stream.write(magic + version)
    stream.write(struct.pack(f"<{len(fields)}I", *fields))


def read_header(reader: BinaryReader, magic: bytes, version: bytes, count: int) -> Tuple[int, ...]:
    found = reader.read_bytes(len(magic), "magic")
    if found != magic:
        raise BadMagicError(f"{reader.source}: bad magic {found!r}, expected {magic!r}")
    found_version = reader.read_bytes(len(version), "format version")
    if found_version != version:
        raise VersionMismatchError(
            f"{reader.source}: format version {found_version!r} not supported (expected {version!r})"
        )
    return reader.read_u32s(count, "header")


@dataclass
class LabeledDataset:
    """Images of uniform shape with class labels in [0, J)"""
    images: List[ImageTensor]
    labels: List[int]
    num_classes: int
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        self.images = list(self.images)
        self.labels = [int(label) for label in self.labels]
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if any(not 0 <= label < self.num_classes for label in self.labels):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        shapes = {image.shape for image in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images have mixed shapes {sorted(shapes)}")
        self._stacked: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.images)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.labels == other.labels
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.images, other.images))
        )

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        if not self.images:
            raise ValueError("empty dataset has no image shape")
        return self.images[0].shape

    def stack(self) -> np.ndarray:
        """(N, H, W, C) array of all images"""
        if self._stacked is None:
            self._stacked = np.stack([image.data for image in self.images])
            self._stacked.setflags(write=False)
        return self._stacked

    def indices_of(self, label: int) -> List[int]:
        return [index for index, value in enumerate(self.labels) if value == label]

    def subset(self, indices: Sequence[int], provenance: str = "") -> "LabeledDataset":
        return LabeledDataset(
            images=[self.images[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            num_classes=self.num_classes,
            provenance=provenance or self.provenance,
        )

    def class_histogram(self) -> Dict[int, int]:
        return {label: self.labels.count(label) for label in range(self.num_classes)}


def _class_colour(position: float, hue_jitter: float, value: float) -> np.ndarray:
    hue = (0.75 * position + hue_jitter) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.8, value))


def _render_toy_image(position: float, side: int, rng: Rng) -> np.ndarray:
    """One image: a superellipse blob whose hue and exponent follow the class position"""
    cx, cy = side / 2.0 + rng.uniform(2, -0.12 * side, 0.12 * side)
    radius = side * rng.uniform(1, 0.28, 0.38)[0]
    exponent = 1.0 + 3.0 * position  # diamond → circle → rounded square
    colour = _class_colour(position, rng.uniform(1, -0.02, 0.02)[0], rng.uniform(1, 0.75, 0.95)[0])
    background = rng.uniform(1, 0.1, 0.35)[0]

    ys, xs = np.mgrid[0:side, 0:side] + 0.5
    inside = (np.abs(xs - cx) / radius) ** exponent + (np.abs(ys - cy) / radius) ** exponent <= 1.0
    image = np.where(inside[..., None], colour[None, None, :], background)
    image = image + 0.06 * rng.gaussian(side * side * 3).reshape(side, side, 3)
    return np.clip(image, 0.0, 1.0)


def generate_toy_dataset(classes: int, per_class: int, side: int = 16, seed: int = 0) -> LabeledDataset:
    """Deterministic toy dataset of classes × per_class images, labels interleaved"""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise ValueError(f"need at least 1 image per class, got {per_class}")
    if side < 8:
        raise ValueError(f"image side must be >= 8, got {side}")

    rng = Rng(seed).child("toy_dataset")
    images, labels = [], []
    for index in range(classes * per_class):
        label = index % classes
        position = label / (classes - 1)
        images.append(ImageTensor(_render_toy_image(position, side, rng.child("image", index))))
        labels.append(label)

    logger.info(f"🎨 Generated toy dataset: {classes} classes × {per_class} images, {side}×{side}×3, seed {seed}")
    return LabeledDataset(images, labels, classes, provenance=f"generator:seed={seed}")


def split_holdout(dataset: LabeledDataset, fraction: float, rng: Rng) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified split into (train, held-out); held-out takes round(fraction·n) per class"""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"held-out fraction must lie in (0, 1), got {fraction}")
    train_idx, holdout_idx = [], []
    for label in range(dataset.num_classes):
        members = dataset.indices_of(label)
        order = rng.child("split", label).permutation(len(members))
        cut = int(round(fraction * len(members)))
        holdout_idx.extend(members[i] for i in order[:cut])
        train_idx.extend(members[i] for i in order[cut:])
    return (
        dataset.subset(sorted(train_idx), f"{dataset.provenance}:train"),
        dataset.subset(sorted(holdout_idx), f"{dataset.provenance}:holdout"),
    )


_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def ppm_decode(payload: bytes, source: str = "<bytes>") -> ImageTensor:
    if payload[:2] != b"P6":
        raise BadMagicError(f"{source}: not a binary PPM (magic {payload[:2]!r}, expected b'P6')")

    offset = 2
    header = []
    for what in ("width", "height", "maxval"):
        match = _PPM_TOKEN.match(payload, offset)
        if match is None:
            raise TruncatedFileError(source, offset, 1, len(payload) - offset, f"PPM {what}")
        try:
            header.append(int(match.group(1)))
        except ValueError:
            raise FormatError(f"{source}: PPM {what} is not an integer: {match.group(1)!r}") from None
        offset = match.end()

    width, height, maxval = header
    if maxval != PPM_MAXVAL:
        raise MaxvalError(f"{source}: PPM maxval {maxval} not supported (expected {PPM_MAXVAL})")
    if width < 1 or height < 1:
        raise FormatError(f"{source}: PPM dimensions must be positive, got {width}×{height}")

    reader = BinaryReader(payload, source)
    reader.offset = offset
    separator = reader.read_bytes(1, "PPM header terminator")
    if not separator.isspace():
        raise FormatError(f"{source}: expected whitespace after maxval, found {separator!r}")
    raster = reader.read_bytes(width * height * 3, "PPM raster")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3) / 255.0
    return ImageTensor(data)


def ppm_encode(image: ImageTensor) -> bytes:
    if image.channels != 3:
        raise ValueError(f"PPM stores 3 channels, image has {image.channels}")
    raster = np.rint(image.data * 255.0).astype(np.uint8)
    return f"P6\n{image.width} {image.height}\n{PPM_MAXVAL}\n".encode("ascii") + raster.tobytes()


def ppm_read(path: PathLike) -> ImageTensor:
    return ppm_decode(Path(path).read_bytes(), str(path))


def ppm_write(path: PathLike, image: ImageTensor) -> Path:
    return atomic_write_bytes(path, ppm_encode(image))


def quantize_8bit(image: ImageTensor) -> ImageTensor:
    """Snap an image to the values a PPM roundtrip produces"""
    return ImageTensor(np.rint(image.data * 255.0) / 255.0)


def container_to_bytes(arrays: np.ndarray, labels: Sequence[int], num_classes: int) -> bytes:
    arrays = np.asarray(arrays, dtype=np.float64)
    if arrays.ndim != 4:
        raise ValueError(f"expected an (N, H, W, C) stack, got shape {arrays.shape}")
    count, height, width, channels = arrays.shape
    if len(labels) != count:
        raise ValueError(f"{count} tensors but {len(labels)} labels")
    buffer = io.BytesIO()
    write_header(buffer, DATASET_MAGIC, DATASET_VERSION, (count, num_classes, width, height, channels))
    buffer.write(struct.pack(f"<{count}I", *labels))
    buffer.write(np.ascontiguousarray(arrays, dtype="<f8").tobytes())
    return buffer.getvalue()


def container_from_bytes(payload: bytes, source: str = "<bytes>") -> Tuple[np.ndarray, List[int], int]:
    reader = BinaryReader(payload, source)
    count, num_classes, width, height, channels = read_header(reader, DATASET_MAGIC, DATASET_VERSION, 5)
    labels = list(reader.read_u32s(count, "labels"))
    values = reader.read_f64(count * height * width * channels, "tensor payload")
    return values.reshape(count, height, width, channels), labels, num_classes


def dataset_save(dataset: LabeledDataset, path: PathLike) -> Path:
    payload = container_to_bytes(
        dataset.stack() if len(dataset) else np.zeros((0, 1, 1, 1)), dataset.labels, dataset.num_classes
    )
    target = atomic_write_bytes(path, payload)
    logger.info(f"💾 Saved dataset ({len(dataset)} images) to {target}")
    return target


def dataset_load(path: PathLike) -> LabeledDataset:
    arrays, labels, num_classes = container_from_bytes(Path(path).read_bytes(), str(path))
    images = [ImageTensor(array) for array in arrays]
    logger.info(f"📂 Loaded dataset from {path}: {len(images)} images, {num_classes} classes")
    return LabeledDataset(images, labels, num_classes, provenance=f"file:{path}")


def save_attribution_maps(maps: Sequence[AttributionMap], labels: Sequence[int], num_classes: int,
                          path: PathLike) -> Path:
    """Attribution dumps reuse the dataset container; labels record the explained class"""
    return atomic_write_bytes(path, container_to_bytes(np.stack([m.data for m in maps]), labels, num_classes))


def load_attribution_maps(path: PathLike) -> Tuple[List[AttributionMap], List[int], int]:
    arrays, labels, num_classes = container_from_bytes(Path(path).read_bytes(), str(path))
    return [AttributionMap(array) for array in arrays], labels, num_classes


def holdout_path(path: PathLike) -> Path:
    """data.xatkd → data.holdout.xatkd"""
    target = Path(path)
    return target.with_name(f"{target.stem}.holdout{target.suffix or '.xatkd'}")
