"""Wafer-map data model, canonical text format, splitting and synthesis."""
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import (
    BadDimensions,
    DatasetIOError,
    FormatError,
    InvalidWafer,
    UnlabeledInput,
)
from utils import derive_seed

logger = logging.getLogger(__name__)

FORMAT_TAG = "waferssl-v1"

BACKGROUND, PASS, FAIL = 0, 1, 2
NUM_STATES = 3

MIN_SYNTHETIC_DIM = 16
MIN_ENCODE_DIM = 8


class ClassLabel(IntEnum):
    CENTER = 0
    DONUT = 1
    EDGE_LOC = 2
    EDGE_RING = 3
    LOC = 4
    NEAR_FULL = 5
    RANDOM = 6
    SCRATCH = 7
    NONE = 8

    @property
    def display_name(self) -> str:
        return CLASS_NAMES[self.value]

    @classmethod
    def from_name(cls, name: str) -> "ClassLabel":
        """Look up a label by its display name ("Edge-Loc") or member name ("EDGE_LOC")."""
        if name in CLASS_NAMES:
            return cls(CLASS_NAMES.index(name))
        try:
            return cls[name.upper().replace("-", "_")]
        except KeyError:
            raise ValueError(f"Unknown class name: {name!r}") from None


CLASS_NAMES = (
    "Center",
    "Donut",
    "Edge-Loc",
    "Edge-Ring",
    "Loc",
    "Near-full",
    "Random",
    "Scratch",
    "None",
)
NUM_CLASSES = len(CLASS_NAMES)


@dataclass(frozen=True, eq=False)
class WaferMap:
    """A single wafer: a height × width grid of die states plus an optional label."""

    height: int
    width: int
    grid: np.ndarray
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidWafer(f"dimensions must be positive, got {self.height}x{self.width}")
        grid = np.asarray(self.grid)
        if grid.size != self.height * self.width:
            raise InvalidWafer(
                f"grid has {grid.size} dies, expected {self.height * self.width}"
            )
        if grid.size and not np.array_equal(grid, np.rint(grid)):
            raise InvalidWafer("die states must be integers")
        if grid.size and (grid.min() < BACKGROUND or grid.max() > FAIL):
            raise InvalidWafer("die states must be in {0, 1, 2}")
        grid = grid.reshape(self.height, self.width).astype(np.uint8)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        if self.label is not None:
            if not 0 <= int(self.label) < NUM_CLASSES:
                raise InvalidWafer(f"label {self.label} outside 0..{NUM_CLASSES - 1}")
            object.__setattr__(self, "label", ClassLabel(int(self.label)))

    def __eq__(self, other):
        if not isinstance(other, WaferMap):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and self.label == other.label
            and np.array_equal(self.grid, other.grid)
        )

    def __hash__(self):
        return hash((self.height, self.width, self.label, self.grid.tobytes()))

    def with_label(self, label: Optional[ClassLabel]) -> "WaferMap":
        return WaferMap(self.height, self.width, self.grid.copy(), label)

    def with_grid(self, grid: np.ndarray) -> "WaferMap":
        return WaferMap(self.height, self.width, grid, self.label)

    def grid_digits(self) -> str:
        return "".join("012"[v] for v in self.grid.ravel())


@dataclass
class Dataset:
    """Ordered wafer records sharing one grid size."""

    records: List[WaferMap] = field(default_factory=list)
    height: int = 0
    width: int = 0

    def __post_init__(self):
        self.records = list(self.records)
        if self.records:
            first = self.records[0]
            if not self.height and not self.width:
                self.height, self.width = first.height, first.width
            for i, rec in enumerate(self.records):
                if (rec.height, rec.width) != (self.height, self.width):
                    raise BadDimensions(
                        f"record {i} is {rec.height}x{rec.width}, "
                        f"dataset is {self.height}x{self.width}"
                    )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    @property
    def counts_per_class(self) -> Dict[ClassLabel, int]:
        counts = {label: 0 for label in ClassLabel}
        for rec in self.records:
            if rec.label is not None:
                counts[rec.label] += 1
        return counts

    @property
    def unlabeled_count(self) -> int:
        return sum(1 for rec in self.records if rec.label is None)

    @property
    def labels(self) -> List[Optional[ClassLabel]]:
        return [rec.label for rec in self.records]

    def is_fully_labeled(self) -> bool:
        return all(rec.label is not None for rec in self.records)

    def by_class(self) -> Dict[ClassLabel, List[WaferMap]]:
        groups = {label: [] for label in ClassLabel}
        for rec in self.records:
            if rec.label is None:
                raise UnlabeledInput("dataset contains unlabeled records")
            groups[rec.label].append(rec)
        return groups


def load_dataset(path) -> Dataset:
    """Read a canonical `waferssl-v1` file, validating every record."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetIOError(f"cannot read dataset {path}: {e}") from e

    lines = text.splitlines()
    if not lines:
        raise FormatError("missing header", 1)
    header = lines[0].split()
    if len(header) != 3 or header[0] != FORMAT_TAG:
        raise FormatError(f"expected header '{FORMAT_TAG} <height> <width>'", 1)
    try:
        height, width = int(header[1]), int(header[2])
    except ValueError:
        raise FormatError("header dimensions must be integers", 1) from None
    if height < 0 or width < 0:
        raise FormatError("header dimensions must be nonnegative", 1)

    records = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        records.append(_parse_record(line, height, width, line_number))

    if records and (height < 1 or width < 1):
        raise FormatError("records present but header dimensions are not positive", 1)
    dataset = Dataset(records, height, width)
    logger.info(f"Loaded {len(dataset)} records ({height}x{width}) from {path}")
    return dataset


def _parse_record(line: str, height: int, width: int, line_number: int) -> WaferMap:
    parts = line.split()
    if len(parts) != 2:
        raise FormatError("expected '<label-or-dash> <grid-digits>'", line_number)
    label_text, digits = parts
    if label_text == "-":
        label = None
    elif label_text.isdigit() and int(label_text) < NUM_CLASSES:
        label = ClassLabel(int(label_text))
    else:
        raise FormatError(f"label {label_text!r} outside 0..{NUM_CLASSES - 1}", line_number)
    if len(digits) != height * width:
        raise FormatError(
            f"grid has {len(digits)} digits, expected {height * width}", line_number
        )
    bad = set(digits) - set("012")
    if bad:
        raise FormatError(f"die state {sorted(bad)[0]!r} outside {{0,1,2}}", line_number)
    grid = np.frombuffer(digits.encode("ascii"), dtype=np.uint8) - ord("0")
    return WaferMap(height, width, grid.reshape(height, width), label)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the canonical line-oriented format, one record per line."""
    path = Path(path)
    lines = [f"{FORMAT_TAG} {dataset.height} {dataset.width}"]
    for rec in dataset.records:
        label = "-" if rec.label is None else str(int(rec.label))
        lines.append(f"{label} {rec.grid_digits()}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as e:
        raise DatasetIOError(f"cannot write dataset {path}: {e}") from e
    logger.info(f"Saved {len(dataset)} records to {path}")


def split_labeled_fraction(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Stratified labeled/unlabeled split.

    Per class, ceil(fraction × count) records keep their label; the rest are
    copied into the unlabeled set with the label removed. Both outputs keep
    the input order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not dataset.is_fully_labeled():
        raise UnlabeledInput("split_labeled_fraction requires every record to be labeled")

    rng = np.random.default_rng(seed)
    keep = np.zeros(len(dataset), dtype=bool)
    labels = np.array([int(rec.label) for rec in dataset.records], dtype=np.int64)
    for label in ClassLabel:
        members = np.flatnonzero(labels == int(label))
        if members.size == 0:
            continue
        n_keep = math.ceil(round(fraction * members.size, 9))
        chosen = rng.permutation(members.size)[:n_keep]
        keep[members[chosen]] = True

    labeled = [rec for rec, k in zip(dataset.records, keep) if k]
    unlabeled = [rec.with_label(None) for rec, k in zip(dataset.records, keep) if not k]
    logger.info(f"Split {len(dataset)} records: {len(labeled)} labeled, {len(unlabeled)} unlabeled")
    return (
        Dataset(labeled, dataset.height, dataset.width),
        Dataset(unlabeled, dataset.height, dataset.width),
    )


def disc_geometry(height: int, width: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """Return (distance from wafer centre per die, in-disc mask, disc radius)."""
    rows = np.arange(height)[:, None] - (height - 1) / 2.0
    cols = np.arange(width)[None, :] - (width - 1) / 2.0
    distance = np.sqrt(rows ** 2 + cols ** 2)
    radius = min(height, width) / 2.0
    return distance, distance < radius, radius


def _blob(height, width, cy, cx, r):
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= r ** 2


def _angle_grid(height, width):
    rows = np.arange(height)[:, None] - (height - 1) / 2.0
    cols = np.arange(width)[None, :] - (width - 1) / 2.0
    return np.arctan2(rows, cols)


def _pattern_mask(label: ClassLabel, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of fail dies for one defect class, before disc clipping and noise."""
    distance, disc, radius = disc_geometry(height, width)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    shape = (height, width)

    if label == ClassLabel.CENTER:
        r0 = radius * rng.uniform(0.2, 0.35)
        oy, ox = rng.uniform(-0.05, 0.05, size=2) * radius
        fill = rng.uniform(0.85, 1.0)
        return _blob(height, width, cy + oy, cx + ox, r0) & (rng.random(shape) < fill)

    if label == ClassLabel.DONUT:
        inner = radius * rng.uniform(0.3, 0.4)
        outer = inner + radius * rng.uniform(0.15, 0.25)
        fill = rng.uniform(0.85, 1.0)
        return (distance >= inner) & (distance <= outer) & (rng.random(shape) < fill)

    if label == ClassLabel.EDGE_LOC:
        centre_angle = rng.uniform(-np.pi, np.pi)
        span = rng.uniform(0.3, 0.7)
        depth = rng.uniform(1.5, 3.0)
        offset = np.angle(np.exp(1j * (_angle_grid(height, width) - centre_angle)))
        return (radius - distance <= depth) & (np.abs(offset) <= span)

    if label == ClassLabel.EDGE_RING:
        depth = rng.uniform(1.0, 2.0)
        return radius - distance <= depth

    if label == ClassLabel.LOC:
        angle = rng.uniform(-np.pi, np.pi)
        rho = radius * rng.uniform(0.3, 0.6)
        r0 = radius * rng.uniform(0.12, 0.22)
        return _blob(height, width, cy + rho * np.sin(angle), cx + rho * np.cos(angle), r0)

    if label == ClassLabel.NEAR_FULL:
        disc_index = np.flatnonzero(disc.ravel())
        n_fail = int(round(rng.uniform(0.85, 0.98) * disc_index.size))
        mask = np.zeros(height * width, dtype=bool)
        mask[rng.choice(disc_index, size=n_fail, replace=False)] = True
        return mask.reshape(shape)

    if label == ClassLabel.RANDOM:
        return rng.random(shape) < rng.uniform(0.12, 0.18)

    if label == ClassLabel.SCRATCH:
        return _scratch_mask(height, width, radius, rng)

    return np.zeros(shape, dtype=bool)


def _scratch_mask(height, width, radius, rng):
    """1-die-wide polyline of 2-4 segments starting inside the inner disc."""
    mask = np.zeros((height, width), dtype=bool)
    start_angle = rng.uniform(-np.pi, np.pi)
    start_rho = radius * rng.uniform(0.0, 0.7)
    y = (height - 1) / 2.0 + start_rho * np.sin(start_angle)
    x = (width - 1) / 2.0 + start_rho * np.cos(start_angle)
    heading = rng.uniform(-np.pi, np.pi)
    for _ in range(rng.integers(2, 5)):
        length = radius * rng.uniform(0.3, 0.6)
        ny, nx = y + length * np.sin(heading), x + length * np.cos(heading)
        steps = max(2, int(np.ceil(length * 2)) + 1)
        ys = np.rint(np.linspace(y, ny, steps)).astype(int)
        xs = np.rint(np.linspace(x, nx, steps)).astype(int)
        ok = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        mask[ys[ok], xs[ok]] = True
        y, x = ny, nx
        heading += rng.uniform(-0.5, 0.5)
    return mask


def generate_synthetic_wafer(label: ClassLabel, height: int, width: int, seed: int,
                             noise_rate: float = 0.0) -> WaferMap:
    """Procedurally draw one labeled wafer of the given defect class."""
    if height < MIN_SYNTHETIC_DIM or width < MIN_SYNTHETIC_DIM:
        raise BadDimensions(
            f"synthetic wafers need at least {MIN_SYNTHETIC_DIM}x{MIN_SYNTHETIC_DIM}, got {height}x{width}"
        )
    if not 0.0 <= noise_rate < 0.5:
        raise ValueError(f"noise_rate must be in [0, 0.5), got {noise_rate}")

    rng = np.random.default_rng(seed)
    _, disc, _ = disc_geometry(height, width)
    grid = np.where(disc, PASS, BACKGROUND).astype(np.uint8)
    grid[_pattern_mask(ClassLabel(label), height, width, rng) & disc] = FAIL
    if noise_rate > 0.0:
        flips = disc & (rng.random((height, width)) < noise_rate)
        grid[flips] = PASS + FAIL - grid[flips]
    return WaferMap(height, width, grid, ClassLabel(label))


def generate_synthetic_dataset(per_class_counts: Mapping[ClassLabel, int], height: int, width: int,
                               seed: int, noise_rate: float = 0.0) -> Dataset:
    """Emit the requested count per class, class-major then index, one derived seed per record."""
    if height < MIN_SYNTHETIC_DIM or width < MIN_SYNTHETIC_DIM:
        raise BadDimensions(
            f"synthetic wafers need at least {MIN_SYNTHETIC_DIM}x{MIN_SYNTHETIC_DIM}, got {height}x{width}"
        )
    records = []
    for label in ClassLabel:
        count = int(per_class_counts.get(label, 0))
        if count < 0:
            raise ValueError(f"negative count for {label.display_name}")
        for index in range(count):
            record_seed = derive_seed(seed, int(label), index)
            records.append(generate_synthetic_wafer(label, height, width, record_seed, noise_rate))
    logger.info(f"Generated {len(records)} synthetic wafers ({height}x{width})")
    return Dataset(records, height, width)


def encode_input(wafer: WaferMap, target_height: int, target_width: int) -> np.ndarray:
    """
    One-hot encode a wafer into a 3 × target_height × target_width float64 array.

    Resizing is nearest-neighbour on die coordinates, so channel c at a pixel
    is 1 exactly when the sampled die has state c.
    """
    if target_height < MIN_ENCODE_DIM or target_width < MIN_ENCODE_DIM:
        raise BadDimensions(
            f"encoded inputs need at least {MIN_ENCODE_DIM}x{MIN_ENCODE_DIM}, "
            f"got {target_height}x{target_width}"
        )
    rows = np.minimum((np.arange(target_height) + 0.5) * wafer.height / target_height,
                      wafer.height - 1).astype(np.int64)
    cols = np.minimum((np.arange(target_width) + 0.5) * wafer.width / target_width,
                      wafer.width - 1).astype(np.int64)
    resized = wafer.grid[np.ix_(rows, cols)]
    return np.eye(NUM_STATES, dtype=np.float64)[resized].transpose(2, 0, 1).copy()


def encode_batch(wafers: Sequence[WaferMap], target_height: int, target_width: int) -> np.ndarray:
    if not wafers:
        return np.zeros((0, NUM_STATES, target_height, target_width), dtype=np.float64)
    return np.stack([encode_input(w, target_height, target_width) for w in wafers])


def decode_one_hot(channels: np.ndarray) -> np.ndarray:
    """Per-die argmax over the state channels; ties resolve to the lower state."""
    return np.argmax(channels, axis=0).astype(np.uint8)


def class_count_table(dataset: Dataset) -> List[Tuple[str, int]]:
    rows = [(label.display_name, count) for label, count in dataset.counts_per_class.items()]
    rows.append(("(unlabeled)", dataset.unlabeled_count))
    return rows
