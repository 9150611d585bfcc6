"""Synthetic gaze-like dataset: rendering, on-disk format and loaders.

Every sample is a (face, left eye, right eye) triple of RGB patches. The face
patch shows a face disc displaced by the head offset ``h``; each eye patch shows
an iris displaced by ``P * (A_s @ (0.15 * (u - 0.3 * h)) + b_s)``, where ``u`` is the
gaze point mapped to [-1, 1] per axis and ``(A_s, b_s)`` is the subject's affine
nuisance (a small rotation and scale plus a shift, drawn once per subject). Gaze
is therefore recoverable only by combining the eye and face patches, and a model
that learns each training subject's mapping does not transfer exactly to new subjects.
Subjects also differ in colors and blob radii.

Directory layout::

    header          JSON: format, version, shapes, record size, the SynthConfig
    data.bin        fixed-width little-endian records (3 uint8 patches + 2 float64 gt)
    index.tsv       record, offset, split, subject, sequence
    sequences.tsv   sequence_id, gt_x_cm, gt_y_cm, subject, frame_record_ids
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gazetat.errors import DatasetFormatError
from gazetat.ordinal import GazeCodec
from gazetat.tensor import get_default_dtype

logger = logging.getLogger(__name__)

FORMAT = "gazetat-synth"
VERSION = 1
CHANNELS = 3
SPLITS = ("train", "val", "test")
INDEX_COLUMNS = ["record", "offset", "split", "subject", "sequence"]

IRIS_GAIN = 0.15
HEAD_COUPLING = 0.3
HEAD_SHIFT = 0.15
SKIN_FLOOR = 0.45


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_subjects: int = Field(default=24, ge=3)
    samples_per_subject: int = Field(default=250, ge=1)
    val_subjects: int = Field(default=3, ge=1)
    test_subjects: int = Field(default=3, ge=1)
    width_cm: float = Field(default=10.0, gt=0)
    height_cm: float = Field(default=14.0, gt=0)
    patch_size: int = Field(default=64, ge=8)
    iris_radius: float = Field(default=0.13, gt=0, lt=0.25)
    iris_intensity: float = Field(default=0.2, ge=0, le=0.4)
    noise_std: float = Field(default=2.0, ge=0)
    jitter_px: int = Field(default=1, ge=0)
    sequence_points: int = Field(default=8, ge=1)
    frames_per_sequence: int = Field(default=32, ge=2)
    subject_rotation_deg: float = Field(default=6.0, ge=0, le=30)
    subject_scale: float = Field(default=0.06, ge=0, lt=0.5)
    subject_shift: float = Field(default=0.015, ge=0, le=0.05)
    seed: int = 0

    @model_validator(mode="after")
    def _enough_subjects(self) -> "SynthConfig":
        if self.val_subjects + self.test_subjects >= self.n_subjects:
            raise ValueError("need at least one training subject after the val/test subjects")
        return self


@dataclass(frozen=True)
class SubjectStyle:
    skin: np.ndarray
    background: np.ndarray
    iris: np.ndarray
    iris_radius: float
    sclera_radius: float
    face_radius: float
    gaze_transform: np.ndarray
    gaze_shift: np.ndarray


@dataclass
class FixationSequence:
    """One fixation: M frames of a subject staring at ``gt``; patches are uint8 (M, 3, P, P)."""

    sequence_id: int
    gt: np.ndarray
    subject: int
    face: np.ndarray
    left_eye: np.ndarray
    right_eye: np.ndarray

    def __len__(self) -> int:
        return len(self.face)

    def inputs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return to_float(self.face), to_float(self.left_eye), to_float(self.right_eye)


@dataclass
class Batch:
    face: np.ndarray
    left_eye: np.ndarray
    right_eye: np.ndarray
    gt: np.ndarray
    labels: np.ndarray
    records: np.ndarray

    def __len__(self) -> int:
        return len(self.gt)

    @property
    def inputs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.face, self.left_eye, self.right_eye

    def replace_inputs(self, face, left_eye, right_eye) -> "Batch":
        return Batch(face, left_eye, right_eye, self.gt, self.labels, self.records)


def record_dtype(patch_size: int) -> np.dtype:
    shape = (CHANNELS, patch_size, patch_size)
    return np.dtype([("face", "u1", shape), ("left_eye", "u1", shape), ("right_eye", "u1", shape), ("gt", "<f8", (2,))])


def to_float(patches: np.ndarray) -> np.ndarray:
    return (np.asarray(patches, dtype=get_default_dtype()) / 255.0).astype(get_default_dtype(), copy=False)


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


# ---------- rendering ----------

def _rotation(degrees: float) -> np.ndarray:
    theta = math.radians(degrees)
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def _subject_style(rng: np.random.Generator, config: SynthConfig) -> SubjectStyle:
    tone = rng.uniform(0.55, 0.85)
    darkness = np.clip(config.iris_intensity + rng.uniform(-0.1, 0.1), 0.02, 0.4)
    scale = 1.0 + rng.uniform(-config.subject_scale, config.subject_scale)
    angle = rng.uniform(-config.subject_rotation_deg, config.subject_rotation_deg)
    return SubjectStyle(
        skin=np.clip(tone * np.array([1.0, 0.82, 0.7]) + rng.normal(0, 0.03, 3), SKIN_FLOOR, 1.0),
        background=rng.uniform(0.0, 0.15, 3),
        iris=np.clip(darkness * np.array([0.9, 1.0, 1.2]) * rng.uniform(0.7, 1.3, 3), 0.0, 0.4),
        iris_radius=config.iris_radius * rng.uniform(0.85, 1.15),
        sclera_radius=rng.uniform(0.44, 0.47),
        face_radius=rng.uniform(0.27, 0.31),
        gaze_transform=scale * _rotation(angle),
        gaze_shift=rng.uniform(-config.subject_shift, config.subject_shift, 2),
    )


def _disc(cx: float, cy: float, radius: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    return np.clip(radius - np.hypot(xx - cx, yy - cy) + 0.5, 0.0, 1.0)


def _paint(canvas: np.ndarray, coverage: np.ndarray, color: np.ndarray) -> np.ndarray:
    return canvas * (1.0 - coverage) + color[:, None, None] * coverage


def _eye(offset: np.ndarray, style: SubjectStyle, size: int) -> np.ndarray:
    c = size / 2.0
    canvas = np.broadcast_to(style.skin[:, None, None], (CHANNELS, size, size)).astype(np.float64)
    canvas = _paint(canvas, _disc(c, c, style.sclera_radius * size, size), np.full(CHANNELS, 0.97))
    ix, iy = c + offset[0], c + offset[1]
    canvas = _paint(canvas, _disc(ix, iy, style.iris_radius * size, size), style.iris)
    return _paint(canvas, _disc(ix, iy, 0.4 * style.iris_radius * size, size), np.full(CHANNELS, 0.02))


def _face(head: np.ndarray, style: SubjectStyle, size: int) -> np.ndarray:
    c = size / 2.0
    fx, fy = c + HEAD_SHIFT * size * head[0], c + HEAD_SHIFT * size * head[1]
    canvas = np.broadcast_to(style.background[:, None, None], (CHANNELS, size, size)).astype(np.float64)
    canvas = _paint(canvas, _disc(fx, fy, style.face_radius * size, size), style.skin)
    for side in (-1.0, 1.0):
        canvas = _paint(canvas, _disc(fx + side * 0.12 * size, fy - 0.06 * size, 0.05 * size, size), style.iris)
    return canvas


def normalized_gaze(gt: np.ndarray, config: SynthConfig) -> np.ndarray:
    return 2.0 * np.asarray(gt, dtype=np.float64) / np.array([config.width_cm, config.height_cm]) - 1.0


def render_triple(gt, head, style: SubjectStyle, config: SynthConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Float (3, P, P) patches in [0, 1] for one gaze point and head offset."""
    size = config.patch_size
    displacement = IRIS_GAIN * (normalized_gaze(gt, config) - HEAD_COUPLING * np.asarray(head))
    offset = size * (style.gaze_transform @ displacement + style.gaze_shift)
    eye = _eye(offset, style, size)
    return _face(np.asarray(head), style, size), eye, eye.copy()


def blob_centroids(face: np.ndarray, left_eye: np.ndarray, right_eye: np.ndarray) -> np.ndarray:
    """(N, 6) centroids (x, y) of the face disc and both irises, from uint8 patches."""

    def centroid(mask: np.ndarray) -> np.ndarray:
        size = mask.shape[-1]
        coords = np.arange(size) + 0.5
        total = mask.sum(axis=(1, 2))
        cx = (mask.sum(axis=1) * coords).sum(axis=1) / total
        cy = (mask.sum(axis=2) * coords).sum(axis=1) / total
        return np.stack([cx, cy], axis=1)

    def brightness(patches: np.ndarray) -> np.ndarray:
        return np.asarray(patches, dtype=np.float64).mean(axis=1) / 255.0

    # the corner pixel is always background; iris and pupil are the only pixels darker than skin
    face = np.asarray(face, dtype=np.int16)
    face_mask = (np.abs(face - face[..., :1, :1]).max(axis=1) > 8).astype(np.float64)
    iris_cut = SKIN_FLOOR - 0.025
    left_mask = np.clip(iris_cut - brightness(left_eye), 0.0, None)
    right_mask = np.clip(iris_cut - brightness(right_eye), 0.0, None)
    return np.concatenate([centroid(face_mask), centroid(left_mask), centroid(right_mask)], axis=1)


def _shift(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    if dy == 0 and dx == 0:
        return image
    pad = max(abs(dy), abs(dx))
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    size = image.shape[-1]
    return padded[:, pad - dy:pad - dy + size, pad - dx:pad - dx + size]


def fixation_points(config: SynthConfig) -> np.ndarray:
    """Cell centers of a grid over the screen; independent of the seed."""
    n = config.sequence_points
    cols = max(1, math.ceil(math.sqrt(n * config.width_cm / config.height_cm)))
    rows = math.ceil(n / cols)
    points = [
        ((c + 0.5) * config.width_cm / cols, (r + 0.5) * config.height_cm / rows)
        for r in range(rows) for c in range(cols)
    ]
    return np.array(points[:n])


# ---------- generation ----------

def _split_subjects(config: SynthConfig, rng: np.random.Generator) -> dict[str, list[int]]:
    order = [int(s) for s in rng.permutation(config.n_subjects)]
    n_test, n_val = config.test_subjects, config.val_subjects
    return {
        "test": sorted(order[:n_test]),
        "val": sorted(order[n_test:n_test + n_val]),
        "train": sorted(order[n_test + n_val:]),
    }


def _streams(config: SynthConfig) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(config.seed).spawn(4)
    return {name: np.random.default_rng(child) for name, child in zip(("split", "style", "samples", "sequences"), children)}


def _styles(config: SynthConfig, rng: np.random.Generator) -> list[SubjectStyle]:
    return [_subject_style(rng, config) for _ in range(config.n_subjects)]


def generate_sequences(
    config: SynthConfig,
    noise_std: Optional[float] = None,
    jitter_px: Optional[int] = None,
) -> list[FixationSequence]:
    """Fixation sequences for the test subjects, one per grid point.

    Frame m is the sequence's base rendering plus i.i.d. Gaussian pixel noise
    (``noise_std``, 0-255 units) and a random shift of at most ``jitter_px``
    pixels per axis. ``noise_std`` / ``jitter_px`` override the config values.
    """
    noise = config.noise_std if noise_std is None else noise_std
    jitter = config.jitter_px if jitter_px is None else jitter_px
    if noise < 0 or jitter < 0:
        raise ValueError("noise_std and jitter_px must be non-negative")
    streams = _streams(config)
    subjects = _split_subjects(config, streams["split"])["test"]
    styles = _styles(config, streams["style"])
    rng = streams["sequences"]
    sequences = []
    for sid, gt in enumerate(fixation_points(config)):
        subject = subjects[sid % len(subjects)]
        head = rng.uniform(-1.0, 1.0, 2)
        base = render_triple(gt, head, styles[subject], config)
        frames: list[list[np.ndarray]] = [[], [], []]
        for _ in range(config.frames_per_sequence):
            dy, dx = rng.integers(-jitter, jitter + 1, 2) if jitter else (0, 0)
            for slot, patch in enumerate(base):
                pixels = _shift(patch, int(dy), int(dx)) * 255.0
                if noise > 0:
                    pixels = pixels + rng.normal(0.0, noise, pixels.shape)
                frames[slot].append(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
        sequences.append(FixationSequence(sid, np.asarray(gt), subject, *(np.stack(f) for f in frames)))
    return sequences


def generate(config: SynthConfig, path: Union[str, Path]) -> Path:
    """Render the dataset (train/val/test samples and fixation sequences) into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    streams = _streams(config)
    split_of = {s: name for name, subjects in _split_subjects(config, streams["split"]).items() for s in subjects}
    styles = _styles(config, streams["style"])
    rng = streams["samples"]
    sequences = generate_sequences(config)

    n_samples = config.n_subjects * config.samples_per_subject
    n_records = n_samples + sum(len(s) for s in sequences)
    dtype = record_dtype(config.patch_size)
    records = np.zeros(n_records, dtype=dtype)
    rows = []
    screen = np.array([config.width_cm, config.height_cm])
    r = 0
    for subject in range(config.n_subjects):
        for _ in range(config.samples_per_subject):
            gt = rng.uniform(0.0, 1.0, 2) * screen
            head = rng.uniform(-1.0, 1.0, 2)
            face, left, right = render_triple(gt, head, styles[subject], config)
            records[r] = (quantize(face), quantize(left), quantize(right), gt)
            rows.append((r, r * dtype.itemsize, split_of[subject], subject, -1))
            r += 1
    seq_rows = []
    for seq in sequences:
        ids = []
        for m in range(len(seq)):
            records[r] = (seq.face[m], seq.left_eye[m], seq.right_eye[m], seq.gt)
            rows.append((r, r * dtype.itemsize, "sequence", seq.subject, seq.sequence_id))
            ids.append(str(r))
            r += 1
        seq_rows.append((seq.sequence_id, seq.gt[0], seq.gt[1], seq.subject, ",".join(ids)))

    records.tofile(path / "data.bin")
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(path / "index.tsv", sep="\t", index=False)
    pd.DataFrame(
        seq_rows, columns=["sequence_id", "gt_x_cm", "gt_y_cm", "subject", "frame_record_ids"]
    ).to_csv(path / "sequences.tsv", sep="\t", index=False, float_format="%.17g")
    header = {
        "format": FORMAT,
        "version": VERSION,
        "channels": CHANNELS,
        "patch_size": config.patch_size,
        "record_bytes": dtype.itemsize,
        "n_records": n_records,
        "splits": {name: sum(1 for row in rows if row[2] == name) for name in (*SPLITS, "sequence")},
        "synth": config.model_dump(),
    }
    (path / "header").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %d records (%d samples, %d sequences) to %s", n_records, n_samples, len(sequences), path)
    return path


# ---------- loading ----------

class SplitView:
    """Records of one split; patches are read lazily from the memory map."""

    def __init__(self, dataset: "GazeDataset", name: str, records: np.ndarray):
        self.dataset = dataset
        self.name = name
        self.records = np.asarray(records, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"SplitView({self.name!r}, n={len(self)})"

    @property
    def gt(self) -> np.ndarray:
        return np.asarray(self.dataset.data["gt"][self.records], dtype=np.float64)

    @property
    def subjects(self) -> np.ndarray:
        return self.dataset.index.loc[self.records, "subject"].to_numpy()

    def subset(self, n: int, seed: int = 0) -> "SplitView":
        if n >= len(self):
            return self
        picked = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return SplitView(self.dataset, self.name, self.records[picked])

    def batch(self, positions: np.ndarray, codec: Optional[GazeCodec] = None) -> Batch:
        records = self.records[positions]
        rows = self.dataset.data[records]
        gt = np.asarray(rows["gt"], dtype=np.float64)
        labels = codec.encode(gt).astype(get_default_dtype()) if codec is not None else np.empty((len(gt), 0))
        return Batch(to_float(rows["face"]), to_float(rows["left_eye"]), to_float(rows["right_eye"]), gt, labels, records)

    def batches(
        self,
        batch_size: int,
        codec: Optional[GazeCodec] = None,
        shuffle: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Iterator[Batch]:
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        order = np.arange(len(self))
        if shuffle:
            (rng if rng is not None else np.random.default_rng(0)).shuffle(order)
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size], codec)

    def num_batches(self, batch_size: int) -> int:
        return math.ceil(len(self) / batch_size)


class GazeDataset:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.header = self._read_header()
        self.synth_config = SynthConfig(**self.header["synth"])
        self.dtype = record_dtype(self.header["patch_size"])
        self.data = self._map_records()
        self.index = self._read_index()
        self._sequences = self._read_sequences()

    def _read_header(self) -> dict:
        file = self.path / "header"
        try:
            header = json.loads(file.read_text())
        except FileNotFoundError:
            raise DatasetFormatError(f"{self.path}: no header file; not a dataset directory") from None
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{file}: unreadable header ({exc})") from None
        if header.get("format") != FORMAT:
            raise DatasetFormatError(f"{file}: unknown format {header.get('format')!r}")
        if header.get("version") != VERSION:
            raise DatasetFormatError(f"{file}: unsupported version {header.get('version')!r}")
        return header

    def _map_records(self) -> np.ndarray:
        file = self.path / "data.bin"
        if self.dtype.itemsize != self.header["record_bytes"]:
            raise DatasetFormatError(f"{file}: header record size {self.header['record_bytes']} != {self.dtype.itemsize}")
        expected = self.header["n_records"] * self.dtype.itemsize
        actual = file.stat().st_size if file.exists() else -1
        if actual != expected:
            raise DatasetFormatError(f"{file}: expected {expected} bytes, found {actual}")
        return np.memmap(file, dtype=self.dtype, mode="r", shape=(self.header["n_records"],))

    def _read_index(self) -> pd.DataFrame:
        file = self.path / "index.tsv"
        try:
            index = pd.read_csv(file, sep="\t")
        except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DatasetFormatError(f"{file}: {exc}") from None
        missing = [c for c in INDEX_COLUMNS if c not in index.columns]
        if missing:
            raise DatasetFormatError(f"{file}: missing columns {missing}")
        if len(index) != self.header["n_records"]:
            raise DatasetFormatError(f"{file}: {len(index)} rows for {self.header['n_records']} records")
        for row in index.itertuples():
            if row.record != row.Index or row.offset != row.record * self.dtype.itemsize:
                raise DatasetFormatError(f"{file}: corrupt entry for record {row.record} (offset {row.offset})")
            if row.split not in (*SPLITS, "sequence"):
                raise DatasetFormatError(f"{file}: record {row.record} has unknown split {row.split!r}")
        return index

    def _read_sequences(self) -> pd.DataFrame:
        file = self.path / "sequences.tsv"
        if not file.exists():
            return pd.DataFrame(columns=["sequence_id", "gt_x_cm", "gt_y_cm", "subject", "frame_record_ids"])
        return pd.read_csv(file, sep="\t", dtype={"frame_record_ids": str})

    def __repr__(self) -> str:
        return f"GazeDataset({str(self.path)!r}, records={len(self.data)})"

    def split(self, name: str) -> SplitView:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return SplitView(self, name, self.index.index[self.index["split"] == name].to_numpy())

    def check_codec(self, codec: GazeCodec) -> None:
        """Bins must cover the screen range the ground truth was drawn from."""
        cfg = self.synth_config
        if not (codec.x.covers(0.0, cfg.width_cm) and codec.y.covers(0.0, cfg.height_cm)):
            raise DatasetFormatError(
                f"ordinal bins cover [{codec.x.range_min}, {codec.x.range_max}) x [{codec.y.range_min}, "
                f"{codec.y.range_max}) but the dataset spans {cfg.width_cm} x {cfg.height_cm} cm"
            )

    def sequences(self) -> list[FixationSequence]:
        out = []
        for row in self._sequences.itertuples(index=False):
            ids = np.array([int(i) for i in str(row.frame_record_ids).split(",")], dtype=np.int64)
            if ids.max(initial=-1) >= len(self.data):
                raise DatasetFormatError(f"sequence {row.sequence_id} references missing records")
            frames = self.data[ids]
            out.append(FixationSequence(
                int(row.sequence_id), np.array([row.gt_x_cm, row.gt_y_cm]), int(row.subject),
                np.asarray(frames["face"]), np.asarray(frames["left_eye"]), np.asarray(frames["right_eye"]),
            ))
        return out


def load(
    path: Union[str, Path],
    split: str,
    batch_size: int,
    codec: Optional[GazeCodec] = None,
    shuffle: bool = False,
    seed: int = 0,
) -> Iterator[Batch]:
    return GazeDataset(path).split(split).batches(batch_size, codec, shuffle, np.random.default_rng(seed))
