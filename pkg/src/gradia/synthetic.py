"""Synthetic spurious-correlation benchmark with ground-truth masks.

Each image carries one class glyph (its shape decides the label) and, with a
class-conditional probability, one context glyph. At p_train = 0.9 the
context glyph co-occurs with the attached class 90% of the time, so a model
can score 90% on the training distribution by watching context alone; the
test split breaks the correlation (p_test = 0.5). Intrinsic and context
pixel masks are recorded exactly, which lets an oracle answer the two
reasonability questions without a human.

Pixel data is quantized to 8-bit at generation time, so the PNG round trip
through save_dataset/load_dataset is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionMap, BinaryMask, decode_mask_rle, encode_mask_rle, upsample
from .errors import ConfigurationError, GenerationError, InputError
from .reasonability import Verdict

GLYPH_KINDS = ("disk", "square", "triangle", "cross", "ring")

_SPLIT_CODES = {"train": 0, "validation": 1, "test": 2}

_PLACEMENT_RETRIES = 200


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    class0_shape: str = "disk"
    class1_shape: str = "square"
    context_glyph: str = "triangle"
    shape_size_range: tuple[int, int] = (10, 16)
    context_cooccurrence_train: float = 0.9
    context_cooccurrence_test: float = 0.5
    context_attached_class: int = 1
    noise_std: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        for name in (self.class0_shape, self.class1_shape, self.context_glyph):
            if name not in GLYPH_KINDS:
                raise ConfigurationError(f"unknown glyph kind {name!r}")
        if len({self.class0_shape, self.class1_shape, self.context_glyph}) != 3:
            raise ConfigurationError("class and context glyph kinds must be distinct")
        for p in (self.context_cooccurrence_train, self.context_cooccurrence_test):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"co-occurrence probability {p} outside [0, 1]")
        lo, hi = self.shape_size_range
        if not (0 < lo <= hi):
            raise ConfigurationError(f"bad shape size range {self.shape_size_range}")
        if hi > self.image_size:
            raise ConfigurationError("shapes do not fit inside the image")
        if self.context_attached_class not in (0, 1):
            raise ConfigurationError("context_attached_class must be 0 or 1")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")


@dataclass(frozen=True)
class SplitCounts:
    train: int
    validation: int
    test: int

    @classmethod
    def from_total(cls, total: int) -> "SplitCounts":
        train = int(round(total * 0.70))
        validation = int(round(total * 0.15))
        return cls(train=train, validation=validation, test=total - train - validation)

    def for_split(self, split: str) -> int:
        return {"train": self.train, "validation": self.validation, "test": self.test}[split]


@dataclass
class SyntheticInstance:
    id: str
    image: np.ndarray
    label: int
    intrinsic_mask: BinaryMask
    context_mask: BinaryMask
    split: str


@dataclass(frozen=True)
class OracleConfig:
    binarize_tau: float = 0.5
    q1_coverage_min: float = 0.25
    q2_coverage_max: float = 0.25

    def validate(self) -> None:
        for name, v in (
            ("binarize_tau", self.binarize_tau),
            ("q1_coverage_min", self.q1_coverage_min),
            ("q2_coverage_max", self.q2_coverage_max),
        ):
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name}={v} outside [0, 1]")


def _glyph_grid(kind: str, size: int) -> np.ndarray:
    s = size
    if kind == "square":
        return np.ones((s, s), dtype=bool)
    rows = np.arange(s)[:, None]
    cols = np.arange(s)[None, :]
    if kind == "disk":
        c = (s - 1) / 2.0
        r = s / 2.0
        return (rows - c) ** 2 + (cols - c) ** 2 <= r * r
    if kind == "triangle":
        # apex at top center, base along the bottom row
        center = (s - 1) / 2.0
        half = (rows + 1) / s * (s / 2.0)
        return np.abs(cols - center) <= half
    if kind == "cross":
        w = max(2, s // 3)
        lo = (s - w) // 2
        hi = lo + w
        vert = (cols >= lo) & (cols < hi)
        horiz = (rows >= lo) & (rows < hi)
        return vert | horiz
    if kind == "ring":
        c = (s - 1) / 2.0
        r = s / 2.0
        d2 = (rows - c) ** 2 + (cols - c) ** 2
        return (d2 <= r * r) & (d2 >= (r / 2.0) ** 2)
    raise InputError(f"unknown glyph kind {kind!r}")


def _boxes_overlap(a, b, gap: int = 1) -> bool:
    ay, ax, ah, aw = a
    by, bx, bh, bw = b
    return not (
        ay + ah + gap <= by
        or by + bh + gap <= ay
        or ax + aw + gap <= bx
        or bx + bw + gap <= ax
    )


def _place(rng: np.random.Generator, image_size: int, size: int, taken: list) -> tuple[int, int]:
    for _ in range(_PLACEMENT_RETRIES):
        y = int(rng.integers(0, image_size - size + 1))
        x = int(rng.integers(0, image_size - size + 1))
        if all(not _boxes_overlap((y, x, size, size), t) for t in taken):
            return y, x
    raise GenerationError("could not place glyphs without overlap")


def _instance_rng(spec: SceneSpec, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((spec.seed, _SPLIT_CODES[split], index))
    )


def _render_instance(spec: SceneSpec, split: str, index: int) -> SyntheticInstance:
    rng = _instance_rng(spec, split, index)
    n = spec.image_size
    label = index % 2
    p = (
        spec.context_cooccurrence_test
        if split == "test"
        else spec.context_cooccurrence_train
    )
    p_here = p if label == spec.context_attached_class else 1.0 - p
    with_context = bool(rng.random() < p_here)

    lo, hi = spec.shape_size_range
    class_size = int(rng.integers(lo, hi + 1))
    ctx_size = int(rng.integers(lo, hi + 1))

    taken: list = []
    cy, cx = _place(rng, n, class_size, taken)
    taken.append((cy, cx, class_size, class_size))

    canvas = np.zeros((n, n), dtype=np.float64)
    intrinsic = np.zeros((n, n), dtype=bool)
    context = np.zeros((n, n), dtype=bool)

    shape = spec.class1_shape if label == 1 else spec.class0_shape
    glyph = _glyph_grid(shape, class_size)
    intrinsic[cy : cy + class_size, cx : cx + class_size] = glyph
    canvas[intrinsic] = 1.0

    if with_context:
        gy, gx = _place(rng, n, ctx_size, taken)
        ctx_glyph = _glyph_grid(spec.context_glyph, ctx_size)
        context[gy : gy + ctx_size, gx : gx + ctx_size] = ctx_glyph
        canvas[context] = 1.0

    if spec.noise_std > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_std, size=(n, n))
    quantized = np.clip(np.round(np.clip(canvas, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)

    return SyntheticInstance(
        id=f"{split}-{index:05d}",
        image=quantized.astype(np.float64) / 255.0,
        label=label,
        intrinsic_mask=BinaryMask(grid=intrinsic, provenance="intrinsic"),
        context_mask=BinaryMask(grid=context, provenance="context"),
        split=split,
    )


def generate_dataset(spec: SceneSpec, counts: SplitCounts) -> list[SyntheticInstance]:
    """Deterministic in (spec, counts); every instance derives its own rng stream."""
    spec.validate()
    instances = []
    for split in ("train", "validation", "test"):
        for index in range(counts.for_split(split)):
            instances.append(_render_instance(spec, split, index))
    return instances


def oracle_mask(instance: SyntheticInstance) -> BinaryMask:
    """The region a careful annotator would mark: the class glyph itself."""
    return instance.intrinsic_mask


def oracle_verdict(
    attention: AttentionMap,
    instance: SyntheticInstance,
    cfg: OracleConfig = OracleConfig(),
) -> Verdict:
    """Answer Q1/Q2 from mask coverage of the binarized, upsampled attention."""
    cfg.validate()
    h, w = instance.image.shape
    grid = np.asarray(attention.grid, dtype=np.float64)
    if grid.shape != (h, w):
        grid = upsample(attention, h, w)
    focus = grid >= cfg.binarize_tau

    intrinsic = instance.intrinsic_mask.grid
    q1 = False
    denom = int(intrinsic.sum())
    if denom > 0:
        q1 = int((focus & intrinsic).sum()) / denom >= cfg.q1_coverage_min

    context = instance.context_mask.grid
    q2 = False
    ctx_total = int(context.sum())
    if ctx_total > 0:
        q2 = int((focus & context).sum()) / ctx_total >= cfg.q2_coverage_max

    return Verdict(q1_sufficient=q1, q2_contextual=q2, annotator_id="oracle")


def save_dataset(instances: list[SyntheticInstance], directory) -> Path:
    """Write 8-bit grayscale PNGs plus a JSONL manifest; returns the manifest path."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.jsonl"
    with manifest.open("w", encoding="utf-8") as fh:
        for inst in instances:
            rel = f"images/{inst.id}.png"
            pixels = np.clip(np.round(inst.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(root / rel)
            record = {
                "id": inst.id,
                "path": rel,
                "label": int(inst.label),
                "split": inst.split,
                "intrinsic_mask_rle": encode_mask_rle(inst.intrinsic_mask),
                "context_mask_rle": encode_mask_rle(inst.context_mask),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory) -> list[SyntheticInstance]:
    root = Path(directory)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise InputError(f"no manifest at {manifest}")
    instances = []
    with manifest.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pixels = np.asarray(Image.open(root / rec["path"]), dtype=np.uint8)
            instances.append(
                SyntheticInstance(
                    id=rec["id"],
                    image=pixels.astype(np.float64) / 255.0,
                    label=int(rec["label"]),
                    intrinsic_mask=BinaryMask(
                        grid=decode_mask_rle(rec["intrinsic_mask_rle"]), provenance="intrinsic"
                    ),
                    context_mask=BinaryMask(
                        grid=decode_mask_rle(rec["context_mask_rle"]), provenance="context"
                    ),
                    split=rec["split"],
                )
            )
    return instances
