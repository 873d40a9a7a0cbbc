"""Scene discovery, image loading, joint augmentation, and batching.

Directory layout: `<root>/images/*_{pre,post}_disaster.<ext>` plus
`<root>/labels/*_post_disaster.json`. Samples stack pre and post RGB into a
6-channel float raster in [0, 1]; targets are rendered class masks at the
same resolution.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from .annotations import AnnotationError, ClassScheme, parse_label_file
from .rasterize import DamageMask, render_mask


class UnreadableImage(ValueError):
    """Image file cannot be decoded; the sample must be skipped."""


class MissingLabel(ValueError):
    """Scene has no label file, so no training target can be built."""


class EmptySplit(ValueError):
    """A train/val split would leave one side empty."""


class NoValidSamples(ValueError):
    """Every sample in the source failed to load."""


@dataclass(frozen=True)
class ScenePair:
    scene_id: str
    pre_image_path: Path
    post_image_path: Path
    post_label_path: Path | None = None  # absent for test-mode scenes


@dataclass
class SampleRecord:
    input: np.ndarray  # float32 (6, H, W), channels 0-2 pre RGB, 3-5 post RGB
    target: DamageMask  # (H, W)
    scene_id: str


@dataclass
class Batch:
    inputs: np.ndarray  # float32 (B, 6, H, W)
    targets: np.ndarray  # uint8 (B, H, W)
    scene_ids: list[str]


@dataclass(frozen=True)
class SkipRecord:
    path: str
    reason: str


_IMAGE_RE = re.compile(
    r"^(?P<sid>.+)_(?P<phase>pre|post)_disaster\.(?P<ext>png|jpg|jpeg|tif|tiff|bmp)$",
    re.IGNORECASE,
)


def discover_pairs(root) -> tuple[list[ScenePair], list[SkipRecord]]:
    """Pair pre/post images (and post labels) by scene id.

    Unpaired or unrecognized files land in the skip list instead of raising;
    pairs come back sorted by scene id. A pair without a label file is still
    a valid (test-mode) pair.
    """
    root = Path(root)
    images_dir = root / "images"
    labels_dir = root / "labels"
    if not images_dir.is_dir() or not labels_dir.is_dir():
        raise NotADirectoryError(
            f"{root} must contain 'images/' and 'labels/' subdirectories"
        )

    skipped: list[SkipRecord] = []
    found: dict[str, dict[str, Path]] = {}
    for path in sorted(images_dir.iterdir()):
        if not path.is_file():
            continue
        m = _IMAGE_RE.match(path.name)
        if m is None:
            skipped.append(SkipRecord(str(path), "unrecognized image filename"))
            continue
        sid, phase = m.group("sid"), m.group("phase").lower()
        slots = found.setdefault(sid, {})
        if phase in slots:
            skipped.append(SkipRecord(str(path), f"duplicate {phase} image for scene {sid!r}"))
            continue
        slots[phase] = path

    pairs: list[ScenePair] = []
    for sid in sorted(found):
        slots = found[sid]
        if "pre" not in slots or "post" not in slots:
            missing = "post" if "post" not in slots else "pre"
            for path in slots.values():
                skipped.append(SkipRecord(str(path), f"missing {missing} counterpart"))
            continue
        label = labels_dir / f"{sid}_post_disaster.json"
        pairs.append(
            ScenePair(
                scene_id=sid,
                pre_image_path=slots["pre"],
                post_image_path=slots["post"],
                post_label_path=label if label.is_file() else None,
            )
        )

    paired_ids = {p.scene_id for p in pairs}
    for path in sorted(labels_dir.glob("*_post_disaster.json")):
        sid = path.name[: -len("_post_disaster.json")]
        if sid not in paired_ids:
            skipped.append(SkipRecord(str(path), "label without an image pair"))
    return pairs, skipped


def write_skip_list(skipped: Sequence[SkipRecord], path) -> None:
    Path(path).write_text(
        json.dumps([asdict(s) for s in skipped], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_and_resize(path, size: int) -> np.ndarray:
    """Decode to RGB, Lanczos-resize to (size, size), scale into [0, 1].

    Returns float32 (3, size, size). Raises UnreadableImage on decode
    failure. An input already at the target size passes through exactly.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.LANCZOS)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, SyntaxError, ValueError) as e:
        raise UnreadableImage(f"{path}: {e}") from e
    arr /= np.float32(255.0)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_sample(pair: ScenePair, scheme: ClassScheme, size: int) -> SampleRecord:
    """Load one 6-channel sample with its rendered target mask."""
    if pair.post_label_path is None:
        raise MissingLabel(f"{pair.scene_id}: no label file")
    pre = load_and_resize(pair.pre_image_path, size)
    post = load_and_resize(pair.post_image_path, size)
    try:
        annots = parse_label_file(Path(pair.post_label_path).read_bytes())
    except OSError as e:
        raise MissingLabel(f"{pair.scene_id}: {e}") from e
    target = render_mask(annots, size, size, scheme)
    return SampleRecord(
        input=np.concatenate([pre, post], axis=0),
        target=target,
        scene_id=pair.scene_id,
    )


def sample_rng(seed: int, scene_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-sample RNG stream keyed by (seed, epoch, scene id).

    Loading order cannot change augmentations; epochs see fresh draws.
    """
    return np.random.default_rng((seed, epoch, zlib.crc32(scene_id.encode("utf-8"))))


def augment(sample: SampleRecord, rng: np.random.Generator) -> SampleRecord:
    """Joint left-right flip (p=0.5) plus one shared brightness factor.

    The flip applies to pre, post, and the mask together. Brightness
    u ~ Uniform[0.8, 1.2] multiplies both image stacks (never the mask),
    clamped back into [0, 1]. Both draws always happen, in this order, so
    the stream stays aligned regardless of outcomes.
    """
    flip = rng.random() < 0.5
    u = np.float32(rng.uniform(0.8, 1.2))
    inp, tgt = sample.input, sample.target.data
    if flip:
        inp = inp[:, :, ::-1]
        tgt = tgt[:, ::-1]
    inp = np.clip(inp * u, np.float32(0.0), np.float32(1.0))
    return SampleRecord(
        input=np.ascontiguousarray(inp, dtype=np.float32),
        target=DamageMask(np.ascontiguousarray(tgt)),
        scene_id=sample.scene_id,
    )


def split_train_val(pairs: Sequence[ScenePair], ratio: float,
                    seed: int) -> tuple[list[ScenePair], list[ScenePair]]:
    """Deterministic scene-level split; first ceil(ratio*N) shuffled -> train."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    ordered = sorted(pairs, key=lambda p: p.scene_id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    n_train = math.ceil(ratio * len(ordered))
    train = sorted((ordered[i] for i in perm[:n_train]), key=lambda p: p.scene_id)
    val = sorted((ordered[i] for i in perm[n_train:]), key=lambda p: p.scene_id)
    if not train or not val:
        raise EmptySplit(f"{len(ordered)} scenes at ratio {ratio} leaves a side empty")
    return train, val


SampleSource = Callable[[], SampleRecord]


def make_batches(sources: Iterable[SampleRecord | SampleSource], batch_size: int,
                 shuffle: bool = False, seed: int = 0,
                 ) -> tuple[list[Batch], list[SkipRecord]]:
    """Assemble valid samples into batches, dropping ones that fail to load.

    `sources` may hold SampleRecords or zero-arg callables producing them.
    The final partial batch is emitted. Raises NoValidSamples when nothing
    loads.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    items = list(sources)
    order = list(range(len(items)))
    if shuffle:
        order = list(np.random.default_rng(seed).permutation(len(items)))

    skipped: list[SkipRecord] = []
    samples: list[SampleRecord] = []
    for idx in order:
        item = items[idx]
        try:
            sample = item() if callable(item) else item
        except (UnreadableImage, MissingLabel, AnnotationError) as e:
            skipped.append(SkipRecord(path=f"sample[{idx}]", reason=str(e)))
            continue
        samples.append(sample)
    if not samples:
        raise NoValidSamples(f"all {len(items)} samples failed to load")

    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batches.append(
            Batch(
                inputs=np.stack([s.input for s in chunk]),
                targets=np.stack([s.target.data for s in chunk]),
                scene_ids=[s.scene_id for s in chunk],
            )
        )
    return batches, skipped


def load_batches(pairs: Sequence[ScenePair], scheme: ClassScheme, size: int,
                 batch_size: int, shuffle: bool = False, seed: int = 0,
                 augment_samples: bool = False, epoch: int = 0,
                 ) -> tuple[list[Batch], list[SkipRecord]]:
    """Load scene pairs into batches, optionally with joint augmentation."""

    def loader(pair: ScenePair) -> SampleSource:
        def load() -> SampleRecord:
            sample = load_sample(pair, scheme, size)
            if augment_samples:
                sample = augment(sample, sample_rng(seed, pair.scene_id, epoch))
            return sample

        return load

    return make_batches(
        [loader(p) for p in pairs],
        batch_size=batch_size,
        shuffle=shuffle,
        seed=(seed, epoch) if shuffle else seed,
    )
