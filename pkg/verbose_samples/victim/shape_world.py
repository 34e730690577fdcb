"""
verbose-samples — Shape-world synthetic captioning corpus

Images hold 1–3 distinct (color, shape) objects on a plain gray
background, each drawn inside one cell of a 4×4 grid. Videos move the
objects one cell per frame with bouncing at the border. Captions follow
the closed grammar "a <color> <shape> (and a <color> <shape>)*" with
objects in canonical (color, shape) order, so every caption mention is
ground truth.

Exported datasets are a directory with ``pixels/<id>.npy`` and a
``manifest.jsonl`` (id, kind, file, caption, objects, shape).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np
from numpy.typing import NDArray

from verbose_samples.core.config import DEFAULT_VIDEO_FRAMES, MODALITIES
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.samples import PixelSample, SampleKind
from verbose_samples.victim.vocab import COLORS, SHAPES

log = logging.getLogger(__name__)

GRID = 4
BACKGROUND = 0.5
MAX_OBJECTS = 3
DATASET_HEADER = "dataset.json"

RGB: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
}

ObjectSet = tuple[tuple[str, str], ...]


# ---------------------------------------------------------------------------
# Drawing
# ---------------------------------------------------------------------------
def shape_mask(shape: str, cell: int) -> NDArray[np.bool_]:
    """Boolean cell×cell mask of *shape* centred in the cell."""
    c = (cell - 1) / 2.0
    r = max(cell / 2.0 - 1.0, 0.75)
    y, x = np.mgrid[0:cell, 0:cell].astype(np.float64)
    dy, dx = y - c, x - c
    if shape == "circle":
        return dy ** 2 + dx ** 2 <= r ** 2
    if shape == "square":
        return (np.abs(dy) <= 0.8 * r) & (np.abs(dx) <= 0.8 * r)
    if shape == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    if shape == "cross":
        arm = max(r / 3.0, 0.5)
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"unknown shape {shape!r}")


def render_frame(
    objects: ObjectSet,
    cells: list[tuple[int, int]],
    image_size: int,
) -> NDArray[np.float64]:
    cell = image_size // GRID
    frame = np.full((image_size, image_size, 3), BACKGROUND)
    for (color, shape), (row, col) in zip(objects, cells):
        mask = shape_mask(shape, cell)
        patch = frame[row * cell:(row + 1) * cell, col * cell:(col + 1) * cell]
        patch[mask] = RGB[color]
    return frame


def caption_for(objects: ObjectSet) -> str:
    return " and ".join(f"a {color} {shape}" for color, shape in objects)


def canonical(objects: list[tuple[str, str]]) -> ObjectSet:
    return tuple(sorted(objects, key=lambda o: (COLORS.index(o[0]), SHAPES.index(o[1]))))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------
@dataclass
class ShapeWorldItem:
    sample_id: str
    sample: PixelSample
    caption: str
    objects: ObjectSet
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class ShapeWorld:
    kind: str
    seed: int
    items: list[ShapeWorldItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[ShapeWorldItem]:
        return iter(self.items)

    def __getitem__(self, i: int) -> ShapeWorldItem:
        return self.items[i]

    def subset(self, n: int) -> "ShapeWorld":
        return ShapeWorld(self.kind, self.seed, self.items[:n])

    def object_counts(self) -> NDArray[np.int64]:
        return np.array([len(it.objects) for it in self.items], dtype=np.int64)


def _bounce(pos: int, vel: int) -> tuple[int, int]:
    nxt = pos + vel
    if not 0 <= nxt < GRID:
        vel = -vel
        nxt = pos + vel
    return nxt, vel


def _trajectory(
    cells: list[tuple[int, int]],
    n_frames: int,
    rng: np.random.Generator,
) -> list[list[tuple[int, int]]]:
    """Per-frame cells; an object whose next cell is taken reverses and waits."""
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]
    vel = [steps[int(k)] for k in rng.integers(0, len(steps), size=len(cells))]
    frames = [list(cells)]
    current = list(cells)
    for _ in range(n_frames - 1):
        nxt = list(current)
        for i, ((r, c), (vr, vc)) in enumerate(zip(current, vel)):
            nr, vr2 = _bounce(r, vr)
            nc, vc2 = _bounce(c, vc)
            if (nr, nc) in nxt[:i] + current[i + 1:]:
                vel[i] = (-vr, -vc)
                continue
            nxt[i] = (nr, nc)
            vel[i] = (vr2, vc2)
        current = nxt
        frames.append(list(current))
    return frames


def make_item(
    sample_id: str,
    kind: str,
    rng: np.random.Generator,
    image_size: int = 32,
    n_frames: int = DEFAULT_VIDEO_FRAMES,
) -> ShapeWorldItem:
    n_obj = int(rng.integers(1, MAX_OBJECTS + 1))
    pairs = rng.choice(len(COLORS) * len(SHAPES), size=n_obj, replace=False)
    drawn = [(COLORS[int(p) // len(SHAPES)], SHAPES[int(p) % len(SHAPES)]) for p in pairs]
    flat = rng.choice(GRID * GRID, size=n_obj, replace=False)
    cells = [(int(f) // GRID, int(f) % GRID) for f in flat]
    objects = canonical(drawn)
    # keep each object on its own cell after sorting
    placed = [cells[drawn.index(o)] for o in objects]
    if kind == "image":
        sample = PixelSample.image(render_frame(objects, placed, image_size))
    else:
        path = _trajectory(placed, n_frames, rng)
        sample = PixelSample.video(np.stack([render_frame(objects, c, image_size) for c in path]))
    return ShapeWorldItem(sample_id, sample, caption_for(objects), objects)


def make_shape_world(
    n_samples: int,
    kind: str = "image",
    seed: int = 0,
    image_size: int = 32,
    n_frames: int = DEFAULT_VIDEO_FRAMES,
) -> ShapeWorld:
    """Deterministic corpus; sample i draws from SeedSequence([seed, i])."""
    if kind not in MODALITIES:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"kind must be one of {MODALITIES}")
    if image_size % GRID or image_size // GRID < 2:
        raise VerboseSamplesError(
            FailCode.FAIL_CONFIG_INVALID, f"image_size must be a multiple of {GRID} and >= {2 * GRID}",
        )
    items = []
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        items.append(make_item(f"{kind}-{seed}-{i:05d}", kind, rng, image_size, n_frames))
    log.debug("shape-world: %d %s samples (seed=%d)", n_samples, kind, seed)
    return ShapeWorld(kind, seed, items)


# ---------------------------------------------------------------------------
# Export / load
# ---------------------------------------------------------------------------
def manifest_row(item: ShapeWorldItem) -> dict[str, Any]:
    row = {
        "id": item.sample_id,
        "kind": item.sample.kind.value,
        "file": f"pixels/{item.sample_id}.npy",
        "caption": item.caption,
        "objects": [list(o) for o in item.objects],
        "shape": list(item.sample.frames.shape),
    }
    row.update(item.meta)
    return row


def export_dataset(dataset: ShapeWorld, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        (out / "pixels").mkdir(parents=True, exist_ok=True)
        lines = []
        for item in dataset:
            np.save(out / "pixels" / f"{item.sample_id}.npy", np.asarray(item.sample.frames))
            lines.append(json.dumps(manifest_row(item), sort_keys=True))
        (out / "manifest.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        header = {"kind": dataset.kind, "seed": dataset.seed, "n_samples": len(dataset)}
        (out / DATASET_HEADER).write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot write dataset to {out}: {exc}") from exc
    return out


def _read_header(root: Path) -> dict[str, Any] | None:
    path = root / DATASET_HEADER
    if not path.exists():
        return None
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") not in ("image", "video"):
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"{path} has no valid kind")
    return header


def load_dataset(path: str | Path) -> ShapeWorld:
    """Load an exported dataset; the kind comes from dataset.json when present."""
    root = Path(path)
    manifest = root / "manifest.jsonl"
    try:
        rows = [json.loads(line) for line in manifest.read_text(encoding="utf-8").splitlines() if line]
    except OSError as exc:
        raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read {manifest}: {exc}") from exc
    header = _read_header(root)
    if header is not None:
        kind, seed = str(header["kind"]), int(header.get("seed", -1))
    elif rows:
        kind, seed = rows[0]["kind"], -1
    else:
        raise VerboseSamplesError(
            FailCode.FAIL_EMPTY_INPUT, f"{manifest} is empty and {DATASET_HEADER} is missing", path=str(root),
        )
    items = []
    for row in rows:
        if row["kind"] != kind:
            raise VerboseSamplesError(
                FailCode.FAIL_SHAPE_MISMATCH, f"{row['id']} is {row['kind']}, dataset is {kind}",
            )
        try:
            frames = np.load(root / row["file"])
        except OSError as exc:
            raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read pixels {row['file']}: {exc}") from exc
        sample = PixelSample(SampleKind(row["kind"]), frames)
        meta = {k: v for k, v in row.items() if k not in ("id", "kind", "file", "caption", "objects", "shape")}
        objects = tuple((str(c), str(s)) for c, s in row["objects"])
        items.append(ShapeWorldItem(row["id"], sample, row["caption"], objects, meta))
    return ShapeWorld(kind, seed, items)
