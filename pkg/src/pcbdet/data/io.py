"""On-disk formats.

Annotations are JSON lines, one image per line::

    {"image_id": "b01", "width": 1024, "height": 768,
     "boxes": [[x_min, y_min, x_max, y_max, class_id], ...], "role": "train_val"}

``role`` is optional (default ``train_val``). Coordinates are pixels, origin
top-left, boxes half-open. Images are 8-bit RGB PNGs named ``<image_id>.png``.
The split manifest is tab-separated ``patch_id, board_id, x0, y0, size, split``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from pcbdet.data.patchify import SplitManifest
from pcbdet.data.records import BoardRecord, PatchRecord
from pcbdet.errors import ConfigError

MANIFEST_HEADER = "# patch_id\tboard_id\tx0\ty0\tsize\tsplit"


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def annotation_line(image_id: str, width: int, height: int, boxes, classes, role: str | None = None) -> str:
    rows = [[*(float(v) for v in b), int(c)] for b, c in zip(np.asarray(boxes).reshape(-1, 4), np.asarray(classes).reshape(-1))]
    rec = {"image_id": image_id, "width": int(width), "height": int(height), "boxes": rows}
    if role is not None:
        rec["role"] = role
    return json.dumps(rec, sort_keys=True)


def write_annotations(path, boards: list[BoardRecord]) -> None:
    lines = [annotation_line(b.board_id, b.width, b.height, b.boxes, b.classes, b.role) for b in boards]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_annotations(path, images_dir=None, num_classes: int | None = None) -> list[BoardRecord]:
    path = Path(path)
    boards = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read annotation file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows = np.asarray(rec.get("boxes", []), dtype=np.float64).reshape(-1, 5)
            image_id = str(rec["image_id"])
            width, height = int(rec["width"]), int(rec["height"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: malformed annotation record ({exc})") from None
        image_path = str(Path(images_dir) / f"{image_id}.png") if images_dir is not None else None
        boards.append(
            BoardRecord(
                board_id=image_id,
                width=width,
                height=height,
                boxes=rows[:, :4],
                classes=rows[:, 4].astype(np.int64),
                role=rec.get("role", "train_val"),
                image_path=image_path,
                num_classes=num_classes,
            )
        )
    return boards


def load_board_image(board: BoardRecord) -> np.ndarray:
    if board.image is not None:
        return board.image
    if board.image_path is None:
        raise ConfigError(f"board {board.board_id} has no image")
    try:
        image = read_png(board.image_path)
    except OSError as exc:
        raise ConfigError(f"cannot read image {board.image_path}: {exc}") from None
    if image.shape[:2] != (board.height, board.width):
        raise ConfigError(f"{board.image_path}: image is {image.shape[1]}x{image.shape[0]}, annotation says {board.width}x{board.height}")
    return image


def write_manifest(path, manifest: SplitManifest) -> None:
    lines = [MANIFEST_HEADER, f"# seed={manifest.seed} val_frac={manifest.val_frac}"]
    for p in manifest.patches:
        lines.append(f"{p.patch_id}\t{p.board_id}\t{p.x0}\t{p.y0}\t{p.size}\t{p.split}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, str, int, int, int, str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        pid, bid, x0, y0, size, split = line.split("\t")
        rows.append((pid, bid, int(x0), int(y0), int(size), split))
    return rows


def patch_image_id(patch: PatchRecord) -> str:
    return f"{patch.board_id}_x{patch.x0}_y{patch.y0}_s{patch.size}"
