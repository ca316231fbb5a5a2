"""Label files, manifests and in-memory annotated images."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ..boxes import BoxAnnotation
from ..errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class AnnotatedImage:
    pixels: np.ndarray                      # [3, H, W] float32 RGB in [0, 1]
    boxes: list[BoxAnnotation] = field(default_factory=list)
    is_hard_negative: bool = False
    source: str = ""

    def __post_init__(self) -> None:
        if self.is_hard_negative and self.boxes:
            raise DataError("a hard negative image cannot carry annotations")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def parse_annotation_line(text: str, lineno: int | None = None) -> BoxAnnotation:
    """Parse ``<class_id> <cx> <cy> <w> <h>``; no clamping is applied."""
    where = f"line {lineno}: " if lineno is not None else ""
    fields = text.split()
    if len(fields) != 5:
        raise DataError(f"{where}expected 5 fields, got {len(fields)}: {text!r}")
    try:
        class_id = int(fields[0])
        cx, cy, w, h = (float(v) for v in fields[1:])
    except ValueError:
        raise DataError(f"{where}non-numeric field in {text!r}") from None
    if not all(np.isfinite(v) for v in (cx, cy, w, h)):
        raise DataError(f"{where}non-finite value in {text!r}")
    try:
        return BoxAnnotation(class_id, cx, cy, w, h).validate()
    except DataError as exc:
        raise DataError(f"{where}{exc}") from None


def format_annotation_line(box: BoxAnnotation) -> str:
    # repr gives the shortest string that round-trips the float exactly
    return f"{box.class_id} {box.cx!r} {box.cy!r} {box.w!r} {box.h!r}"


def read_label_file(path: str | Path) -> list[BoxAnnotation]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            try:
                out.append(parse_annotation_line(line, lineno))
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
    return out


def write_label_file(path: str | Path, boxes: Sequence[BoxAnnotation]) -> None:
    Path(path).write_text("".join(format_annotation_line(b) + "\n" for b in boxes))


def label_path_for(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".txt")


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.clip(np.rint(pixels.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


@dataclass
class DatasetManifest:
    image_paths: list[Path]
    class_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.image_paths)

    def label_path(self, index: int) -> Path:
        return label_path_for(self.image_paths[index])

    def load(self, index: int) -> AnnotatedImage:
        path = self.image_paths[index]
        if not path.exists():
            raise DataError(f"image not found: {path}")
        boxes = read_label_file(label_path_for(path))
        return AnnotatedImage(load_image(path), boxes, is_hard_negative=not boxes, source=str(path))

    def load_all(self) -> list[AnnotatedImage]:
        return [self.load(i) for i in range(len(self))]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{p}\n" for p in self.image_paths))


def read_manifest(path: str | Path, names_path: str | Path | None = None) -> DatasetManifest:
    """Newline-separated image paths; relative paths resolve against the manifest's folder."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    images = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            p = Path(line)
            images.append(p if p.is_absolute() else path.parent / p)
    if names_path is None:
        guess = path.parent / "classes.names"
        names_path = guess if guess.exists() else None
    names = read_class_names(names_path) if names_path else []
    return DatasetManifest(images, names)


def read_class_names(path: str | Path) -> list[str]:
    return [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]


def write_class_names(path: str | Path, names: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names))
