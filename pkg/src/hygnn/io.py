"""Annotation text files and PPM/PGM images.

Annotation format (UTF-8, LF)::

    H W count
    x y        # `count` lines, decimal floats, origin at the top-left

The image of a scene lives next to its annotation with the same basename and
a ``.ppm`` suffix (binary P6, maxval 255).
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .data import PointAnnotation, Scene

PathLike = Union[str, Path]


class DataError(Exception):
    """Base class for unreadable or inconsistent input data."""


class AnnotationError(DataError):
    pass


class AnnotationHeaderError(AnnotationError):
    pass


class AnnotationCountError(AnnotationError):
    pass


class AnnotationPointError(AnnotationError):
    """Malformed point line."""


class AnnotationBoundsError(AnnotationError):
    pass


class ImageFormatError(DataError):
    pass


def format_annotations(height: int, width: int, points) -> str:
    lines = [f"{height} {width} {len(points)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in points]
    return "\n".join(lines) + "\n"


def parse_annotations(text: str) -> tuple[int, int, list[PointAnnotation]]:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise AnnotationHeaderError("empty annotation file")
    head = lines[0].split()
    try:
        if len(head) != 3:
            raise ValueError
        H, W, count = (int(v) for v in head)
    except ValueError:
        raise AnnotationHeaderError(f"header must be `H W count`, got {lines[0]!r}") from None
    if H <= 0 or W <= 0 or count < 0:
        raise AnnotationHeaderError(f"invalid header values {lines[0]!r}")
    body = lines[1:]
    if len(body) != count:
        raise AnnotationCountError(f"header announces {count} points, file has {len(body)}")
    points = []
    for lineno, line in enumerate(body, start=2):
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise AnnotationPointError(f"line {lineno}: expected `x y`, got {line!r}") from None
        if not (0.0 <= x < W and 0.0 <= y < H):
            raise AnnotationBoundsError(f"line {lineno}: point ({x}, {y}) outside {W}x{H}")
        points.append(PointAnnotation(x, y))
    return H, W, points


def load_annotations(path: PathLike) -> tuple[int, int, list[PointAnnotation]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise AnnotationHeaderError(f"{path}: not UTF-8 text") from exc
    return parse_annotations(text)


def save_annotations(scene: Scene, path: PathLike) -> None:
    text = format_annotations(scene.height, scene.width, scene.points)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def read_ppm(path: PathLike) -> np.ndarray:
    """Binary PPM -> float image [3, H, W] in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "RGB":
                raise ImageFormatError(f"{path}: expected a binary RGB PPM, got {im.format} {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as exc:
        # Pillow reports malformed headers and truncated payloads with all of these
        raise ImageFormatError(f"{path}: {exc}") from exc
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0))).save(path, format="PPM")


def write_pgm(path: PathLike, grid: np.ndarray) -> None:
    """Single-channel map -> binary PGM, scaled so the map maximum becomes 255."""
    grid = np.asarray(grid, dtype=np.float64).reshape(grid.shape[-2:])
    peak = grid.max()
    scaled = grid / peak * 255.0 if peak > 0 else np.zeros_like(grid)
    arr = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.uint8)


# ---------------------------------------------------------------------------
# Scenes on disk
# ---------------------------------------------------------------------------


def save_scene(scene: Scene, stem: PathLike) -> None:
    stem = Path(stem)
    write_ppm(stem.with_suffix(".ppm"), scene.image)
    save_annotations(scene, stem.with_suffix(".txt"))


def load_scene(stem: PathLike) -> Scene:
    stem = Path(stem)
    H, W, points = load_annotations(stem.with_suffix(".txt"))
    image = read_ppm(stem.with_suffix(".ppm"))
    if image.shape[1:] != (H, W):
        raise ImageFormatError(f"{stem}: image is {image.shape[1:]}, annotation says {(H, W)}")
    try:
        return Scene(image, points)
    except ValueError as exc:
        raise ImageFormatError(f"{stem}: {exc}") from exc


def load_dataset(directory: PathLike) -> list[Scene]:
    """Every ``*.txt`` annotation in ``directory`` with its image, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    stems = sorted(p.with_suffix("") for p in directory.glob("*.txt"))
    if not stems:
        raise DataError(f"{directory}: no annotation files")
    return [load_scene(s) for s in stems]
