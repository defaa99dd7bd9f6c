"""Annotated crowd images to training and evaluation arrays.

Images are handled as ``uint8`` arrays of shape (3, H, W); density maps as
float64 arrays of shape (H, W). Dot coordinates are ``(x, y)`` in pixel units
with pixel ``(row i, col j)`` covering ``[j, j+1) x [i, i+1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .autograd import ContractViolation
from .kernels import interp_matrix

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_SIGMA = 4.0
TRUNCATE = 4.0  # Gaussian support radius, in sigmas
MAX_DIM = 1920


@dataclass
class DotAnnotations:
    points: np.ndarray  # (K, 2) float64 columns x, y
    image_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 2) if pts.size else np.zeros((0, 2))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def count(self) -> int:
        return len(self.points)

    def check_inside(self, height: int, width: int) -> None:
        x, y = self.points[:, 0], self.points[:, 1]
        bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
        if bad.any():
            i = int(np.argmax(bad))
            raise ContractViolation(
                f"{self.image_id or 'annotation'}: dot ({x[i]}, {y[i]}) lies outside the {width}x{height} image")


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # uint8 (3, H, W)
    dots: DotAnnotations
    density: np.ndarray = field(repr=False)  # (H, W)


# ---------------------------------------------------------------- file formats

def read_image(path) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5) file as uint8 (3, H, W)."""
    with Image.open(path) as im:
        if im.format != "PPM":
            raise ContractViolation(f"{path}: expected binary PPM/PGM, got {im.format}")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
            return np.repeat(arr[None], 3, axis=0)
        if im.mode != "RGB":
            raise ContractViolation(f"{path}: unsupported pixel mode {im.mode}")
        return np.ascontiguousarray(np.asarray(im, dtype=np.uint8).transpose(2, 0, 1))


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        Image.fromarray(image, mode="L").save(path, format="PPM")
    else:
        Image.fromarray(np.ascontiguousarray(image.transpose(1, 2, 0)), mode="RGB").save(path, format="PPM")


def read_annotations(path, image_id: str | None = None) -> DotAnnotations:
    """Lines ``x,y`` in decimal pixels; ``#`` starts a comment."""
    points = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ContractViolation(f"{path}:{lineno}: expected 'x,y', got {raw!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ContractViolation(f"{path}:{lineno}: bad coordinate in {raw!r}") from exc
    return DotAnnotations(np.array(points), image_id if image_id is not None else Path(path).stem)


def write_annotations(path, dots: DotAnnotations) -> None:
    lines = [f"# {dots.image_id}"] + [f"{float(x)!r},{float(y)!r}" for x, y in dots.points]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[Path, Path]]:
    """Pairs of (image, annotation) paths; relative entries resolve against the manifest's folder."""
    path = Path(path)
    root = path.parent
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ContractViolation(f"{path}:{lineno}: expected 'image annotation', got {raw!r}")
        pairs.append(tuple(p if Path(p).is_absolute() else root / p for p in map(Path, parts)))
    return pairs


def write_manifest(path, pairs: Sequence[tuple]) -> None:
    Path(path).write_text("".join(f"{img} {ann}\n" for img, ann in pairs))


def write_dmap(path, density: np.ndarray) -> None:
    """``DMAP v1 H W`` header line, then row-major little-endian float32 values."""
    density = np.asarray(density)
    h, w = density.shape
    with open(path, "wb") as fh:
        fh.write(f"DMAP v1 {h} {w}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(density, dtype="<f4").tobytes())


def read_dmap(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    end = blob.index(b"\n")
    magic, version, h, w = blob[:end].decode("ascii").split()
    if (magic, version) != ("DMAP", "v1"):
        raise ContractViolation(f"{path}: not a DMAP v1 file")
    h, w = int(h), int(w)
    payload = blob[end + 1:]
    if len(payload) != 4 * h * w:
        raise ContractViolation(f"{path}: payload holds {len(payload)} bytes, expected {4 * h * w}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)


def write_heatmap(path, density: np.ndarray) -> None:
    """8-bit PGM scaled so the map's maximum is 255."""
    density = np.asarray(density, dtype=np.float64)
    peak = density.max() if density.size else 0.0
    scaled = np.zeros_like(density) if peak <= 0 else density / peak * 255.0
    write_image(path, np.clip(np.rint(scaled), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------- transforms

def render_density(dots: DotAnnotations, height: int, width: int, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Sum of unit-mass 2-D Gaussians centred on the dots, sampled at pixel centres.

    Each Gaussian is cut off ``TRUNCATE * sigma`` from its centre and at the
    image border, so boundary dots contribute less than one.
    """
    if sigma <= 0:
        raise ContractViolation(f"sigma must be positive, got {sigma}")
    dots.check_inside(height, width)
    out = np.zeros((height, width))
    radius = TRUNCATE * sigma
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * sigma)
    for x, y in dots.points:
        j0 = max(0, math.ceil(x - radius - 0.5))
        j1 = min(width, math.floor(x + radius - 0.5) + 1)
        i0 = max(0, math.ceil(y - radius - 0.5))
        i1 = min(height, math.floor(y + radius - 0.5) + 1)
        gx = norm * np.exp(-0.5 * ((np.arange(j0, j1) + 0.5 - x) / sigma) ** 2)
        gy = norm * np.exp(-0.5 * ((np.arange(i0, i1) + 0.5 - y) / sigma) ** 2)
        out[i0:i1, j0:j1] += np.outer(gy, gx)
    return out


def _resample_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Two-tap linear resampling along one axis, same weights as ``interp_matrix``."""
    mat = interp_matrix(arr.shape[axis], n_out)
    i0 = np.argmax(mat > 0, axis=1)
    i1 = np.minimum(i0 + 1, arr.shape[axis] - 1)
    w1 = np.where(i1 != i0, mat[np.arange(n_out), i1], 0.0)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    w1 = w1.reshape(shape)
    return (1.0 - w1) * np.take(arr, i0, axis=axis) + w1 * np.take(arr, i1, axis=axis)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear (align_corners=False) resize of a (C, H, W) array; uint8 in, uint8 out."""
    src = np.asarray(image, dtype=np.float64)
    out = _resample_axis(_resample_axis(src, height, axis=1), width, axis=2)
    if np.asarray(image).dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def resize_cap(image: np.ndarray, dots: DotAnnotations, max_dim: int = MAX_DIM) -> tuple[np.ndarray, DotAnnotations]:
    """Shrink so the longer side is at most ``max_dim``, keeping the aspect ratio."""
    _, h, w = image.shape
    if max(h, w) <= max_dim:
        return image, dots
    factor = max_dim / max(h, w)
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    # per-axis factors equal `factor` up to rounding and keep dots inside the new grid
    pts = dots.points * np.array([nw / w, nh / h])
    return resize_bilinear(image, nh, nw), DotAnnotations(pts, dots.image_id)


def normalize(image: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation(f"normalize: expected (3, H, W) RGB, got shape {image.shape}")
    mean = np.asarray(mean, dtype=np.float64)[:, None, None]
    std = np.asarray(std, dtype=np.float64)[:, None, None]
    return (image.astype(np.float64) / 255.0 - mean) / std


def denormalize(tensor: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)[:, None, None]
    std = np.asarray(std, dtype=np.float64)[:, None, None]
    return (np.asarray(tensor) * std + mean) * 255.0


def _reflect_pad(arr: np.ndarray, bottom: int, right: int) -> np.ndarray:
    """Pad the last two axes at the bottom/right by reflection (edge copy for 1-pixel axes)."""
    if not bottom and not right:
        return arr
    widths = [(0, 0)] * (arr.ndim - 2) + [(0, bottom), (0, right)]
    mode = "reflect" if min(arr.shape[-2:]) > 1 else "edge"
    return np.pad(arr, widths, mode=mode)


def pad_to_fit(image: np.ndarray, density: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    _, h, w = image.shape
    bottom, right = max(0, size - h), max(0, size - w)
    return _reflect_pad(image, bottom, right), _reflect_pad(density, bottom, right)


@dataclass
class Crop:
    image: np.ndarray
    density: np.ndarray
    top: int
    left: int


def crop_offsets(height: int, width: int, size: int, count: int, seed: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1)))
            for _ in range(count)]


def sample_crops(image: np.ndarray, density: np.ndarray, size: int, count: int, seed: int) -> list[Crop]:
    """``count`` square crops at uniform offsets; images smaller than ``size`` are reflect-padded first."""
    image, density = pad_to_fit(image, density, size)
    _, h, w = image.shape
    return [Crop(image[:, t:t + size, l:l + size], density[t:t + size, l:l + size], t, l)
            for t, l in crop_offsets(h, w, size, count, seed)]


def crop_dots(dots: DotAnnotations, top: int, left: int, size: int) -> DotAnnotations:
    """Dots falling inside the crop, shifted into crop coordinates."""
    x, y = dots.points[:, 0], dots.points[:, 1]
    inside = (x >= left) & (x < left + size) & (y >= top) & (y < top + size)
    return DotAnnotations(dots.points[inside] - np.array([left, top]), dots.image_id)


# ---------------------------------------------------------------- datasets

def load_sample(image_path, annotation_path, sigma: float = DEFAULT_SIGMA, max_dim: int = MAX_DIM) -> Sample:
    image_id = Path(image_path).stem
    image = read_image(image_path)
    dots = read_annotations(annotation_path, image_id)
    dots.check_inside(image.shape[1], image.shape[2])
    image, dots = resize_cap(image, dots, max_dim)
    density = render_density(dots, image.shape[1], image.shape[2], sigma)
    return Sample(image_id, image, dots, density)


def load_dataset(manifest, sigma: float = DEFAULT_SIGMA, max_dim: int = MAX_DIM) -> list[Sample]:
    pairs = read_manifest(manifest)
    if not pairs:
        raise ContractViolation(f"{manifest}: manifest lists no images")
    for img, ann in pairs:
        for p in (img, ann):
            if not Path(p).is_file():
                raise FileNotFoundError(f"{manifest}: missing file {p}")
    return [load_sample(img, ann, sigma, max_dim) for img, ann in pairs]


# ---------------------------------------------------------------- tiled inference

@dataclass
class TilePrediction:
    count: float
    density: np.ndarray
    tiles: list[tuple[int, int, int, int]]  # (top, left, height, width)
    tile_counts: list[float]


def tile_predict(model, image: np.ndarray, tile: int) -> TilePrediction:
    """Predict a normalized (3, H, W) image tile by tile and stitch the maps.

    Tiles do not overlap. A tile whose sides are not multiples of 8 is
    reflect-padded on the bottom/right, predicted, then trimmed back.
    """
    from .metrics import count_of

    if tile < 8 or tile % 8:
        raise ContractViolation(f"tile size must be a positive multiple of 8, got {tile}")
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    stitched = np.zeros((h, w))
    tiles, counts = [], []
    for top in range(0, h, tile):
        for left in range(0, w, tile):
            part = image[:, top:top + tile, left:left + tile]
            th, tw = part.shape[1:]
            padded = _reflect_pad(part, (-th) % 8, (-tw) % 8)
            pred = model.predict(np.ascontiguousarray(padded))[:th, :tw]
            stitched[top:top + th, left:left + tw] = pred
            tiles.append((top, left, th, tw))
            counts.append(count_of(pred))
    return TilePrediction(math.fsum(counts), stitched, tiles, counts)
