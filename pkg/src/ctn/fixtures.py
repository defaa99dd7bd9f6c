"""Synthetic crowd images for smoke runs and tests.

Each "head" is a bright Gaussian blob on a dim textured background, so the
image itself carries the density signal.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DotAnnotations, write_annotations, write_image, write_manifest


def synthetic_image(size: int, n_dots: int, rng: np.random.Generator, margin: float = 16.0,
                    blob_sigma: float = 1.5) -> tuple[np.ndarray, DotAnnotations]:
    pts = rng.uniform(margin, size - margin, size=(n_dots, 2))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    canvas = np.zeros((size, size))
    for x, y in pts:
        canvas += np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * blob_sigma**2))
    canvas = np.clip(canvas, 0.0, 1.0)
    background = 30.0 + 10.0 * rng.random((3, size, size))
    tint = np.array([220.0, 200.0, 180.0])[:, None, None]
    image = background * (1 - canvas) + tint * canvas
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), DotAnnotations(pts)


def write_fixture(out_dir, n_images: int = 2, size: int = 64, n_dots: int = 20, seed: int = 0) -> Path:
    """Write ``n_images`` PPM/annotation pairs plus ``manifest.txt``; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_images):
        image, dots = synthetic_image(size, n_dots, rng)
        dots.image_id = f"img{i:03d}"
        write_image(out / f"{dots.image_id}.ppm", image)
        write_annotations(out / f"{dots.image_id}.txt", dots)
        pairs.append((f"{dots.image_id}.ppm", f"{dots.image_id}.txt"))
    manifest = out / "manifest.txt"
    write_manifest(manifest, pairs)
    return manifest
