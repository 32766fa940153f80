"""Synthetic crowd images: dark Gaussian blobs on a noisy light background."""

import os

import numpy as np

from .ingest import save_annotations, save_image

__all__ = ["place_people", "render_crowd", "synthesize"]

BACKGROUND = 180.0
NOISE_SIGMA = 6.0
BLOB_DEPTH = 110.0
BLOB_SIGMA = 2.5
# minimum spacing between people, as a fraction of the mean spacing sqrt(area / n)
SPACING_FACTOR = 0.85
_MAX_REJECTS = 200


def place_people(n, width, height, rng, spacing_factor=SPACING_FACTOR):
    """Dart-throw ``n`` points with a minimum toroidal separation.

    People do not overlap, so points closer than the separation are rejected.
    Distances wrap around the image edges, which keeps the density flat right
    up to the border. After repeated rejections the separation shrinks by 5%,
    so the loop always terminates.
    """
    size = np.array([width, height], dtype=float)
    dist = spacing_factor * np.sqrt(width * height / max(n, 1))
    points = np.empty((0, 2))
    rejects = 0
    while len(points) < n:
        cand = np.array([rng.uniform(0, width), rng.uniform(0, height)])
        delta = np.abs(points - cand)
        delta = np.minimum(delta, size - delta)
        if not len(points) or (delta ** 2).sum(axis=1).min() >= dist * dist:
            points = np.vstack([points, cand])
            rejects = 0
        else:
            rejects += 1
            if rejects > _MAX_REJECTS:
                dist *= 0.95
                rejects = 0
    # uniform() can round up to the bound itself
    return np.minimum(points, np.nextafter(size, 0))


def render_crowd(points, width, height, rng):
    """Gray image with one blob centred on every ``(x, y)`` point."""
    img = np.full((height, width), BACKGROUND) + rng.normal(0.0, NOISE_SIGMA, (height, width))
    radius = int(np.ceil(3 * BLOB_SIGMA))
    for x, y in points:
        cx, cy = int(x), int(y)
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, width)
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, height)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (xx + 0.5 - x) ** 2 + (yy + 0.5 - y) ** 2
        img[y0:y1, x0:x1] -= BLOB_DEPTH * np.exp(-d2 / (2 * BLOB_SIGMA ** 2))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synthesize(out_dir, n_images, count_range=(10, 200), dims=(300, 300), seed=0):
    """Write ``img_XXX.pgm`` / ``img_XXX.csv`` pairs; returns the image ids.

    Person counts are uniform on the inclusive ``count_range``; positions come
    from :func:`place_people`. Output is a pure function of the arguments.
    """
    lo, hi = count_range
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid count range {count_range}")
    if n_images < 1:
        raise ValueError("n_images must be positive")
    width, height = dims
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_images):
        image_id = f"img_{i:03d}"
        n = int(rng.integers(lo, hi + 1))
        points = place_people(n, width, height, rng)
        img = render_crowd(points, width, height, rng)
        save_image(img, os.path.join(out_dir, image_id + ".pgm"))
        save_annotations(points, os.path.join(out_dir, image_id + ".csv"))
        ids.append(image_id)
    return ids
