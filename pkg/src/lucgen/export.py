"""Raster and table exports: binary PPM heatmaps and the embeddings CSV.

Rasters are drawn north-up: image row 0 is the northern edge of the
central square, so grid row ``n - 1`` (rows run south to north) comes
first.  Every grid cell becomes an ``s x s`` block of pixels.

Channel heatmaps are grayscale with darker meaning more POIs: a cell with
count ``v`` in a channel whose maximum is ``vmax`` gets intensity
``round(255 * (1 - v / vmax))``; an all-zero channel is white.

Merged maps colour each cell by its dominant category using ``PALETTE``
(index = category code) and white for empty cells.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DomainError
from .landuse import EMPTY, merge_dominant
from .numerics import SeededRng

WHITE = (255, 255, 255)

# one fixed colour per POI category code 0..19
PALETTE = (
    (230, 25, 75),    # 0
    (60, 180, 75),    # 1
    (255, 225, 25),   # 2
    (0, 130, 200),    # 3
    (245, 130, 48),   # 4
    (145, 30, 180),   # 5
    (70, 240, 240),   # 6
    (240, 50, 230),   # 7
    (210, 245, 60),   # 8
    (250, 190, 212),  # 9
    (0, 128, 128),    # 10
    (220, 190, 255),  # 11
    (170, 110, 40),   # 12
    (255, 250, 200),  # 13
    (128, 0, 0),      # 14
    (170, 255, 195),  # 15
    (128, 128, 0),    # 16
    (255, 215, 180),  # 17
    (0, 0, 128),      # 18
    (128, 128, 128),  # 19
)


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DomainError("PPM data must be an (H, W, 3) uint8 array")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise DomainError(f"{path} is not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3)
    return pixels.reshape(h, w, 3)


def _upscale(grid, s: int) -> np.ndarray:
    if s < 1:
        raise DomainError("scale s must be >= 1")
    north_up = grid[::-1]
    return np.repeat(np.repeat(north_up, s, axis=0), s, axis=1)


def channel_raster(channel, s: int = 10) -> np.ndarray:
    channel = np.asarray(channel, dtype=np.float64)
    vmax = channel.max() if channel.size else 0.0
    if vmax > 0:
        gray = np.rint(255.0 * (1.0 - np.clip(channel, 0.0, None) / vmax)).astype(np.uint8)
    else:
        gray = np.full(channel.shape, 255, dtype=np.uint8)
    img = _upscale(gray, s)
    return np.repeat(img[:, :, None], 3, axis=2)


def merged_raster(dominant, s: int = 10) -> np.ndarray:
    dominant = np.asarray(dominant, dtype=np.int64)
    lut = np.array(PALETTE + (WHITE,), dtype=np.uint8)
    if np.any((dominant != EMPTY) & ((dominant < 0) | (dominant >= len(PALETTE)))):
        raise DomainError(f"category codes must lie in 0..{len(PALETTE) - 1} or be {EMPTY}")
    idx = np.where(dominant == EMPTY, len(PALETTE), dominant)
    return _upscale(lut[idx], s)


def export_heatmap(config, s: int, directory, ident: str) -> list[str]:
    """Write ``channel_<id>_<c>.ppm`` for every channel and ``merged_<id>.ppm``."""
    config = np.asarray(config, dtype=np.float64)
    paths = []
    for c in range(config.shape[0]):
        path = f"{directory}/channel_{ident}_{c}.ppm"
        write_ppm(path, channel_raster(config[c], s))
        paths.append(path)
    path = f"{directory}/merged_{ident}.ppm"
    write_ppm(path, merged_raster(merge_dominant(config), s))
    paths.append(path)
    return paths


def sample_per_label(labels, per_label: int, seed: int) -> np.ndarray:
    """Indices of at most ``per_label`` rows of each label, in original order."""
    labels = np.asarray(labels)
    rng = SeededRng(seed, "embedding-sample")
    keep = []
    for lab in sorted(set(labels.tolist())):
        idx = np.nonzero(labels == lab)[0]
        if len(idx) > per_label:
            idx = rng.choice(idx, size=per_label, replace=False)
        keep.append(idx)
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def export_embeddings(path, ids, Z, labels, per_label: int | None = 500, seed: int = 0) -> int:
    """Write ``community_id,label,z0..z{d-1}``; returns the number of rows."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = list(labels)
    rows = np.arange(len(ids)) if per_label is None else sample_per_label(labels, per_label, seed)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["community_id", "label", *(f"z{k}" for k in range(Z.shape[1]))])
        for i in rows:
            writer.writerow([ids[i], labels[i], *(repr(float(v)) for v in Z[i])])
    return len(rows)


def read_embeddings(path):
    ids, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            rows.append([float(v) for v in row[2:]])
    return ids, labels, np.array(rows).reshape(len(ids), len(header) - 2)
