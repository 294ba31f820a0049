"""Land-use configuration tensors and the check-in/diversity quality score.

A configuration is an ``(m, n, n)`` array: channel ``c`` counts POIs of
category ``c`` in each cell of the central square.  Rows run south to
north and columns west to east, matching :func:`geodata.grid_cells_many`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError
from .geodata import NUM_CATEGORIES, AreaFrame, CityData, CityIndex, Table, grid_cells_many, \
    locate_many, make_frame

EMPTY = -1
Q_THRESHOLD = 0.5


class QualityLabel(str, Enum):
    EXCELLENT = "excellent"
    TERRIBLE = "terrible"


@dataclass(frozen=True)
class QualityScore:
    freq: float
    div: float
    Q: float

    @property
    def label(self) -> QualityLabel:
        return label(self.Q)


def build_config(pois: Table, frame: AreaFrame, n: int = 10, m: int = NUM_CATEGORIES) -> np.ndarray:
    """Count POIs per category and grid cell; POIs outside the central square are ignored."""
    row, col, inside = grid_cells_many(pois["lat"], pois["lon"], frame, n)
    config = np.zeros((m, n, n), dtype=np.float64)
    cat = pois["category"][inside]
    np.add.at(config, (cat, row[inside], col[inside]), 1.0)
    return config


def _check_config(config):
    config = np.asarray(config, dtype=np.float64)
    if config.ndim != 3 or config.shape[1] != config.shape[2]:
        raise DomainError(f"configuration must have shape (m, n, n), got {config.shape}")
    if not np.all(np.isfinite(config)) or np.any(config < 0):
        raise DomainError("configuration entries must be finite and non-negative")
    return config


def diversity(config) -> float:
    """Shannon entropy of the per-category totals divided by ``ln m``."""
    config = _check_config(config)
    m = config.shape[0]
    totals = config.sum(axis=(1, 2))
    grand = totals.sum()
    if grand <= 0 or m < 2:
        return 0.0
    p = totals / grand
    p = p[p > 0]      # a positive total can still underflow to p == 0
    h = float(-(p * np.log(p)).sum() / math.log(m))
    return min(1.0, max(0.0, h))


def checkin_count(checkins: Table, frame: AreaFrame) -> int:
    return int((locate_many(checkins["lat"], checkins["lon"], frame) == 0).sum())


@dataclass(frozen=True)
class CheckinStats:
    """Corpus minimum and maximum of central-area check-in counts."""

    low: float
    high: float

    @classmethod
    def from_counts(cls, counts) -> "CheckinStats":
        counts = np.asarray(counts, dtype=np.float64)
        return cls(float(counts.min()), float(counts.max()))

    def normalize(self, count) -> float:
        if self.high <= self.low:
            return 0.5
        return float(np.clip((count - self.low) / (self.high - self.low), 0.0, 1.0))


def checkin_frequency(checkins: Table, frame: AreaFrame, stats: CheckinStats) -> float:
    return stats.normalize(checkin_count(checkins, frame))


def quality(freq: float, div: float) -> QualityScore:
    """Harmonic mean of frequency and diversity, 0 when both are 0."""
    if not (0.0 <= freq <= 1.0 and 0.0 <= div <= 1.0):
        raise DomainError(f"freq and div must lie in [0, 1], got {freq}, {div}")
    s = freq + div
    q = 2.0 * freq * div / s if s > 0 else 0.0
    return QualityScore(float(freq), float(div), float(q))


def label(q: float) -> QualityLabel:
    return QualityLabel.EXCELLENT if q > Q_THRESHOLD else QualityLabel.TERRIBLE


def merge_dominant(config) -> np.ndarray:
    """Per-cell dominant category (lowest code on ties), ``EMPTY`` for empty cells."""
    config = _check_config(config)
    dom = np.argmax(config, axis=0)
    return np.where(config.sum(axis=0) > 0, dom, EMPTY).astype(np.int64)


def poi_proportions(config) -> np.ndarray:
    config = _check_config(config)
    totals = config.sum(axis=(1, 2))
    grand = totals.sum()
    return totals / grand if grand > 0 else np.zeros_like(totals)


@dataclass
class LabeledCorpus:
    ids: list
    configs: np.ndarray      # (N, m, n, n)
    counts: np.ndarray       # central-area check-ins
    scores: list             # QualityScore per community

    @property
    def labels(self) -> list:
        return [s.label.value for s in self.scores]

    def mask(self, which: QualityLabel) -> np.ndarray:
        return np.array([s.label == which for s in self.scores], dtype=bool)


def label_communities(city: CityData, side: float = 1000.0, n: int = 10,
                      m: int = NUM_CATEGORIES, index: CityIndex | None = None) -> LabeledCorpus:
    """Build every community's configuration and label it by Q."""
    index = index or CityIndex(city)
    ids, configs, counts = [], [], []
    for site in index.sites():
        frame = make_frame(site, side)
        configs.append(build_config(index.local("pois", frame), frame, n, m))
        counts.append(checkin_count(index.local("checkins", frame), frame))
        ids.append(site.id)
    configs = np.array(configs).reshape(len(ids), m, n, n)
    counts = np.asarray(counts, dtype=np.float64)
    scores = []
    if len(ids):
        stats = CheckinStats.from_counts(counts)
        scores = [quality(stats.normalize(c), diversity(cfg)) for c, cfg in zip(counts, configs)]
    return LabeledCorpus(ids, configs, counts, scores)


def write_config_csv(path, config, round_values: bool = True) -> None:
    """Sparse export ``channel,row,col,value``; zero entries are omitted."""
    config = _check_config(config)
    values = np.rint(config) if round_values else config
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel", "row", "col", "value"])
        for c, r, k in zip(*np.nonzero(values)):
            v = values[c, r, k]
            writer.writerow([int(c), int(r), int(k), str(int(v)) if round_values else repr(float(v))])


def read_config_csv(path, m: int = NUM_CATEGORIES, n: int = 10) -> np.ndarray:
    config = np.zeros((m, n, n))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["channel", "row", "col", "value"]:
            raise DomainError(f"{path}: unexpected header {header}")
        for c, r, k, v in reader:
            config[int(c), int(r), int(k)] = float(v)
    return config
