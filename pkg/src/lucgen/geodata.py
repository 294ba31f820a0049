"""Geographic data model: records, CSV tables, area framing and a synthetic city.

An *area frame* is the 3x3 block of equal ``L`` metre squares centred on a
residential community.  The middle square is the area to plan; the eight
around it are its contexts, numbered row by row from the north-west::

    C1 C2 C3
    C4 ** C5
    C6 C7 C8

Coordinates are projected to local metres with an equirectangular
projection about the frame centre (x grows east, y grows north).  Every
cell is half-open, ``[a, b)`` on both axes, so each point falls in exactly
one region.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime
from enum import IntEnum
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .errors import DomainError, IngestionError, UnsupportedRegionError
from .numerics import SeededRng

NUM_CATEGORIES = 20

CATEGORY_NAMES = (
    "road", "car service", "car repair", "motorbike service", "food service",
    "shopping", "daily life service", "recreation service", "medical service", "lodging",
    "tourist attraction", "real estate", "government place", "education", "transportation",
    "finance", "company", "road furniture", "specific address", "public service",
)

# metres per degree of latitude on a sphere of mean Earth radius 6371.0088 km
METERS_PER_DEGREE = 6371008.8 * math.pi / 180.0

MAX_ABS_LATITUDE = 85.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise DomainError(f"invalid coordinate ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class PoiRecord:
    location: GeoPoint
    category: int


@dataclass(frozen=True)
class TripRecord:
    pickup: GeoPoint
    pickup_time: np.datetime64
    dropoff: GeoPoint
    dropoff_time: np.datetime64
    distance_m: float
    duration_s: float
    avg_kmh: float


@dataclass(frozen=True)
class FareRecord:
    boarding: GeoPoint
    boarding_time: np.datetime64
    alighting: GeoPoint
    alighting_time: np.datetime64
    balance: float


@dataclass(frozen=True)
class CheckInRecord:
    location: GeoPoint
    time: np.datetime64


@dataclass(frozen=True)
class PriceObservation:
    community_id: str
    month: int
    price: float


@dataclass(frozen=True)
class CommunitySite:
    id: str
    center: GeoPoint


# column name -> parser kind, in file order
SCHEMAS: dict[str, tuple[tuple[str, str], ...]] = {
    "pois": (("lat", "float"), ("lon", "float"), ("category", "int")),
    "trips": (("plat", "float"), ("plon", "float"), ("ptime", "time"),
              ("dlat", "float"), ("dlon", "float"), ("dtime", "time"),
              ("distance_m", "float"), ("duration_s", "float"), ("avg_kmh", "float")),
    "fares": (("blat", "float"), ("blon", "float"), ("btime", "time"),
              ("alat", "float"), ("alon", "float"), ("atime", "time"), ("balance", "float")),
    "checkins": (("lat", "float"), ("lon", "float"), ("time", "time")),
    "prices": (("community_id", "str"), ("month", "int"), ("price", "float")),
    "communities": (("id", "str"), ("lat", "float"), ("lon", "float")),
}

KINDS = tuple(SCHEMAS)

_LAT_LON = {"lat": "lon", "plat": "plon", "dlat": "dlon", "blat": "blon", "alat": "alon"}

_DTYPES = {"float": np.float64, "int": np.int64, "time": "datetime64[s]", "str": object}


class Table:
    """Column-oriented collection of records of one kind."""

    def __init__(self, kind: str, columns: dict[str, np.ndarray] | None = None):
        if kind not in SCHEMAS:
            raise DomainError(f"unknown record kind {kind!r}")
        self.kind = kind
        columns = columns or {}
        self.columns = {}
        for name, typ in SCHEMAS[kind]:
            values = columns.get(name, [])
            if typ == "str":
                arr = np.array([str(v) for v in values], dtype=object)
            else:
                arr = np.asarray(values, dtype=_DTYPES[typ])
            self.columns[name] = arr
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DomainError(f"{kind}: columns have unequal lengths {sorted(lengths)}")

    def __len__(self):
        return len(next(iter(self.columns.values())))

    def __getitem__(self, column: str) -> np.ndarray:
        return self.columns[column]

    def subset(self, index) -> "Table":
        return Table(self.kind, {k: v[index] for k, v in self.columns.items()})

    def records(self):
        c = self.columns
        for i in range(len(self)):
            if self.kind == "pois":
                yield PoiRecord(GeoPoint(c["lat"][i], c["lon"][i]), int(c["category"][i]))
            elif self.kind == "trips":
                yield TripRecord(GeoPoint(c["plat"][i], c["plon"][i]), c["ptime"][i],
                                 GeoPoint(c["dlat"][i], c["dlon"][i]), c["dtime"][i],
                                 float(c["distance_m"][i]), float(c["duration_s"][i]),
                                 float(c["avg_kmh"][i]))
            elif self.kind == "fares":
                yield FareRecord(GeoPoint(c["blat"][i], c["blon"][i]), c["btime"][i],
                                 GeoPoint(c["alat"][i], c["alon"][i]), c["atime"][i],
                                 float(c["balance"][i]))
            elif self.kind == "checkins":
                yield CheckInRecord(GeoPoint(c["lat"][i], c["lon"][i]), c["time"][i])
            elif self.kind == "prices":
                yield PriceObservation(c["community_id"][i], int(c["month"][i]),
                                       float(c["price"][i]))
            else:
                yield CommunitySite(c["id"][i], GeoPoint(c["lat"][i], c["lon"][i]))

    def __repr__(self):
        return f"Table({self.kind!r}, n={len(self)})"


def valid_mask(table: Table, m: int = NUM_CATEGORIES, t: int | None = None) -> np.ndarray:
    """Rows satisfying every record invariant of the table's kind."""
    c = table.columns
    ok = np.ones(len(table), dtype=bool)
    for name, typ in SCHEMAS[table.kind]:
        if typ == "float":
            ok &= np.isfinite(c[name])
        elif typ == "time":
            ok &= ~np.isnat(c[name])
    for lat, lon in _LAT_LON.items():
        if lat in c:
            ok &= (np.abs(np.nan_to_num(c[lat], nan=999.0)) <= 90.0)
            ok &= (np.abs(np.nan_to_num(c[lon], nan=999.0)) <= 180.0)
    if table.kind == "pois":
        ok &= (c["category"] >= 0) & (c["category"] < m)
    elif table.kind == "trips":
        ok &= (c["distance_m"] >= 0) & (c["duration_s"] > 0) & (c["dtime"] >= c["ptime"])
    elif table.kind == "fares":
        ok &= c["balance"] >= 0
    elif table.kind == "prices":
        ok &= (c["price"] > 0) & (c["month"] >= 0)
        if t is not None:
            ok &= c["month"] < t
    elif table.kind == "communities":
        seen = set()
        for i, ident in enumerate(c["id"]):
            if ident in seen:
                ok[i] = False
            seen.add(ident)
    return ok


class Ingested(NamedTuple):
    table: Table
    rejects: int


def _parse(value: str, typ: str):
    if typ == "float":
        return float(value)
    if typ == "int":
        return int(value)
    if typ == "time":
        return np.datetime64(datetime.fromisoformat(value.strip()).replace(tzinfo=None), "s")
    if not value:
        raise ValueError("empty string")
    return value


def ingest(path, kind: str, m: int = NUM_CATEGORIES, t: int | None = None) -> Ingested:
    """Read one of the six CSV schemas; malformed rows are skipped and counted."""
    if kind not in SCHEMAS:
        raise IngestionError(f"unknown schema {kind!r}")
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise IngestionError(f"{path}: file not found")
    schema = SCHEMAS[kind]
    expected = [name for name, _ in schema]
    rows = {name: [] for name in expected}
    rejects = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise IngestionError(
                f"{path}: line 1: header {header} does not match {kind} schema {expected}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(schema):
                rejects += 1
                continue
            try:
                parsed = [_parse(v, typ) for v, (_, typ) in zip(row, schema)]
            except (ValueError, TypeError):
                rejects += 1
                continue
            for (name, _), v in zip(schema, parsed):
                rows[name].append(v)
    table = Table(kind, rows)
    ok = valid_mask(table, m=m, t=t)
    rejects += int((~ok).sum())
    return Ingested(table.subset(ok), rejects)


def _fmt(value, typ):
    if typ == "float":
        return repr(float(value))
    if typ == "int":
        return str(int(value))
    if typ == "time":
        return str(np.datetime_as_string(value, unit="s"))
    return str(value)


def write_table(path, table: Table) -> None:
    schema = SCHEMAS[table.kind]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([name for name, _ in schema])
        cols = [(table[name], typ) for name, typ in schema]
        for i in range(len(table)):
            writer.writerow([_fmt(col[i], typ) for col, typ in cols])


class Region(IntEnum):
    OUTSIDE = -1
    CENTER = 0
    C1 = 1
    C2 = 2
    C3 = 3
    C4 = 4
    C5 = 5
    C6 = 6
    C7 = 7
    C8 = 8


# (row counted from the south, column counted from the west) -> region
_LAYOUT = np.array([[6, 7, 8],
                    [4, 0, 5],
                    [1, 2, 3]], dtype=np.int64)

CONTEXTS = tuple(range(1, 9))


@dataclass(frozen=True)
class AreaFrame:
    center: GeoPoint
    side: float = 1000.0
    # metres per degree at the centre
    m_per_deg_lat: float = METERS_PER_DEGREE
    m_per_deg_lon: float = METERS_PER_DEGREE
    boxes: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def area_km2(self) -> float:
        return (self.side / 1000.0) ** 2

    def to_local(self, lat, lon):
        x = (np.asarray(lon, dtype=np.float64) - self.center.lon) * self.m_per_deg_lon
        y = (np.asarray(lat, dtype=np.float64) - self.center.lat) * self.m_per_deg_lat
        return x, y

    def to_geo(self, x, y):
        lat = self.center.lat + np.asarray(y, dtype=np.float64) / self.m_per_deg_lat
        lon = self.center.lon + np.asarray(x, dtype=np.float64) / self.m_per_deg_lon
        return lat, lon


def make_frame(site, side: float = 1000.0) -> AreaFrame:
    """Frame the 3x3 block around a community (``CommunitySite`` or ``GeoPoint``)."""
    center = site.center if isinstance(site, CommunitySite) else site
    if side <= 0:
        raise DomainError("side length must be positive")
    if abs(center.lat) > MAX_ABS_LATITUDE:
        raise UnsupportedRegionError(
            f"latitude {center.lat} is too close to a pole for the local projection")
    m_lon = METERS_PER_DEGREE * math.cos(math.radians(center.lat))
    # the same edges locate_local compares against
    h = 0.5 * side
    edges = (-3 * h, -h, h, 3 * h)
    boxes = {}
    for rs in range(3):
        for col in range(3):
            boxes[Region(int(_LAYOUT[rs, col]))] = (edges[col], edges[col + 1],
                                                    edges[rs], edges[rs + 1])
    return AreaFrame(center, float(side), METERS_PER_DEGREE, m_lon, boxes)


def locate_local(x, y, side: float) -> np.ndarray:
    """Region codes for local coordinates (vectorised, -1 for outside)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h = 0.5 * side
    inside = (x >= -3 * h) & (x < 3 * h) & (y >= -3 * h) & (y < 3 * h)
    col = (x >= -h).astype(np.int64) + (x >= h)
    row = (y >= -h).astype(np.int64) + (y >= h)
    return np.where(inside, _LAYOUT[row, col], -1)


def locate_many(lat, lon, frame: AreaFrame) -> np.ndarray:
    x, y = frame.to_local(lat, lon)
    return locate_local(x, y, frame.side)


def locate(p: GeoPoint, frame: AreaFrame) -> Region:
    return Region(int(locate_many(p.lat, p.lon, frame)))


def grid_cells_many(lat, lon, frame: AreaFrame, n: int):
    """``(row, col, inside)`` arrays; row 0 is the southern edge, col 0 the western."""
    if n < 1:
        raise DomainError("grid resolution must be >= 1")
    x, y = frame.to_local(lat, lon)
    h = 0.5 * frame.side
    inside = (x >= -h) & (x < h) & (y >= -h) & (y < h)
    cell = frame.side / n
    col = np.clip(np.floor((x + h) / cell), 0, n - 1).astype(np.int64)
    row = np.clip(np.floor((y + h) / cell), 0, n - 1).astype(np.int64)
    return row, col, inside


def grid_cell(p: GeoPoint, frame: AreaFrame, n: int):
    row, col, inside = grid_cells_many(p.lat, p.lon, frame, n)
    if not bool(inside):
        return None
    return int(row), int(col)


def cell_center(frame: AreaFrame, n: int, row: int, col: int) -> GeoPoint:
    cell = frame.side / n
    x = -0.5 * frame.side + (col + 0.5) * cell
    y = -0.5 * frame.side + (row + 0.5) * cell
    lat, lon = frame.to_geo(x, y)
    return GeoPoint(float(lat), float(lon))


class PointIndex:
    """KD-tree over points, used to fetch candidates near a frame.

    The tree only narrows the search; membership is always decided by the
    frame's own projection.
    """

    def __init__(self, lat, lon):
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        self.ref_lat = float(np.mean(lat)) if len(lat) else 0.0
        self.m_lon = METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat))
        self.n = len(lat)
        pts = np.column_stack([lon * self.m_lon, lat * METERS_PER_DEGREE]) if self.n \
            else np.zeros((0, 2))
        self.tree = cKDTree(pts)

    def query_frame(self, frame: AreaFrame) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        ratio = self.m_lon / frame.m_per_deg_lon
        radius = 1.5 * frame.side * max(ratio, 1.0 / ratio) * 1.001 + 1.0
        q = (frame.center.lon * self.m_lon, frame.center.lat * METERS_PER_DEGREE)
        idx = self.tree.query_ball_point(q, radius, p=np.inf, return_sorted=True)
        return np.asarray(idx, dtype=np.int64)


@dataclass
class SynthConfig:
    communities: int = 500
    seed: int = 0
    excellent_fraction: float = 0.5
    side: float = 1000.0
    origin_lat: float = 39.90
    origin_lon: float = 116.40
    months: int = 6
    days: int = 7
    start_date: str = "2012-03-01"
    poi_rate_excellent: tuple = (180.0, 300.0)
    poi_rate_terrible: tuple = (30.0, 90.0)
    checkin_rate_excellent: tuple = (200.0, 320.0)
    checkin_rate_terrible: tuple = (15.0, 90.0)
    trips_excellent: float = 20.0
    trips_terrible: float = 6.0
    fares_excellent: float = 24.0
    fares_terrible: float = 8.0
    price_growth_excellent: float = 0.015
    price_growth_terrible: float = -0.002
    # Dirichlet concentration of each excellent cell's category mix around the profile
    poi_concentration: float = 60.0
    # log-normal spread of per-cell traffic multipliers
    traffic_spread: float = 0.3
    price_growth_spread: float = 0.004
    # smooth neighbourhood-character fields: correlation length (cells) and strength
    character_scale: float = 0.8
    character_strength: float = 1.5
    # relative category weights for well-planned areas
    profile_excellent: tuple = (0.5, 0.5, 0.5, 0.5, 4.0, 4.0, 4.0, 4.0, 2.0, 1.0,
                                1.0, 1.0, 1.0, 2.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0)
    # categories that dominate poorly planned areas
    terrible_pool: tuple = (0, 1, 2, 3, 14, 16, 17, 18)
    # share of terrible cells that are "quiet": a varied but sparse POI mix
    # with little check-in traffic (low frequency rather than low diversity)
    quiet_fraction: float = 0.4

    def __post_init__(self):
        if self.communities < 0 or self.days < 1 or self.months < 2:
            raise DomainError("communities >= 0, days >= 1 and months >= 2 required")
        if not 0.0 <= self.excellent_fraction <= 1.0:
            raise DomainError("excellent_fraction must lie in [0, 1]")
        if not 0.0 <= self.quiet_fraction <= 1.0:
            raise DomainError("quiet_fraction must lie in [0, 1]")
        if len(self.profile_excellent) != NUM_CATEGORIES:
            raise DomainError("profile_excellent needs one weight per category")


@dataclass
class CityData:
    communities: Table
    pois: Table
    trips: Table
    fares: Table
    checkins: Table
    prices: Table
    planted: dict = field(default_factory=dict)

    def tables(self) -> dict[str, Table]:
        return {"communities": self.communities, "pois": self.pois, "trips": self.trips,
                "fares": self.fares, "checkins": self.checkins, "prices": self.prices}


def _planted_labels(rng: SeededRng, side_cells: int, coords, fraction: float) -> np.ndarray:
    """Spatially clustered excellent/terrible split: top cells of a smooth random field."""
    n = len(coords)
    k = max(4, (side_cells * side_cells) // 12)
    centres = rng.uniform(-1, side_cells, size=(k, 2))
    weights = rng.normal(size=k)
    width = max(1.5, side_cells / 10.0)
    d2 = ((coords[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
    score = (weights[None, :] * np.exp(-d2 / (2 * width ** 2))).sum(1)
    score = score + 0.05 * rng.normal(size=n)
    order = np.argsort(-score, kind="stable")
    labels = np.zeros(n, dtype=bool)
    labels[order[:int(round(fraction * n))]] = True
    return labels


def _character_fields(rng: SeededRng, side_cells: int, rows, cols, k: int, scale: float):
    """``k`` unit-variance random fields over the lattice, Gaussian-smoothed at ``scale`` cells."""
    raw = rng.standard_normal((k, side_cells, side_cells))
    if scale > 0:
        raw = np.stack([gaussian_filter(f, scale, mode="nearest") for f in raw])
    raw = (raw - raw.mean(axis=(1, 2), keepdims=True)) / (raw.std(axis=(1, 2), keepdims=True) + 1e-12)
    return raw[:, rows, cols].T


def _scatter(rng: SeededRng, count: int, side: float, hotspots: np.ndarray, share: float):
    """Points in the square [-side/2, side/2)^2, a share of them around hotspots."""
    h = 0.5 * side
    pts = rng.uniform(-h, h, size=(count, 2))
    near = rng.random(count) < share
    if near.any() and len(hotspots):
        pick = rng.integers(0, len(hotspots), size=int(near.sum()))
        pts[near] = hotspots[pick] + rng.normal(scale=0.12 * side, size=(int(near.sum()), 2))
    return np.clip(pts, -h, np.nextafter(h, -np.inf))


def synth_city(cfg: SynthConfig) -> CityData:
    """Generate all six datasets for a grid city with planted quality labels.

    Communities sit at the centres of a square lattice of ``side``-metre
    cells, so each community's contexts are the squares of its neighbours.
    Excellent cells get many POIs spread over every category and heavy
    check-in traffic.  Terrible cells get light traffic and few POIs, either
    concentrated on two or three categories or, for the "quiet" share,
    spread over the excellent profile.
    """
    root = SeededRng(cfg.seed, "synth")
    n = cfg.communities
    side_cells = max(1, math.ceil(math.sqrt(n)))
    rows = np.arange(n) // side_cells
    cols = np.arange(n) % side_cells
    coords = np.column_stack([rows, cols]).astype(np.float64)
    excellent = _planted_labels(root.child("labels"), side_cells, coords, cfg.excellent_fraction) \
        if n else np.zeros(0, dtype=bool)

    L = cfg.side
    cos0 = math.cos(math.radians(cfg.origin_lat))
    lat_c = cfg.origin_lat + (rows - side_cells / 2.0) * L / METERS_PER_DEGREE
    lon_c = cfg.origin_lon + (cols - side_cells / 2.0) * L / (METERS_PER_DEGREE * cos0)
    ids = [f"c{i:05d}" for i in range(n)]
    frames = [make_frame(GeoPoint(float(a), float(b)), L) for a, b in zip(lat_c, lon_c)]
    cell_of = {(int(r), int(c)): i for i, (r, c) in enumerate(zip(rows, cols))}

    start = np.datetime64(cfg.start_date, "s")
    day_s = 86400
    profile = np.asarray(cfg.profile_excellent, dtype=np.float64)
    profile = profile / profile.sum()

    quiet = ~excellent & (root.child("flavour").random(n) < cfg.quiet_fraction)

    fields = _character_fields(root.child("character"), side_cells, rows, cols,
                               NUM_CATEGORIES + 3, cfg.character_scale)
    char = cfg.character_strength * fields

    r_hot = root.child("hotspots")
    hotspots = []
    for i in range(n):
        k = 3 if excellent[i] else 1
        hotspots.append(r_hot.uniform(-0.3 * L, 0.3 * L, size=(k, 2)))

    # POIs
    r_poi = root.child("pois")
    poi_lat, poi_lon, poi_cat = [], [], []
    for i in range(n):
        if excellent[i] or quiet[i]:
            rate = cfg.poi_rate_excellent if excellent[i] else cfg.poi_rate_terrible
            count = r_poi.poisson(r_poi.uniform(*rate))
            mix = profile * np.exp(char[i, :NUM_CATEGORIES])
            probs = r_poi.dirichlet(cfg.poi_concentration * mix / mix.sum())
        else:
            count = r_poi.poisson(r_poi.uniform(*cfg.poi_rate_terrible))
            k = int(r_poi.integers(2, 4))
            pool = np.asarray(cfg.terrible_pool)
            dom = pool[np.argsort(-char[i, pool], kind="stable")[:k]]
            probs = np.full(NUM_CATEGORIES, 0.15 / NUM_CATEGORIES)
            probs[dom] += 0.85 * r_poi.dirichlet(np.full(k, 4.0))
        cats = r_poi.choice(NUM_CATEGORIES, size=count, p=probs / probs.sum())
        pts = _scatter(r_poi, count, L, hotspots[i], 0.6 if excellent[i] else 0.5)
        la, lo = frames[i].to_geo(pts[:, 0], pts[:, 1])
        poi_lat.append(la)
        poi_lon.append(lo)
        poi_cat.append(cats)

    # check-ins
    r_chk = root.child("checkins")
    chk_lat, chk_lon, chk_time = [], [], []
    for i in range(n):
        rate = cfg.checkin_rate_excellent if excellent[i] else cfg.checkin_rate_terrible
        count = r_chk.poisson(r_chk.uniform(*rate))
        pts = _scatter(r_chk, count, L, hotspots[i], 0.5)
        la, lo = frames[i].to_geo(pts[:, 0], pts[:, 1])
        chk_lat.append(la)
        chk_lon.append(lo)
        chk_time.append(start + r_chk.integers(0, cfg.days * day_s, size=count).astype("timedelta64[s]"))

    # house prices
    r_price = root.child("prices")
    pr_id, pr_month, pr_price = [], [], []
    for i in range(n):
        base = r_price.uniform(20000.0, 60000.0) + (10000.0 if excellent[i] else 0.0)
        mu = cfg.price_growth_excellent if excellent[i] else cfg.price_growth_terrible
        growth = mu + cfg.price_growth_spread * (0.7 * fields[i, -1] + 0.7 * r_price.normal())
        noise = r_price.normal(0.0, 0.003, size=cfg.months)
        for month in range(cfg.months):
            pr_id.append(ids[i])
            pr_month.append(month)
            pr_price.append(round(float(base * (1 + growth) ** month * (1 + noise[month])), 2))

    def destination(rng, i):
        if rng.random() < 0.25:
            return i
        for _ in range(8):
            dr, dc = rng.integers(-3, 4, size=2)
            j = cell_of.get((int(rows[i] + dr), int(cols[i] + dc)))
            if j is not None and j != i:
                return j
        return i

    r_mult = root.child("traffic")
    trip_mult = np.exp(cfg.traffic_spread * (fields[:, -3] + 0.5 * r_mult.normal(size=n)))
    fare_mult = np.exp(cfg.traffic_spread * (fields[:, -2] + 0.5 * r_mult.normal(size=n)))

    # taxi trips
    r_trip = root.child("trips")
    trips = {name: [] for name, _ in SCHEMAS["trips"]}
    for i in range(n):
        count = r_trip.poisson(trip_mult[i] * (cfg.trips_excellent if excellent[i] else cfg.trips_terrible))
        for _ in range(count):
            j = destination(r_trip, i)
            ox, oy = r_trip.uniform(-L / 2, L / 2, size=2)
            dx, dy = r_trip.uniform(-L / 2, L / 2, size=2)
            plat, plon = frames[i].to_geo(ox, oy)
            dlat, dlon = frames[j].to_geo(dx, dy)
            gx, gy = frames[i].to_local(dlat, dlon)
            dist = round(float(np.hypot(gx - ox, gy - oy) * r_trip.uniform(1.2, 1.5) + 100.0), 1)
            speed = max(5.0, r_trip.normal(22.0, 4.0) if excellent[j] or excellent[i]
                        else r_trip.normal(32.0, 5.0))
            duration = max(1.0, round(dist / (speed / 3.6)))
            t0 = start + np.timedelta64(int(r_trip.integers(0, cfg.days)) * day_s
                                        + int(r_trip.integers(6 * 3600, 23 * 3600)), "s")
            trips["plat"].append(float(plat))
            trips["plon"].append(float(plon))
            trips["ptime"].append(t0)
            trips["dlat"].append(float(dlat))
            trips["dlon"].append(float(dlon))
            trips["dtime"].append(t0 + np.timedelta64(int(duration), "s"))
            trips["distance_m"].append(dist)
            trips["duration_s"].append(float(duration))
            trips["avg_kmh"].append(round(dist / duration * 3.6, 3))

    # bus fares between fixed stops
    r_fare = root.child("fares")
    stops = []
    for i in range(n):
        k = int(r_fare.integers(3, 7)) if excellent[i] else int(r_fare.integers(1, 3))
        xy = r_fare.uniform(-0.45 * L, 0.45 * L, size=(k, 2))
        la, lo = frames[i].to_geo(xy[:, 0], xy[:, 1])
        stops.append(np.column_stack([np.round(la, 5), np.round(lo, 5)]))
    fares = {name: [] for name, _ in SCHEMAS["fares"]}
    for i in range(n):
        count = r_fare.poisson(fare_mult[i] * (cfg.fares_excellent if excellent[i] else cfg.fares_terrible))
        for _ in range(count):
            j = destination(r_fare, i)
            b = stops[i][r_fare.integers(0, len(stops[i]))]
            a = stops[j][r_fare.integers(0, len(stops[j]))]
            t0 = start + np.timedelta64(int(r_fare.integers(0, cfg.days)) * day_s
                                        + int(r_fare.integers(6 * 3600, 23 * 3600)), "s")
            balance = r_fare.uniform(20.0, 100.0) if excellent[i] else r_fare.uniform(2.0, 40.0)
            fares["blat"].append(float(b[0]))
            fares["blon"].append(float(b[1]))
            fares["btime"].append(t0)
            fares["alat"].append(float(a[0]))
            fares["alon"].append(float(a[1]))
            fares["atime"].append(t0 + np.timedelta64(int(r_fare.integers(300, 3600)), "s"))
            fares["balance"].append(round(float(balance), 2))

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return CityData(
        communities=Table("communities", {"id": ids, "lat": lat_c, "lon": lon_c}),
        pois=Table("pois", {"lat": cat(poi_lat, np.float64), "lon": cat(poi_lon, np.float64),
                            "category": cat(poi_cat, np.int64)}),
        trips=Table("trips", trips),
        fares=Table("fares", fares),
        checkins=Table("checkins", {"lat": cat(chk_lat, np.float64),
                                    "lon": cat(chk_lon, np.float64),
                                    "time": cat(chk_time, "datetime64[s]")}),
        prices=Table("prices", {"community_id": pr_id, "month": pr_month, "price": pr_price}),
        planted={ident: ("excellent" if e else "terrible") for ident, e in zip(ids, excellent)},
    )


DATA_FILES = {kind: f"{kind}.csv" for kind in KINDS}


def write_city(city: CityData, directory) -> dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for kind, table in city.tables().items():
        paths[kind] = os.path.join(directory, DATA_FILES[kind])
        write_table(paths[kind], table)
    with open(os.path.join(directory, "planted.csv"), "w", newline="", encoding="utf-8") as fh:
        fh.write("community_id,label\n")
        for ident, label in city.planted.items():
            fh.write(f"{ident},{label}\n")
    return paths


def load_city(paths: dict[str, str], m: int = NUM_CATEGORIES, t: int | None = None):
    """Ingest all six datasets; returns the city and per-kind reject counts."""
    tables, rejects = {}, {}
    for kind in KINDS:
        got = ingest(paths[kind], kind, m=m, t=t)
        tables[kind] = got.table
        rejects[kind] = got.rejects
    return CityData(**tables), rejects


_ENDPOINTS = {
    "pois": (("lat", "lon"),),
    "checkins": (("lat", "lon"),),
    "communities": (("lat", "lon"),),
    "trips": (("plat", "plon"), ("dlat", "dlon")),
    "fares": (("blat", "blon"), ("alat", "alon")),
}


class CityIndex:
    """Spatial indexes over every point-bearing table of a city."""

    def __init__(self, city: CityData):
        self.city = city
        self._trees = {}
        for kind, ends in _ENDPOINTS.items():
            table = getattr(city, kind)
            self._trees[kind] = [PointIndex(table[a], table[b]) for a, b in ends]

    def candidates(self, kind: str, frame: AreaFrame) -> np.ndarray:
        """Rows of ``kind`` with at least one endpoint possibly inside the frame."""
        parts = [tree.query_frame(frame) for tree in self._trees[kind]]
        return parts[0] if len(parts) == 1 else np.union1d(*parts)

    def local(self, kind: str, frame: AreaFrame) -> Table:
        return getattr(self.city, kind).subset(self.candidates(kind, frame))

    def sites(self):
        c = self.city.communities
        for ident, lat, lon in zip(c["id"], c["lat"], c["lon"]):
            yield CommunitySite(ident, GeoPoint(float(lat), float(lon)))
