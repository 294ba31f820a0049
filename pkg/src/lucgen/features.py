"""Explicit context features and their assembly into an 8 x K matrix.

For every context square four blocks are computed:

* ``V`` -- first differences of the monthly mean house price of the
  communities inside the square (``t - 1`` values);
* ``R`` -- share of each POI category among the square's POIs (``m``);
* ``O`` -- bus features: daily leaving, arriving and internal trips, stop
  density per km^2 and mean smart-card balance (5);
* ``U`` -- taxi features: daily leaving, arriving and internal trips, mean
  speed and mean distance of trips touching the square (5).

"Internal" trips have both endpoints inside the square; leaving trips
start inside and end outside, arriving trips the reverse.  Daily volumes
divide totals by the number of distinct days present in the whole dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, DomainError
from .geodata import CONTEXTS, NUM_CATEGORIES, AreaFrame, CityData, CityIndex, Table, \
    locate_many, make_frame

N_CONTEXTS = 8
TRANSPORT_NAMES = ("leave", "arrive", "internal")


def feature_names(t: int = 6, m: int = NUM_CATEGORIES) -> list[str]:
    return ([f"v{i}" for i in range(1, t)]
            + [f"r{c}" for c in range(m)]
            + [f"o_{s}" for s in TRANSPORT_NAMES] + ["o_stop_density", "o_balance"]
            + [f"u_{s}" for s in TRANSPORT_NAMES] + ["u_speed", "u_distance"])


def n_features(t: int = 6, m: int = NUM_CATEGORIES) -> int:
    return (t - 1) + m + 10


def value_added_trend(prices: Table, community_ids, t: int = 6) -> np.ndarray:
    """Month-to-month change of the mean price over the given communities.

    Months without any observation repeat the nearest earlier month (the
    first observed month fills leading gaps); no observations at all give
    the zero vector.
    """
    if t < 2:
        raise DomainError("need at least two months of prices")
    ids = set(community_ids)
    if not ids or len(prices) == 0:
        return np.zeros(t - 1)
    sel = np.fromiter((i in ids for i in prices["community_id"]), dtype=bool, count=len(prices))
    month = prices["month"][sel]
    price = prices["price"][sel]
    keep = (month >= 0) & (month < t)
    month, price = month[keep], price[keep]
    if len(month) == 0:
        return np.zeros(t - 1)
    total = np.bincount(month, weights=price, minlength=t)
    count = np.bincount(month, minlength=t)
    means = np.full(t, np.nan)
    seen = count > 0
    means[seen] = total[seen] / count[seen]
    first = int(np.argmax(seen))
    means[:first] = means[first]
    for i in range(first + 1, t):
        if np.isnan(means[i]):
            means[i] = means[i - 1]
    return np.diff(means)


def poi_ratio(categories, m: int = NUM_CATEGORIES) -> np.ndarray:
    """Share of each category; zero vector for an empty region."""
    categories = np.asarray(categories, dtype=np.int64)
    if len(categories) == 0:
        return np.zeros(m)
    counts = np.bincount(categories, minlength=m)[:m].astype(np.float64)
    return counts / counts.sum()


def distinct_days(times) -> int:
    times = np.asarray(times, dtype="datetime64[s]")
    if len(times) == 0:
        return 0
    return int(len(np.unique(times.astype("datetime64[D]"))))


def _flows(origin: np.ndarray, dest: np.ndarray, k: int, n_days: int):
    o_in, d_in = origin == k, dest == k
    if n_days <= 0:
        return np.zeros(3), o_in | d_in
    leave = float((o_in & ~d_in).sum()) / n_days
    arrive = float((~o_in & d_in).sum()) / n_days
    internal = float((o_in & d_in).sum()) / n_days
    return np.array([leave, arrive, internal]), o_in | d_in


def _mean(x) -> float:
    return float(np.mean(x)) if len(x) else 0.0


def public_transport_features(fares: Table, frame: AreaFrame, k: int,
                              n_days: int | None = None) -> np.ndarray:
    if n_days is None:
        n_days = distinct_days(fares["btime"])
    board = locate_many(fares["blat"], fares["blon"], frame)
    alight = locate_many(fares["alat"], fares["alon"], frame)
    vol, touch = _flows(board, alight, k, n_days)
    stops = set()
    for lat, lon, reg in ((fares["blat"], fares["blon"], board), (fares["alat"], fares["alon"], alight)):
        sel = reg == k
        stops.update(zip(np.round(lat[sel], 5).tolist(), np.round(lon[sel], 5).tolist()))
    density = len(stops) / frame.area_km2
    return np.concatenate([vol, [density, _mean(fares["balance"][touch])]])


def private_transport_features(trips: Table, frame: AreaFrame, k: int,
                               n_days: int | None = None) -> np.ndarray:
    if n_days is None:
        n_days = distinct_days(trips["ptime"])
    pick = locate_many(trips["plat"], trips["plon"], frame)
    drop = locate_many(trips["dlat"], trips["dlon"], frame)
    vol, touch = _flows(pick, drop, k, n_days)
    return np.concatenate([vol, [_mean(trips["avg_kmh"][touch]),
                                 _mean(trips["distance_m"][touch])]])


def assemble(V, R, O, U) -> np.ndarray:
    """Concatenate the four blocks per context into an ``8 x K`` matrix."""
    blocks = [np.asarray(b, dtype=np.float64) for b in (V, R, O, U)]
    for name, b in zip("VROU", blocks):
        if b.ndim != 2 or b.shape[0] != N_CONTEXTS:
            raise AssemblyError(f"block {name} must have {N_CONTEXTS} rows, got shape {b.shape}")
    return np.hstack(blocks)


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def invert(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_scaler(corpus) -> FeatureScaler:
    """Column statistics over every context row of every matrix in the corpus.

    Constant columns get mean 0 and deviation 1, i.e. pass through unchanged.
    """
    rows = np.asarray(corpus, dtype=np.float64)
    rows = rows.reshape(-1, rows.shape[-1])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return FeatureScaler(np.where(const, 0.0, mean), np.where(const, 1.0, std))


def apply_scaler(X, scaler: FeatureScaler):
    return scaler.apply(X)


class ContextFeaturizer:
    """Extract 8 x K matrices for every community of a city."""

    def __init__(self, city: CityData, side: float = 1000.0, t: int = 6, m: int = NUM_CATEGORIES,
                 index: CityIndex | None = None):
        self.city = city
        self.side = side
        self.t = t
        self.m = m
        self.index = index or CityIndex(city)
        self.fare_days = distinct_days(city.fares["btime"])
        self.trip_days = distinct_days(city.trips["ptime"])
        rows = {}
        for i, ident in enumerate(city.prices["community_id"]):
            rows.setdefault(ident, []).append(i)
        self._price_rows = {k: np.asarray(v, dtype=np.int64) for k, v in rows.items()}

    def _prices_of(self, ids) -> Table:
        parts = [self._price_rows[i] for i in ids if i in self._price_rows]
        rows = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        return self.city.prices.subset(np.sort(rows))

    def features(self, site) -> np.ndarray:
        frame = make_frame(site, self.side)
        idx = self.index
        comms = idx.local("communities", frame)
        comm_reg = locate_many(comms["lat"], comms["lon"], frame)
        pois = idx.local("pois", frame)
        poi_reg = locate_many(pois["lat"], pois["lon"], frame)
        fares = idx.local("fares", frame)
        trips = idx.local("trips", frame)
        V, R, O, U = [], [], [], []
        for k in CONTEXTS:
            inside = comms["id"][comm_reg == k]
            V.append(value_added_trend(self._prices_of(inside), inside, self.t))
            R.append(poi_ratio(pois["category"][poi_reg == k], self.m))
            O.append(public_transport_features(fares, frame, k, self.fare_days))
            U.append(private_transport_features(trips, frame, k, self.trip_days))
        return assemble(V, R, O, U)

    def corpus(self):
        ids, mats = [], []
        for site in self.index.sites():
            ids.append(site.id)
            mats.append(self.features(site))
        K = n_features(self.t, self.m)
        return ids, np.array(mats).reshape(len(ids), N_CONTEXTS, K)


def write_features_csv(path, ids, matrices, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["community_id", "context_index", *names])
        for ident, mat in zip(ids, matrices):
            for k, row in enumerate(mat, start=1):
                writer.writerow([ident, k, *(repr(float(v)) for v in row)])


def read_features_csv(path):
    ids, rows = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["community_id", "context_index"]:
            raise DomainError(f"{path}: unexpected header")
        for row in reader:
            ident = row[0]
            if ident not in rows:
                ids.append(ident)
                rows[ident] = np.zeros((N_CONTEXTS, len(header) - 2))
            rows[ident][int(row[1]) - 1] = [float(v) for v in row[2:]]
    mats = np.array([rows[i] for i in ids]).reshape(len(ids), N_CONTEXTS, len(header) - 2)
    return ids, mats, header[2:]
