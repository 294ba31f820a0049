"""Run configuration and the stage-by-stage pipeline behind the CLI.

Each stage reads what earlier stages left in the output directory and
writes its own artifacts there, so stages can be rerun one at a time:

==========  ==============================================================
stage       writes
==========  ==============================================================
synth       ``data/*.csv`` (six datasets plus ``planted.csv``)
featurize   ``features.csv``, ``scaler.json``
label       ``labels.csv``, ``configs/<id>.csv``
embed       ``checkpoints/vgae.json``, ``vgae_log.json``,
            ``embeddings_all.csv``, ``embeddings.csv``
train-gan   ``checkpoints/gan.json``, ``gan_log.json``
generate    ``checkpoints/vae.json``, ``generated/<method>.npy``
score       ``checkpoints/forest.json``, ``scores.csv``,
            ``score_reference.csv``
report      ``proportions.csv``, ``merged_<id>.ppm``,
            ``channel_<id>_<c>.ppm``, ``report.json``
==========  ==============================================================
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint
from .advplanner import Discriminator, GanConfig, Generator, VaeConfig, baseline_avg, \
    baseline_max, baseline_vae, train_gan
from .errors import ConfigError, DataError, DomainError, PreconditionError
from .export import export_embeddings, export_heatmap, read_embeddings
from .features import ContextFeaturizer, feature_names, fit_scaler, FeatureScaler, \
    read_features_csv, write_features_csv
from .geodata import NUM_CATEGORIES, SCHEMAS, CityIndex, SynthConfig, load_city, synth_city, \
    write_city
from .landuse import QualityLabel, label_communities, poi_proportions, read_config_csv, \
    write_config_csv
from .numerics import SeededRng
from .scoring import ForestConfig, rf_score_many, rf_train, save_forest, \
    scoring_matrix
from .spatialgraph import VgaeConfig, build_graph, embed, train_vgae

STAGES = ("synth", "featurize", "label", "embed", "train-gan", "generate", "score", "report")
METHODS = ("LUCGAN", "VAE", "AVG", "MAX")
DATASETS = tuple(SCHEMAS)


@dataclass
class ReportConfig:
    scale: int = 10                 # pixels per grid cell
    maps: int = 3                   # communities drawn for LUCGAN / VAE / real
    embedding_per_label: int = 500


@dataclass
class RunConfig:
    seed: int
    out: str = "run"
    data: dict | None = None        # dataset kind -> CSV path; None means use synth
    L: float = 1000.0
    n: int = 10
    t: int = 6
    m: int = NUM_CATEGORIES
    synth: SynthConfig = field(default_factory=SynthConfig)
    vgae: VgaeConfig = field(default_factory=VgaeConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def validate(self):
        if self.L <= 0:
            raise ConfigError("L must be positive")
        if self.n < 1 or self.t < 2 or not 1 <= self.m <= NUM_CATEGORIES:
            raise ConfigError(f"need n >= 1, t >= 2 and 1 <= m <= {NUM_CATEGORIES}")
        if self.vgae.hidden < 1 or self.vgae.latent < 1 or self.vgae.epochs < 0 \
                or self.vgae.batch < 1 or self.vgae.lr <= 0:
            raise ConfigError("vgae: hidden, latent, batch >= 1, epochs >= 0, lr > 0")
        if self.report.scale < 1 or self.report.maps < 0 or self.report.embedding_per_label < 1:
            raise ConfigError("report: scale >= 1, maps >= 0, embedding_per_label >= 1")
        if self.data is not None:
            missing = set(DATASETS) - set(self.data)
            if missing:
                raise ConfigError(f"data section lacks paths for {sorted(missing)}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["synth"].items()}
        return d


_SECTIONS = {"synth": SynthConfig, "vgae": VgaeConfig, "gan": GanConfig, "vae": VaeConfig,
             "forest": ForestConfig, "report": ReportConfig}


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


def config_from_dict(doc: dict, seed: int | None = None, out: str | None = None) -> RunConfig:
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    if "seed" not in doc:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in doc.items():
        kwargs[k] = _section(_SECTIONS[k], v, k) if k in _SECTIONS else v
    if not isinstance(kwargs["seed"], int) or kwargs["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc, seed, out)


# --- helpers -----------------------------------------------------------------

class Run:
    """Paths and lazily loaded state for one output directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.out
        self._city = None
        self._index = None

    def path(self, *parts) -> str:
        return os.path.join(self.out, *parts)

    def ensure(self, *parts) -> str:
        d = self.path(*parts)
        os.makedirs(d, exist_ok=True)
        return d

    def require(self, *parts) -> str:
        p = self.path(*parts)
        if not os.path.exists(p):
            raise PreconditionError(f"{p} not found; run the earlier stages first")
        return p

    def data_paths(self) -> dict:
        if self.cfg.data is not None:
            return dict(self.cfg.data)
        return {k: self.path("data", f"{k}.csv") for k in DATASETS}

    def city(self):
        if self._city is None:
            paths = self.data_paths()
            for kind in DATASETS:
                if not os.path.exists(paths[kind]):
                    raise DataError(f"missing dataset {kind!r}: {paths[kind]}")
            self._city, _ = load_city(paths, m=self.cfg.m, t=self.cfg.t)
            self._index = CityIndex(self._city)
        return self._city, self._index

    def seed(self, stage: str) -> int:
        # independent, reproducible seed per stage
        return int(SeededRng(self.cfg.seed, "stages").child(stage).integers(0, 2 ** 31))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_labels(path):
    ids, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["community_id"])
            labels.append(row["label"])
            rows.append(row)
    return ids, labels, rows


def _labeled_configs(run: Run):
    ids, labels, _ = read_labels(run.require("labels.csv"))
    cfg = run.cfg
    configs = np.array([read_config_csv(run.path("configs", f"{i}.csv"), cfg.m, cfg.n) for i in ids])
    return ids, np.asarray(labels), configs.reshape(len(ids), cfg.m, cfg.n, cfg.n)


def _split(labels, configs):
    exc = labels == QualityLabel.EXCELLENT.value
    ter = labels == QualityLabel.TERRIBLE.value
    if not exc.any() or not ter.any():
        raise PreconditionError("the labelled corpus needs both excellent and terrible communities")
    return configs[exc], configs[ter]


def _all_embeddings(run: Run):
    ids, _, Z = read_embeddings(run.require("embeddings_all.csv"))
    return ids, Z


# --- stages ------------------------------------------------------------------

def stage_synth(run: Run):
    cfg = run.cfg
    sc = asdict(cfg.synth)
    sc["seed"] = run.seed("synth")
    sc["side"] = cfg.L
    sc["months"] = cfg.t
    city = synth_city(SynthConfig(**sc))
    return write_city(city, run.ensure("data"))


def stage_featurize(run: Run):
    cfg = run.cfg
    city, index = run.city()
    ids, F = ContextFeaturizer(city, cfg.L, cfg.t, cfg.m, index).corpus()
    if not ids:
        raise DataError("no communities to featurize")
    write_features_csv(run.path("features.csv"), ids, F, feature_names(cfg.t, cfg.m))
    _write_json(run.path("scaler.json"), fit_scaler(F).to_dict())
    return run.path("features.csv")


def stage_label(run: Run):
    cfg = run.cfg
    city, index = run.city()
    corpus = label_communities(city, cfg.L, cfg.n, cfg.m, index)
    d = run.ensure("configs")
    with open(run.path("labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community_id", "checkins", "freq", "div", "Q", "label"])
        for ident, count, s, conf in zip(corpus.ids, corpus.counts, corpus.scores, corpus.configs):
            w.writerow([ident, int(count), repr(s.freq), repr(s.div), repr(s.Q), s.label.value])
            write_config_csv(os.path.join(d, f"{ident}.csv"), conf)
    return run.path("labels.csv")


def stage_embed(run: Run):
    cfg = run.cfg
    ids, F, _ = read_features_csv(run.require("features.csv"))
    scaler = FeatureScaler.from_dict(_read_json(run.require("scaler.json")))
    graphs = [build_graph(f, cfg.vgae.pattern, i) for i, f in zip(ids, scaler.apply(F))]
    seed = run.seed("embed")
    params, log = train_vgae(graphs, cfg.vgae, seed)
    checkpoint.save(os.path.join(run.ensure("checkpoints"), "vgae.json"), {"vgae": params}, "vgae",
                    asdict(cfg.vgae), seed, cfg.vgae.epochs)
    _write_json(run.path("vgae_log.json"), {"epoch_loss": log.epoch_loss})
    Z = embed(graphs, params, cfg.vgae.pool)
    label_of = {}
    if os.path.exists(run.path("labels.csv")):
        lid, lab, _ = read_labels(run.path("labels.csv"))
        label_of = dict(zip(lid, lab))
    labels = [label_of.get(i, "unlabeled") for i in ids]
    export_embeddings(run.path("embeddings_all.csv"), ids, Z, labels, per_label=None)
    export_embeddings(run.path("embeddings.csv"), ids, Z, labels,
                      per_label=cfg.report.embedding_per_label, seed=seed)
    return run.path("embeddings.csv")


def _gan_models(run: Run, d: int):
    cfg = run.cfg
    gc = cfg.gan
    seed = run.seed("train-gan")
    rng = SeededRng(seed, "gan")
    shape = (cfg.m, cfg.n, cfg.n)
    gen = Generator(d, shape, gc.hidden_g, rng.child("init_g"), init_count=gc.init_count)
    disc = Discriminator(int(np.prod(shape)), gc.hidden_d, rng.child("init_d"))
    return gen, disc, seed


def stage_train_gan(run: Run):
    cfg = run.cfg
    _, labels, configs = _labeled_configs(run)
    E, T = _split(labels, configs)
    _, Z = _all_embeddings(run)
    gen, disc, seed = _gan_models(run, Z.shape[1])
    gc = GanConfig(**{**asdict(cfg.gan), "seed": seed})
    gen, disc, log = train_gan(E, T, Z, gc, gen, disc)
    checkpoint.save(os.path.join(run.ensure("checkpoints"), "gan.json"),
                    {"generator": gen.params, "discriminator": disc.params}, "gan",
                    asdict(gc), seed, gc.iterations)
    _write_json(run.path("gan_log.json"), log.to_dict())
    return run.path("checkpoints", "gan.json")


def stage_generate(run: Run):
    cfg = run.cfg
    _, labels, configs = _labeled_configs(run)
    E, _ = _split(labels, configs)
    ids, Z = _all_embeddings(run)
    d = Z.shape[1]
    groups, _ = checkpoint.load(run.require("checkpoints", "gan.json"))
    shape = (cfg.m, cfg.n, cfg.n)
    gen = Generator(d, shape, cfg.gan.hidden_g, params=groups["generator"])
    control, _, _ = _gan_models(run, d)
    vseed = run.seed("vae")
    vc = VaeConfig(**{**asdict(cfg.vae), "seed": vseed})
    vae, losses = baseline_vae(E, d, vc)
    checkpoint.save(os.path.join(run.ensure("checkpoints"), "vae.json"), {"vae": vae.params}, "vae",
                    asdict(vc), vseed, vc.epochs)
    out = run.ensure("generated")
    N = len(ids)
    results = {
        "LUCGAN": gen(Z),
        "VAE": vae.decode(Z),
        "AVG": np.broadcast_to(baseline_avg(E), (N,) + shape),
        "MAX": np.broadcast_to(baseline_max(E), (N,) + shape),
        "CONTROL": control(Z),
    }
    for name, arr in results.items():
        np.save(os.path.join(out, f"{name.lower()}.npy"), np.ascontiguousarray(arr))
    _write_json(run.path("vae_log.json"), {"epoch_loss": losses})
    return out


def _generated(run: Run, name: str) -> np.ndarray:
    return np.load(run.require("generated", f"{name.lower()}.npy"))


def stage_score(run: Run):
    cfg = run.cfg
    _, labels, configs = _labeled_configs(run)
    E, T = _split(labels, configs)
    X = scoring_matrix(np.concatenate([E, T]))
    y = np.concatenate([np.ones(len(E)), np.zeros(len(T))])
    fc = ForestConfig(**{**asdict(cfg.forest), "seed": run.seed("score")})
    names = [f"total_{c}" for c in range(cfg.m)] + ["diversity", "occupancy"]
    model = rf_train(X, y, fc, names)
    save_forest(os.path.join(run.ensure("checkpoints"), "forest.json"), model)

    def row(name, arr):
        s = rf_score_many(model, arr)
        return [name, repr(float(s.mean())), repr(float(s.std())), len(s)]

    header = ["method", "mean_score", "std_score", "count"]
    with open(run.path("scores.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for m in METHODS:
            w.writerow(row(m, _generated(run, m)))
    with open(run.path("score_reference.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(row("EXCELLENT", E))
        w.writerow(row("TERRIBLE", T))
        w.writerow(row("UNTRAINED", _generated(run, "CONTROL")))
    _write_json(run.path("forest_summary.json"), {"oob_accuracy": model.oob_accuracy,
                                                  "n_excellent": len(E), "n_terrible": len(T)})
    return run.path("scores.csv")


def stage_report(run: Run):
    cfg = run.cfg
    ids, Z = _all_embeddings(run)
    lid, _, configs = _labeled_configs(run)
    real = dict(zip(lid, configs))
    run.require("scores.csv")
    run.require("embeddings.csv")
    files = {"scores": "scores.csv", "embeddings": "embeddings.csv", "proportions": "proportions.csv"}
    with open(run.path("proportions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", *(f"p{c}" for c in range(cfg.m))])
        for m in METHODS:
            total = _generated(run, m).sum(axis=0)
            w.writerow([m, *(repr(float(p)) for p in poi_proportions(total))])
    s = cfg.report.scale
    maps = []
    gen, vae = _generated(run, "LUCGAN"), _generated(run, "VAE")
    for k, ident in enumerate(ids[:cfg.report.maps]):
        maps += export_heatmap(gen[k], s, run.out, ident)
        maps += export_heatmap(vae[k], s, run.out, f"VAE-{ident}")
        if ident in real:
            maps += export_heatmap(real[ident], s, run.out, f"real-{ident}")
    maps += export_heatmap(_generated(run, "AVG")[0], s, run.out, "AVG")
    maps += export_heatmap(_generated(run, "MAX")[0], s, run.out, "MAX")
    files["rasters"] = sorted(os.path.relpath(p, run.out) for p in maps)
    _write_json(run.path("report.json"), files)
    return run.path("report.json")


STAGE_FUNCS = {
    "synth": stage_synth, "featurize": stage_featurize, "label": stage_label,
    "embed": stage_embed, "train-gan": stage_train_gan, "generate": stage_generate,
    "score": stage_score, "report": stage_report,
}


def run_stage(name: str, cfg: RunConfig):
    if name not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}")
    os.makedirs(cfg.out, exist_ok=True)
    run = Run(cfg)
    _write_json(run.path("run_config.json"), cfg.to_dict())
    return STAGE_FUNCS[name](run)


def run_all(cfg: RunConfig, stages=STAGES):
    """Run ``stages`` in order, sharing one loaded city between them."""
    os.makedirs(cfg.out, exist_ok=True)
    run = Run(cfg)
    _write_json(run.path("run_config.json"), cfg.to_dict())
    for name in stages:
        if name == "synth" and cfg.data is not None:
            continue
        STAGE_FUNCS[name](run)
    return run
