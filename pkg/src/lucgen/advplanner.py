"""Adversarial land-use planner and the non-adversarial baselines.

The generator maps a context embedding ``z`` (length ``d``) to a
non-negative ``(m, n, n)`` configuration through a two-hidden-layer MLP
with a softplus head.  The discriminator sees ``log1p`` of the flattened
configuration and outputs the probability that it is an excellent plan.

Training follows the three-way minibatch scheme: for every iteration the
discriminator takes ``f`` ascent steps on

    mean[ log D(E) + log(1 - D(F)) + log(1 - D(T)) ]

with ``E`` excellent, ``F = G(z)`` generated and ``T`` terrible samples,
and then the generator takes one descent step on ``mean log(1 - D(G(z)))``
(or on ``-mean log D(G(z))`` in the nonsaturating mode).  Every
probability is clamped to ``[1e-7, 1 - 1e-7]`` before the log.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError, PreconditionError
from .numerics import AdamState, Mlp, ParamSet, SeededRng, adam_step, check_finite, \
    clamp_probability, softplus_inverse

G_LOSS_MODES = ("saturating", "nonsaturating")


@dataclass
class GanConfig:
    batch: int = 32
    d_steps: int = 1            # f: discriminator updates per generator update
    iterations: int = 2000
    hidden_g: int = 128
    hidden_d: int = 128
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    seed: int = 0
    g_loss_mode: str = "saturating"
    # the untrained generator predicts this count in every entry ("empty plan")
    init_count: float = 0.01

    def __post_init__(self):
        if self.batch < 1 or self.d_steps < 1:
            raise DomainError("batch and d_steps must be >= 1")
        if self.iterations < 0:
            raise DomainError("iterations must be >= 0")
        if self.g_loss_mode not in G_LOSS_MODES:
            raise DomainError(f"g_loss_mode must be one of {G_LOSS_MODES}")
        if self.init_count <= 0:
            raise DomainError("init_count must be positive")


class Generator:
    def __init__(self, d: int, shape, hidden: int = 128, rng: SeededRng | None = None,
                 params: ParamSet | None = None, init_count: float = 0.01):
        self.d = int(d)
        self.shape = tuple(int(s) for s in shape)
        size = int(np.prod(self.shape))
        self.net = Mlp([self.d, hidden, hidden, size], rng, hidden="relu", output="softplus",
                       prefix="g_", params=params, out_bias=softplus_inverse(init_count))
        self.params = self.net.params

    def forward(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.d:
            raise DimensionError(f"generator expects embeddings of length {self.d}, got {z.shape[1]}")
        flat, cache = self.net.forward(z)
        return flat, cache

    def __call__(self, z) -> np.ndarray:
        flat, _ = self.forward(z)
        return flat.reshape((-1,) + self.shape)


class Discriminator:
    def __init__(self, size: int, hidden: int = 128, rng: SeededRng | None = None,
                 params: ParamSet | None = None):
        self.size = int(size)
        self.net = Mlp([self.size, hidden, hidden, 1], rng, hidden="relu", output="sigmoid",
                       prefix="d_", params=params)
        self.params = self.net.params

    def forward(self, x):
        """Return clamped probabilities ``(B,)``, the clamp mask and the cache."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.size)
        if np.any(x < 0):
            raise DomainError("discriminator input must be non-negative counts")
        h = np.log1p(x)
        p, cache = self.net.forward(h)
        p = p[:, 0]
        clipped, live = clamp_probability(p)
        return clipped, live, (x, cache)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, dlogit_prob, state, accumulate: bool = True) -> np.ndarray:
        """Propagate ``dL/dD`` (``(B,)``, clamp already applied) to the raw counts."""
        x, cache = state
        dh = self.net.backward(dlogit_prob[:, None], cache, accumulate=accumulate)
        return dh / (1.0 + x)


def generate(z, gen: Generator) -> np.ndarray:
    """Configuration for one embedding ``z``: a non-negative ``(m, n, n)`` array."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or len(z) != gen.d:
        raise DimensionError(f"expected an embedding of length {gen.d}, got shape {z.shape}")
    return check_finite(gen(z)[0], "generated configuration")


def _log_terms(p, live, positive: bool):
    """``log p`` (or ``log(1-p)``) and its derivative w.r.t. ``p`` (zero where clamped)."""
    live = live.astype(np.float64)
    if positive:
        return np.log(p), live / p
    return np.log1p(-p), -live / (1.0 - p)


def d_loss(E, F, T, disc: Discriminator, accumulate: bool = False) -> float:
    """Discriminator objective (to be ascended).

    With ``accumulate`` the gradient of the returned value is added to
    ``disc.params``.
    """
    E, F, T = (np.asarray(a, dtype=np.float64) for a in (E, F, T))
    if not (len(E) == len(F) == len(T)) or len(E) == 0:
        raise PreconditionError("E, F and T batches must have the same non-zero size")
    B = len(E)
    total = 0.0
    for batch, positive in ((E, True), (F, False), (T, False)):
        p, live, state = disc.forward(batch)
        val, dp = _log_terms(p, live, positive)
        total += float(val.sum())
        if accumulate:
            disc.backward(dp / B, state)
    return total / B


def g_loss(z, gen: Generator, disc: Discriminator, mode: str = "saturating",
           accumulate: bool = False) -> float:
    """Generator loss (to be descended); gradients flow into ``gen.params`` only."""
    if mode not in G_LOSS_MODES:
        raise DomainError(f"unknown generator loss mode {mode!r}")
    flat, gcache = gen.forward(z)
    B = len(flat)
    p, live, state = disc.forward(flat)
    if mode == "saturating":
        val, dp = _log_terms(p, live, positive=False)
    else:
        val, dp = _log_terms(p, live, positive=True)
        val, dp = -val, -dp
    if accumulate:
        dflat = disc.backward(dp / B, state, accumulate=False)
        gen.net.backward(dflat, gcache)
    return float(val.sum()) / B


@dataclass
class TrainLog:
    g_loss_mode: str = "saturating"
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    d_real: list = field(default_factory=list)     # mean D(E)
    d_fake: list = field(default_factory=list)     # mean D(F)
    d_terrible: list = field(default_factory=list)  # mean D(T)

    def to_dict(self):
        return asdict(self)


def _sample(rng: SeededRng, pool: np.ndarray, batch: int) -> np.ndarray:
    # without replacement when the pool is large enough, with replacement otherwise
    return pool[rng.choice(len(pool), size=batch, replace=len(pool) < batch)]


def train_gan(E_set, T_set, z_set, cfg: GanConfig, gen: Generator | None = None,
              disc: Discriminator | None = None):
    """Run the three-way minibatch loop; returns ``(gen, disc, log)``.

    A non-finite loss raises :class:`DivergenceError` whose ``checkpoint``
    holds copies of the last finite generator and discriminator parameters.
    """
    E_set = np.asarray(E_set, dtype=np.float64)
    T_set = np.asarray(T_set, dtype=np.float64)
    z_set = np.atleast_2d(np.asarray(z_set, dtype=np.float64))
    if len(E_set) == 0 or len(T_set) == 0 or len(z_set) == 0:
        raise PreconditionError("excellent, terrible and embedding sets must be non-empty")
    if E_set.shape[1:] != T_set.shape[1:]:
        raise DimensionError("excellent and terrible configurations differ in shape")
    shape = E_set.shape[1:]
    rng = SeededRng(cfg.seed, "gan")
    if gen is None:
        gen = Generator(z_set.shape[1], shape, cfg.hidden_g, rng.child("init_g"),
                        init_count=cfg.init_count)
    if disc is None:
        disc = Discriminator(int(np.prod(shape)), cfg.hidden_d, rng.child("init_d"))
    adam_g, adam_d = AdamState(lr=cfg.lr_g), AdamState(lr=cfg.lr_d)
    draw = rng.child("minibatch")
    log = TrainLog(g_loss_mode=cfg.g_loss_mode)
    good = (gen.params.copy(), disc.params.copy())

    for it in range(cfg.iterations):
        for _ in range(cfg.d_steps):
            E = _sample(draw, E_set, cfg.batch)
            F = gen(_sample(draw, z_set, cfg.batch))
            T = _sample(draw, T_set, cfg.batch)
            disc.params.zero_grad()
            dl = d_loss(E, F, T, disc, accumulate=True)
            if not np.isfinite(dl):
                raise DivergenceError(f"discriminator loss diverged at iteration {it}",
                                      checkpoint=good, iteration=it)
            for g in disc.params.grads.values():
                g *= -1.0          # ascend
            adam_step(disc.params, adam_d)
        z = _sample(draw, z_set, cfg.batch)
        gen.params.zero_grad()
        gl = g_loss(z, gen, disc, cfg.g_loss_mode, accumulate=True)
        if not np.isfinite(gl):
            raise DivergenceError(f"generator loss diverged at iteration {it}",
                                  checkpoint=good, iteration=it)
        adam_step(gen.params, adam_g)
        log.d_loss.append(dl)
        log.g_loss.append(gl)
        log.d_real.append(float(disc(E).mean()))
        log.d_fake.append(float(disc(F).mean()))
        log.d_terrible.append(float(disc(T).mean()))
        good = (gen.params.copy(), disc.params.copy())
    return gen, disc, log


def planted_toy(n: int = 200, d: int = 4, seed: int = 0, cfg: GanConfig | None = None):
    """One-channel, one-cell toy: excellent counts near 5, terrible near 0.

    Returns ``(gen, disc, log, held_out_z)``.  The generator starts at a
    count of 1 so that its first samples differ from the terrible mode.
    """
    rng = SeededRng(seed, "toy")
    E = np.abs(rng.normal(5.0, 0.3, size=(n, 1, 1, 1)))
    T = np.abs(rng.normal(0.0, 0.3, size=(n, 1, 1, 1)))
    z = rng.normal(size=(n, d))
    held = rng.normal(size=(1000, d))
    cfg = cfg or GanConfig(iterations=1000, hidden_g=16, hidden_d=16, init_count=1.0, seed=seed)
    gen, disc, log = train_gan(E, T, z, cfg)
    return gen, disc, log, held


# --- baselines ---------------------------------------------------------------

def _nonempty(E_set) -> np.ndarray:
    E_set = np.asarray(E_set, dtype=np.float64)
    if E_set.ndim < 1 or len(E_set) == 0:
        raise PreconditionError("baseline needs at least one excellent configuration")
    return E_set


def baseline_avg(E_set) -> np.ndarray:
    return _nonempty(E_set).mean(axis=0)


def baseline_max(E_set) -> np.ndarray:
    return _nonempty(E_set).max(axis=0)


@dataclass
class VaeConfig:
    hidden: int = 128
    epochs: int = 50
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0


class VaeModel:
    """Dense VAE over flattened configurations: log1p counts in, counts out."""

    def __init__(self, size: int, d: int, hidden: int, rng: SeededRng | None = None,
                 params: ParamSet | None = None, shape=None):
        self.size, self.d = int(size), int(d)
        self.shape = tuple(shape) if shape is not None else (self.size,)
        self.params = params if params is not None else ParamSet()
        self.encoder = Mlp([self.size, hidden, 2 * self.d], rng, prefix="enc_", params=self.params)
        self.decoder = Mlp([self.d, hidden, self.size], rng, output="softplus", prefix="dec_",
                           params=self.params)

    def loss_and_grads(self, X, eps, accumulate: bool = True) -> float:
        """Mean over the batch of squared reconstruction error plus KL."""
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.size)
        B = len(X)
        h = np.log1p(X)
        enc, ecache = self.encoder.forward(h)
        mu, logvar = enc[:, :self.d], enc[:, self.d:]
        with np.errstate(over="ignore"):
            std = np.exp(0.5 * logvar)
        z = mu + std * eps
        if not np.all(np.isfinite(z)):
            return float("nan")
        xr, dcache = self.decoder.forward(z)
        with np.errstate(over="ignore", invalid="ignore"):
            kl = 0.5 * np.sum(mu ** 2 + std ** 2 - 1.0 - logvar)
            loss = (np.sum((xr - X) ** 2) + kl) / B
        if not accumulate or not np.isfinite(loss):
            return float(loss)
        dz = self.decoder.backward(2.0 * (xr - X) / B, dcache)
        dmu = dz + mu / B
        dlogvar = dz * eps * 0.5 * std + 0.5 * (std ** 2 - 1.0) / B
        self.encoder.backward(np.hstack([dmu, dlogvar]), ecache)
        return float(loss)

    def decode(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.d:
            raise DimensionError(f"decoder expects length-{self.d} codes, got {z.shape[1]}")
        return self.decoder(z).reshape((-1,) + self.shape)


def baseline_vae(E_set, d: int, cfg: VaeConfig | None = None):
    """Train the VAE baseline on excellent configurations; returns ``(model, epoch_losses)``."""
    cfg = cfg or VaeConfig()
    E_set = _nonempty(E_set)
    shape = E_set.shape[1:]
    X = E_set.reshape(len(E_set), -1)
    rng = SeededRng(cfg.seed, "vae")
    model = VaeModel(X.shape[1], d, cfg.hidden, rng.child("init"), shape=shape)
    adam = AdamState(lr=cfg.lr)
    shuffle, noise = rng.child("shuffle"), rng.child("eps")
    losses = []
    last_good = model.params.copy()
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch):
            idx = order[start:start + cfg.batch]
            eps = noise.standard_normal((len(idx), d))
            model.params.zero_grad()
            loss = model.loss_and_grads(X[idx], eps)
            if not np.isfinite(loss):
                raise DivergenceError(f"VAE loss diverged at epoch {epoch}",
                                      checkpoint=last_good, iteration=epoch)
            total += loss * len(idx)
            adam_step(model.params, adam)
        losses.append(total / len(X))
        last_good = model.params.copy()
    return model, losses


def vae_generate(model: VaeModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return check_finite(model.decode(z)[0], "VAE output")
