"""Spatial attributed graphs and a variational graph autoencoder over them.

Each community becomes a 9-node graph: node 0 is the central area (zero
attributes) and nodes 1..8 are the contexts C1..C8 carrying their feature
rows.  The encoder is two GCN layers,

    H      = relu(Â X W1)
    mu     = Â H W_mu
    logvar = Â H W_sigma

with ``Â = D^-1/2 (A + I) D^-1/2``; the decoder is ``sigmoid(z z^T)``.
One set of weights is shared by every community graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError, NumericError, PreconditionError
from .numerics import AdamState, ParamSet, SeededRng, adam_step, check_finite, glorot_uniform, \
    sigmoid

N_NODES = 9
# contexts in clockwise geographic order: NW N NE E SE S SW W
RING_ORDER = (1, 2, 3, 5, 8, 7, 6, 4)
PATTERNS = ("star", "ring", "star+ring")
STD_FLOOR = 1e-12


def adjacency(pattern: str = "star+ring") -> np.ndarray:
    if pattern not in PATTERNS:
        raise DomainError(f"unknown adjacency pattern {pattern!r}; expected one of {PATTERNS}")
    A = np.zeros((N_NODES, N_NODES))
    if "star" in pattern:
        A[0, 1:] = A[1:, 0] = 1.0
    if "ring" in pattern:
        for a, b in zip(RING_ORDER, RING_ORDER[1:] + RING_ORDER[:1]):
            A[a, b] = A[b, a] = 1.0
    return A


@dataclass
class SpatialGraph:
    A: np.ndarray
    X: np.ndarray
    community_id: str | None = None

    @property
    def target(self) -> np.ndarray:
        return self.A + np.eye(len(self.A))


def build_graph(F, pattern: str = "star+ring", community_id=None) -> SpatialGraph:
    """Attach an 8 x K context matrix to the 9-node graph (central row zero)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != 8:
        raise DomainError(f"context features must be 8 x K, got {F.shape}")
    X = np.vstack([np.zeros((1, F.shape[1])), F])
    return SpatialGraph(adjacency(pattern), X, community_id)


def normalize_adjacency(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    A_tilde = A + np.eye(A.shape[-1])
    d = A_tilde.sum(axis=-1) ** -0.5
    return d[..., :, None] * A_tilde * d[..., None, :]


@dataclass
class VgaeConfig:
    hidden: int = 128
    latent: int = 32
    epochs: int = 200
    batch: int = 32
    lr: float = 3e-4
    pattern: str = "star+ring"
    pool: str = "all"          # "all" nine nodes or "contexts" only
    recon_weight: float = 1.0  # multiplies the squared-error term


def init_params(K: int, hidden: int, latent: int, rng: SeededRng) -> ParamSet:
    return ParamSet({
        "W1": glorot_uniform(rng, K, hidden),
        "W_mu": glorot_uniform(rng, hidden, latent),
        "W_sigma": glorot_uniform(rng, hidden, latent),
    })


def encode(G: SpatialGraph, params: ParamSet):
    """Return ``(mu, logvar)``, each ``9 x d``."""
    A_hat = normalize_adjacency(G.A)
    with np.errstate(over="ignore", invalid="ignore"):
        H = np.maximum(A_hat @ G.X @ params["W1"], 0.0)
        AH = A_hat @ H
        mu, logvar = AH @ params["W_mu"], AH @ params["W_sigma"]
    check_finite(mu, "encoder mean")
    check_finite(logvar, "encoder log-variance")
    return mu, logvar


def _std(logvar):
    with np.errstate(over="ignore"):
        std = np.exp(0.5 * logvar)
    return np.where(std < STD_FLOOR, 0.0, std)


def reparameterize(mu, logvar, rng: SeededRng | None = None, eps=None):
    """``z = mu + exp(logvar / 2) * eps``; standard deviations below 1e-12 count as 0."""
    if eps is None:
        eps = rng.standard_normal(np.shape(mu))
    return check_finite(mu + _std(logvar) * eps, "latent sample")


def decode(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return sigmoid(z @ np.swapaxes(z, -1, -2))


def kl_term(mu, logvar) -> float:
    return float(0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar))


def vgae_loss(G: SpatialGraph, mu, logvar, A_rec) -> float:
    """KL to the unit Gaussian plus squared error against ``A + I``."""
    return kl_term(mu, logvar) + float(np.sum((G.target - A_rec) ** 2))


def loss_and_grads(params: ParamSet, A_hat, X, T, eps, recon_weight: float = 1.0) -> float:
    """Mean loss over a batch of graphs; accumulates exact gradients into ``params``.

    ``A_hat``: (B, 9, 9), ``X``: (B, 9, K), ``T``: (B, 9, 9), ``eps``: (B, 9, d).
    """
    B = X.shape[0]
    W1, Wm, Ws = params["W1"], params["W_mu"], params["W_sigma"]
    # overflow here shows up as a non-finite loss, which the caller reports
    with np.errstate(over="ignore", invalid="ignore"):
        AX = A_hat @ X
        P1 = AX @ W1
        H = np.maximum(P1, 0.0)
        AH = A_hat @ H
        M = AH @ Wm
        S = AH @ Ws
        std = _std(S)
        z = M + std * eps
        R = sigmoid(z @ np.swapaxes(z, -1, -2))
        eS = np.exp(S)
        loss = (0.5 * np.sum(M ** 2 + eS - 1.0 - S) + recon_weight * np.sum((T - R) ** 2)) / B
    if not np.isfinite(loss):
        return float(loss)

    dP = (-2.0 * recon_weight / B) * (T - R) * R * (1.0 - R)
    dz = (dP + np.swapaxes(dP, -1, -2)) @ z
    dM = dz + M / B
    dS = dz * eps * 0.5 * std + 0.5 * (eS - 1.0) / B
    AHt = np.swapaxes(AH, -1, -2)
    params.accumulate("W_mu", np.einsum("bij,bjk->ik", AHt, dM))
    params.accumulate("W_sigma", np.einsum("bij,bjk->ik", AHt, dS))
    dAH = dM @ Wm.T + dS @ Ws.T
    dP1 = (np.swapaxes(A_hat, -1, -2) @ dAH) * (P1 > 0)
    params.accumulate("W1", np.einsum("bji,bjk->ik", AX, dP1))
    return float(loss)


def _stack(graphs):
    A_hat = np.array([normalize_adjacency(g.A) for g in graphs])
    X = np.array([g.X for g in graphs])
    T = np.array([g.target for g in graphs])
    return A_hat, X, T


@dataclass
class VgaeLog:
    epoch_loss: list = field(default_factory=list)


def train_vgae(graphs, cfg: VgaeConfig, seed: int = 0, params: ParamSet | None = None):
    """Minibatch Adam over the corpus; returns ``(params, log)``.

    A non-finite batch loss raises :class:`DivergenceError` carrying the last
    parameters whose loss was finite.
    """
    graphs = list(graphs)
    if not graphs:
        raise PreconditionError("empty graph corpus")
    rng = SeededRng(seed, "vgae")
    K = graphs[0].X.shape[1]
    if params is None:
        params = init_params(K, cfg.hidden, cfg.latent, rng.child("init"))
    A_hat, X, T = _stack(graphs)
    adam = AdamState(lr=cfg.lr)
    shuffle, noise = rng.child("shuffle"), rng.child("eps")
    log = VgaeLog()
    last_good = params.copy()
    N = len(graphs)
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch):
            idx = order[start:start + cfg.batch]
            eps = noise.standard_normal((len(idx), N_NODES, cfg.latent))
            params.zero_grad()
            loss = loss_and_grads(params, A_hat[idx], X[idx], T[idx], eps, cfg.recon_weight)
            if not np.isfinite(loss):
                raise DivergenceError(f"VGAE loss diverged at epoch {epoch}",
                                      checkpoint=last_good, iteration=epoch)
            total += loss * len(idx)
            adam_step(params, adam)
        log.epoch_loss.append(total / N)
        last_good = params.copy()
    return params, log


def pool_embedding(Z, nodes: str = "all") -> np.ndarray:
    """Average node rows into one graph vector (``Z`` may be batched)."""
    Z = np.asarray(Z, dtype=np.float64)
    if nodes == "all":
        return Z.mean(axis=-2)
    if nodes == "contexts":
        return Z[..., 1:, :].mean(axis=-2)
    raise DomainError(f"unknown pooling set {nodes!r}")


def embed(graphs, params: ParamSet, pool: str = "all", rng: SeededRng | None = None) -> np.ndarray:
    """Graph embeddings, one row per graph: pooled ``mu`` (or a pooled sample if ``rng`` given)."""
    out = []
    for g in graphs:
        mu, logvar = encode(g, params)
        z = mu if rng is None else reparameterize(mu, logvar, rng)
        out.append(pool_embedding(z, pool))
    return np.array(out).reshape(len(out), params["W_mu"].shape[1])


def auc(pos, neg) -> float:
    """Probability a positive outranks a negative (ties count half)."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise NumericError("AUC needs both positive and negative scores")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def reconstruction_auc(G: SpatialGraph, params: ParamSet) -> float:
    """Edge-vs-non-edge AUC of the decoded mean embedding, diagonal excluded."""
    mu, _ = encode(G, params)
    R = decode(mu)
    iu = np.triu_indices(N_NODES, k=1)
    target = G.target[iu]
    return auc(R[iu][target > 0], R[iu][target == 0])


def config_dict(cfg: VgaeConfig) -> dict:
    return asdict(cfg)
