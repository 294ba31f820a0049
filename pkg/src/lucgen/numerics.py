"""Dense tensor arithmetic with hand-written backward rules.

Tensors are plain ``float64`` numpy arrays.  Every layer used by the
models in this package is built from :func:`affine` and :func:`activate`,
whose analytic derivatives live next to them, so each backward pass can be
audited line by line and checked with :func:`grad_check`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import DimensionError, DomainError, NumericError, PreconditionError

Tensor = np.ndarray

# Probabilities are kept inside [EPS_CLAMP, 1 - EPS_CLAMP] before any log.
EPS_CLAMP = 1e-7

ACTIVATIONS = ("relu", "sigmoid", "softplus", "log1p")


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def as_tensor(values, shape=None) -> Tensor:
    t = np.array(values, dtype=np.float64)
    if shape is not None:
        if t.size != int(np.prod(shape)):
            raise DimensionError(f"cannot fit {t.size} values into shape {tuple(shape)}")
        t = t.reshape(shape)
    return check_finite(t)


class SeededRng:
    """Reproducible random stream with named children.

    The bit generator is numpy's PCG64.  Its seed material is the 64-bit
    seed split into two 32-bit words followed by the first 16 bytes of
    SHA-256 of the stream label, fed through ``numpy.random.SeedSequence``.
    The same ``(seed, label)`` therefore yields the same draws everywhere.
    """

    def __init__(self, seed: int, label: str = "root"):
        seed = int(seed)
        if seed < 0:
            raise DomainError("seed must be non-negative")
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.label = label
        digest = hashlib.sha256(label.encode("utf-8")).digest()[:16]
        words = [self.seed & 0xFFFFFFFF, self.seed >> 32]
        words += [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def child(self, label: str) -> "SeededRng":
        return SeededRng(self.seed, f"{self.label}/{label}")

    def __getattr__(self, name):
        # normal, uniform, integers, choice, permutation, poisson, ...
        return getattr(self.generator, name)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, label={self.label!r})"


class ParamSet:
    """Named parameters with gradient slots of identical shape."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self.values: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}
        self.has_grads = False
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self.values:
            raise PreconditionError(f"duplicate parameter name {name!r}")
        value = as_tensor(value)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> Tensor:
        return self.values[name]

    def __setitem__(self, name: str, value):
        value = as_tensor(value)
        if value.shape != self.values[name].shape:
            raise DimensionError(
                f"parameter {name!r} has shape {self.values[name].shape}, got {value.shape}")
        self.values[name][...] = value

    def __contains__(self, name):
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def accumulate(self, name: str, grad: Tensor):
        if grad.shape != self.values[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {grad.shape}, "
                f"parameter has {self.values[name].shape}")
        self.grads[name] += grad
        self.has_grads = True

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)
        self.has_grads = False

    def copy(self) -> "ParamSet":
        out = ParamSet({k: v.copy() for k, v in self.values.items()})
        return out

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def equal(self, other: "ParamSet") -> bool:
        return (list(self.values) == list(other.values)
                and all(np.array_equal(self[k], other[k]) for k in self.values))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DomainError("beta1 and beta2 must lie in [0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise DomainError("lr and eps must be positive")


def adam_step(params: ParamSet, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place and zero the gradients."""
    if len(params) == 0 or not params.has_grads:
        raise PreconditionError("adam_step called without populated gradients")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grad()


def glorot_uniform(rng: SeededRng, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for a batch of row vectors."""
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[0] \
            or W.shape[1] != b.shape[0]:
        raise DimensionError(
            f"affine: x{tuple(x.shape)} @ W{tuple(W.shape)} + b{tuple(b.shape)} do not agree")
    return check_finite(x @ W + b, "affine output")


def affine_backward(dout: Tensor, x: Tensor, W: Tensor):
    """Return ``(dx, dW, db)`` for ``out = x @ W + b``."""
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        y = np.maximum(x, 0.0)
    elif kind == "sigmoid":
        y = sigmoid(x)
    elif kind == "softplus":
        y = np.logaddexp(0.0, x)
    elif kind == "log1p":
        if np.any(x <= -1.0):
            raise DomainError("log1p requires every input > -1")
        y = np.log1p(x)
    else:
        raise DomainError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return check_finite(y, f"{kind} output")


def activate_backward(dout: Tensor, x: Tensor, y: Tensor, kind: str) -> Tensor:
    """Chain ``dout`` through the activation given its input ``x`` and output ``y``."""
    if kind == "relu":
        return dout * (x > 0)
    if kind == "sigmoid":
        return dout * y * (1.0 - y)
    if kind == "softplus":
        return dout * sigmoid(x)
    if kind == "log1p":
        return dout / (1.0 + x)
    raise DomainError(f"unknown activation {kind!r}")


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clamp_probability(p):
    """Clip into ``[EPS_CLAMP, 1 - EPS_CLAMP]``; also returns the pass-through mask."""
    clipped = np.clip(p, EPS_CLAMP, 1.0 - EPS_CLAMP)
    return clipped, (p >= EPS_CLAMP) & (p <= 1.0 - EPS_CLAMP)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


class Mlp:
    """Fully connected stack: ``affine -> hidden activation`` repeated, then an output head.

    Parameters are stored in ``params`` under ``{prefix}W{i}`` / ``{prefix}b{i}``.
    """

    def __init__(self, sizes, rng: SeededRng | None = None, hidden="relu", output=None,
                 prefix="", params: ParamSet | None = None, out_bias: float = 0.0):
        if len(sizes) < 2:
            raise DimensionError("an MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.hidden = hidden
        self.output = output
        self.prefix = prefix
        self.params = params if params is not None else ParamSet()
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w, bias = f"{prefix}W{i}", f"{prefix}b{i}"
            if w in self.params:
                continue
            if rng is None:
                raise PreconditionError("rng required to initialise new MLP weights")
            self.params.add(w, glorot_uniform(rng, a, b))
            fill = out_bias if i == len(self.sizes) - 2 else 0.0
            self.params.add(bias, np.full(b, fill))

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def _kind(self, i):
        return self.output if i == self.n_layers - 1 else self.hidden

    def forward(self, x: Tensor):
        cache = []
        h = x
        for i in range(self.n_layers):
            pre = affine(h, self.params[f"{self.prefix}W{i}"], self.params[f"{self.prefix}b{i}"])
            kind = self._kind(i)
            out = activate(pre, kind) if kind else pre
            cache.append((h, pre, out))
            h = out
        return h, cache

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[0]

    def backward(self, dout: Tensor, cache, accumulate: bool = True) -> Tensor:
        """Accumulate parameter gradients and return the gradient w.r.t. the input.

        With ``accumulate=False`` only the input gradient is propagated.
        """
        for i in reversed(range(self.n_layers)):
            h, pre, out = cache[i]
            kind = self._kind(i)
            if kind:
                dout = activate_backward(dout, pre, out, kind)
            W = self.params[f"{self.prefix}W{i}"]
            dx, dW, db = affine_backward(dout, h, W)
            if accumulate:
                self.params.accumulate(f"{self.prefix}W{i}", dW)
                self.params.accumulate(f"{self.prefix}b{i}", db)
            dout = dx
        return dout


def grad_check(loss_fn: Callable[[ParamSet], float], params: ParamSet, h: float = 1e-5) -> float:
    """Compare analytic gradients with central differences.

    ``loss_fn(params)`` must return the scalar loss and accumulate analytic
    gradients into ``params``; it must be deterministic (freeze any noise).
    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over all
    coordinates.
    """
    params.zero_grad()
    base = loss_fn(params)
    if not np.isfinite(base):
        raise NumericError("loss is not finite")
    analytic = {k: g.copy() for k, g in params.grads.items()}
    worst = 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = loss_fn(params)
            p[idx] = orig - h
            fm = loss_fn(params)
            p[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"loss became non-finite while perturbing {name}{idx}")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    params.zero_grad()
    return worst
