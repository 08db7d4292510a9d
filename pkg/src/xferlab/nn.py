"""Small dense-network engine: reverse-mode autodiff over numpy, MLPs, Adam,
tanh-squashed Gaussian policies and a JSON checkpoint format.

Every differentiable op accepts plain arrays or :class:`Tensor` values. If no
argument is a Tensor the op returns a plain ndarray, so the same forward code
serves both fast inference and gradient computation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)

OPS = frozenset({
    "add", "sub", "mul", "div", "neg", "matmul", "affine",
    "relu", "tanh", "log", "exp", "softplus", "square",
    "sum", "mean", "minimum", "clip", "getitem", "concat",
})


class UnsupportedOpError(TypeError):
    """Raised when a non-whitelisted operation touches a Tensor."""


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        mapped = _UFUNCS.get(ufunc.__name__)
        if method != "__call__" or mapped is None or kwargs:
            raise UnsupportedOpError(f"numpy.{ufunc.__name__} is not a differentiable op")
        return mapped(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOpError(f"numpy.{func.__name__} is not a differentiable op")

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        raise UnsupportedOpError("only x**2 is supported")


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _make(value, parents, backward_fn, op):
    if not any(isinstance(p, Tensor) for p in parents):
        return value
    return Tensor(value, parents, backward_fn, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    av, bv = _val(a), _val(b)
    return _make(av + bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)), "add")


def sub(a, b):
    av, bv = _val(a), _val(b)
    return _make(av - bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)), "sub")


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)), "div")


def neg(a):
    return _make(-_val(a), (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    av, bv = _val(a), _val(b)
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
    xv, wv, bv = _val(x), _val(w), _val(b)

    def back(g):
        gx = g @ wv.T if isinstance(x, Tensor) else None
        gw = xv.T @ g if isinstance(w, Tensor) else None
        gb = g.sum(axis=0) if isinstance(b, Tensor) else None
        return gx, gw, gb

    return _make(xv @ wv + bv, (x, w, b), back, "affine")


def relu(a):
    av = _val(a)
    mask = av > 0
    return _make(av * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    out = np.tanh(_val(a))
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    out = np.exp(_val(a))
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    av = _val(a)
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def softplus(a):
    """``log(1 + exp(a))`` evaluated without overflow."""
    av = _val(a)
    out = np.logaddexp(0.0, av)
    return _make(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * av)),), "softplus")


def square(a):
    av = _val(a)
    return _make(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def sum(a, axis=None, keepdims=False):  # noqa: A001
    av = _val(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _make(av.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, av.shape).copy(),)

    return _make(av.mean(axis=axis, keepdims=keepdims), (a,), back, "mean")


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    av, bv = _val(a), _val(b)
    pick_a = av <= bv
    return _make(np.where(pick_a, av, bv), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, av.shape),
                            _unbroadcast(g * ~pick_a, bv.shape)), "minimum")


def clip(a, lo, hi):
    av = _val(a)
    inside = (av >= lo) & (av <= hi)
    return _make(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clip")


def getitem(a, idx):
    av = _val(a)
    fancy = any(isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        out = np.zeros_like(av)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] += g
        return (out,)

    return _make(av[idx], (a,), back, "getitem")


def concat(items, axis=-1):
    vals = [_val(x) for x in items]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(vals, axis=axis), tuple(items), back, "concat")


_UFUNCS = {
    "add": add, "subtract": sub, "multiply": mul, "true_divide": div,
    "divide": div, "negative": neg, "matmul": matmul, "tanh": tanh,
    "exp": exp, "log": log, "square": square, "minimum": minimum,
}


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node in the graph."""
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        if node.op not in OPS:
            raise UnsupportedOpError(node.op)
        for p, g in zip(node.parents, node.backward_fn(node.grad)):
            if isinstance(p, Tensor) and g is not None:
                p.grad = g if p.grad is None else p.grad + g


def value_and_grad(fn: Callable, arrays: Sequence[np.ndarray], *args, **kwargs):
    """Evaluate ``fn(leaves, *args)`` and return ``(loss, [d loss / d array])``."""
    leaves = [Tensor(a) for a in arrays]
    out = fn(leaves, *args, **kwargs)
    if not isinstance(out, Tensor):
        return float(np.asarray(out)), [np.zeros_like(a, dtype=np.float64) for a in arrays]
    value = float(out.value)
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    backward(out)
    grads = [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in leaves]
    return value, grads


def grad(fn: Callable, arrays: Sequence[np.ndarray], *args, **kwargs) -> list[np.ndarray]:
    return value_and_grad(fn, arrays, *args, **kwargs)[1]


def numerical_grad(fn: Callable, arrays: Sequence[np.ndarray], *args, eps: float = 1e-5, **kwargs):
    """Central finite differences of a scalar ``fn(arrays, *args)``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.asarray(fn(arrays, *args, **kwargs)))
            flat[i] = orig - eps
            lo = float(np.asarray(fn(arrays, *args, **kwargs)))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def max_rel_error(a: Sequence[np.ndarray], b: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    """Largest ``|a-b| / max(|a|, |b|, floor)`` over all entries."""
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


# ----------------------------------------------------------------------------
# MLPs


ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class MlpParams:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    weights: tuple
    biases: tuple

    def __post_init__(self):
        n = len(self.layer_sizes) - 1
        if n < 1 or len(self.activations) != n or len(self.weights) != n or len(self.biases) != n:
            raise ValueError("layer_sizes, activations, weights and biases disagree")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if _val(w).shape != (self.layer_sizes[i], self.layer_sizes[i + 1]):
                raise ValueError(f"layer {i} weight shape {_val(w).shape}")
            if _val(b).shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i} bias shape {_val(b).shape}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence) -> "MlpParams":
        arrays = list(arrays)
        return replace(self, weights=tuple(arrays[0::2]), biases=tuple(arrays[1::2]))


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator,
             hidden_activation: str = "relu", out_scale: float = 1.0) -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) initialisation, identity output layer."""
    sizes = tuple(int(n) for n in layer_sizes)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        if i == len(sizes) - 2:
            bound *= out_scale
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    acts = (hidden_activation,) * (len(sizes) - 2) + ("identity",)
    return MlpParams(sizes, acts, tuple(weights), tuple(biases))


def mlp_forward(params: MlpParams, x):
    """Apply the network to ``x`` of shape (in,) or (n, in)."""
    single = _val(x).ndim == 1
    if _val(x).shape[-1] != params.n_in:
        raise ValueError(f"input has size {_val(x).shape[-1]}, network expects {params.n_in}")
    h = getitem(x, (None, Ellipsis)) if single else x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = affine(h, w, b)
        if act == "relu":
            h = relu(h)
        elif act == "tanh":
            h = tanh(h)
    return getitem(h, 0) if single else h


# ----------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: tuple
    v: tuple
    step: int = 0


def adam_init(arrays: Sequence[np.ndarray]) -> AdamState:
    return AdamState(tuple(np.zeros_like(a) for a in arrays), tuple(np.zeros_like(a) for a in arrays), 0)


def adam_step(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              name: str = "params"):
    """One bias-corrected Adam step; returns ``(new_arrays, new_state)``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("arrays, grads and optimizer state differ in length")
    for i, g in enumerate(grads):
        if g.shape != arrays[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, expected {arrays[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}[{i}]")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_arrays.append(a - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(tuple(new_m), tuple(new_v), t)


# ----------------------------------------------------------------------------
# Gaussian policies


@dataclass(frozen=True)
class GaussianPolicy:
    """Diagonal Gaussian head; the net emits ``[mean, log_std]`` per action dim.

    With ``squash=True`` actions are ``center + half_range * tanh(u)`` and lie
    strictly inside ``[action_low, action_high]``.
    """
    net: MlpParams
    action_low: np.ndarray
    action_high: np.ndarray
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    squash: bool = True

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.action_low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.action_high, dtype=np.float64))
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)
        if self.net.n_out != 2 * low.size or high.shape != low.shape:
            raise ValueError("net output must be 2 * action_dim")
        if self.squash and not np.all(high > low):
            raise ValueError("action_high must exceed action_low")

    @property
    def action_dim(self) -> int:
        return self.action_low.size

    @property
    def state_dim(self) -> int:
        return self.net.n_in

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.action_high + self.action_low)

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)

    def with_net(self, net: MlpParams) -> "GaussianPolicy":
        return replace(self, net=net)


def make_policy(state_dim: int, action_low, action_high, hidden: Sequence[int],
                rng: np.random.Generator, squash: bool = True) -> GaussianPolicy:
    action_low = np.atleast_1d(np.asarray(action_low, dtype=np.float64))
    net = init_mlp([state_dim, *hidden, 2 * action_low.size], rng)
    return GaussianPolicy(net, action_low, np.atleast_1d(np.asarray(action_high, dtype=np.float64)),
                          squash=squash)


def mean_log_std(policy: GaussianPolicy, s, net: MlpParams | None = None):
    out = mlp_forward(net or policy.net, s)
    d = policy.action_dim
    mu = getitem(out, (Ellipsis, slice(0, d)))
    log_std = clip(getitem(out, (Ellipsis, slice(d, 2 * d))), policy.log_std_min, policy.log_std_max)
    return mu, log_std


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (LOG_2 - u - softplus(-2.0 * u))


def _gauss_log_prob(xi, log_std):
    return -0.5 * square(xi) - log_std - 0.5 * LOG_2PI


def sample_with_noise(policy: GaussianPolicy, s, xi: np.ndarray, net: MlpParams | None = None):
    """Reparameterised action for given standard-normal noise ``xi``.

    Returns ``(action, log_prob)``; both are Tensors when ``net`` holds Tensors.
    """
    mu, log_std = mean_log_std(policy, s, net)
    u = mu + exp(log_std) * xi
    terms = _gauss_log_prob(xi, log_std)
    if not policy.squash:
        return u, sum(terms, axis=-1)
    y = tanh(u)
    a = y * policy.half_range + policy.center
    terms = terms - np.log(policy.half_range) - _log1m_tanh_sq(u)
    return a, sum(terms, axis=-1)


def policy_sample(policy: GaussianPolicy, s, rng: np.random.Generator):
    """Draw ``a ~ pi(.|s)``; returns ``(action, log_prob)`` as arrays."""
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("state must be finite")
    xi = rng.standard_normal(s.shape[:-1] + (policy.action_dim,))
    return sample_with_noise(policy, s, xi)


def policy_log_prob(policy: GaussianPolicy, s, a, net: MlpParams | None = None):
    """Log density of ``a`` under ``pi(.|s)``, differentiable in ``net``."""
    a = np.asarray(a, dtype=np.float64)
    mu, log_std = mean_log_std(policy, s, net)
    if policy.squash:
        y = (a - policy.center) / policy.half_range
        if np.any(np.abs(y) >= 1.0):
            raise ValueError("action on or outside the squashing bounds")
        u = np.arctanh(y)
    else:
        u = a
    xi = (u - mu) * exp(-log_std)
    terms = _gauss_log_prob(xi, log_std)
    if policy.squash:
        terms = terms - np.log(policy.half_range) - _log1m_tanh_sq(u)
    return sum(terms, axis=-1)


def deterministic_action(policy: GaussianPolicy, s) -> np.ndarray:
    mu, _ = mean_log_std(policy, np.asarray(s, dtype=np.float64))
    if not policy.squash:
        return mu
    return policy.center + policy.half_range * np.tanh(mu)


# ----------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "xferlab.mlp/1"


def mlp_to_dict(params: MlpParams) -> dict:
    return {
        "layer_sizes": list(params.layer_sizes),
        "activations": list(params.activations),
        "weights": [np.asarray(w).tolist() for w in params.weights],
        "biases": [np.asarray(b).tolist() for b in params.biases],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    sizes = tuple(int(n) for n in d["layer_sizes"])
    weights = tuple(np.array(w, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
                    for i, w in enumerate(d["weights"]))
    biases = tuple(np.array(b, dtype=np.float64).reshape(sizes[i + 1]) for i, b in enumerate(d["biases"]))
    return MlpParams(sizes, tuple(d["activations"]), weights, biases)


def policy_to_dict(policy: GaussianPolicy) -> dict:
    d = mlp_to_dict(policy.net)
    d["policy"] = {
        "action_low": policy.action_low.tolist(),
        "action_high": policy.action_high.tolist(),
        "log_std_min": policy.log_std_min,
        "log_std_max": policy.log_std_max,
        "squash": policy.squash,
    }
    return d


def policy_from_dict(d: dict) -> GaussianPolicy:
    meta = d["policy"]
    return GaussianPolicy(mlp_from_dict(d), np.array(meta["action_low"], dtype=np.float64),
                          np.array(meta["action_high"], dtype=np.float64),
                          float(meta["log_std_min"]), float(meta["log_std_max"]), bool(meta["squash"]))


def save_checkpoint(path, payload: dict) -> None:
    """Write ``payload`` as JSON. Floats use Python's shortest round-trip repr."""
    doc = {"format": CHECKPOINT_FORMAT, **payload}
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} checkpoint")
    return doc
