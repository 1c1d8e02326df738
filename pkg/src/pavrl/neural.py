"""Small fully connected networks with exact backpropagation.

Parameters are float64 arrays. Weight matrices are stored ``(fan_in, fan_out)``
so a batch ``X`` of shape ``(n, fan_in)`` maps through ``X @ W + b``.

Model file format (``.npz``)
----------------------------
``header``
    UTF-8 JSON: ``format`` ("pavrl-mlp"), ``version`` (1), ``sizes``,
    ``head``, ``seed``, ``checksum`` (SHA-256 over the parameter bytes in
    order) and an optional ``extra`` mapping.
``p0``, ``p1``, ...
    ``W0, b0, W1, b1, ...`` in layer order.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import SequencingError, ValidationError

FORMAT_NAME = "pavrl-mlp"
FORMAT_VERSION = 1
HEADS = ("linear", "softmax")


class Mlp:
    """Feed-forward network: rectifier hidden layers, linear or softmax head."""

    def __init__(self, sizes, head="linear", seed=0, params=None, out_scale=1.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValidationError("an Mlp needs at least an input and an output size")
        if any(s <= 0 for s in sizes):
            raise ValidationError(f"layer sizes must be positive, got {sizes}")
        if head not in HEADS:
            raise ValidationError(f"head must be one of {HEADS}, got {head!r}")
        self.sizes = sizes
        self.head = head
        self.seed = seed
        self.version = 0
        if params is None:
            params = _init_params(sizes, seed, out_scale)
        self.params = [np.array(p, dtype=np.float64) for p in params]
        for i, (W, b) in enumerate(zip(self.params[0::2], self.params[1::2])):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValidationError(f"layer {i}: parameter shapes do not match sizes {sizes}")

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.head, self.seed, params=[p.copy() for p in self.params])

    def load_state(self, other: "Mlp") -> None:
        """Copy parameters from a structurally identical network."""
        if other.sizes != self.sizes or other.head != self.head:
            raise ValidationError("networks are not structurally identical")
        for p, q in zip(self.params, other.params):
            p[...] = q
        self.version += 1

    def forward(self, x):
        return forward(self, x)

    def predict(self, x):
        return forward(self, x)[0]

    def backward(self, cache, grad_output, wrt_logits=False):
        return backward(self, cache, grad_output, wrt_logits)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def __repr__(self):
        return f"Mlp(sizes={self.sizes}, head={self.head!r})"


def _init_params(sizes, seed, out_scale):
    # He-normal on hidden layers (std sqrt(2/fan_in)), LeCun-normal times out_scale on the head; biases zero
    rng = np.random.default_rng(seed)
    params = []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == n_layers - 1
        std = np.sqrt((1.0 if last else 2.0) / fan_in) * (out_scale if last else 1.0)
        params.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def mlp_new(sizes, head="linear", seed=0, out_scale=1.0) -> Mlp:
    return Mlp(sizes, head, seed, out_scale=out_scale)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class Cache:
    """Activations recorded by :func:`forward` for one batch."""

    net_id: int
    version: int
    squeeze: bool
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activations of hidden layers
    logits: np.ndarray | None = None
    output: np.ndarray | None = None


def forward(m: Mlp, x):
    """Return ``(output, cache)``; a 1-D ``x`` gives a 1-D output."""
    X = np.asarray(x, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.n_inputs:
        raise ValidationError(f"expected input of width {m.n_inputs}, got shape {np.shape(x)}")
    cache = Cache(id(m), m.version, squeeze)
    h = X
    n_layers = len(m.sizes) - 1
    for i in range(n_layers):
        W, b = m.params[2 * i], m.params[2 * i + 1]
        cache.inputs.append(h)
        z = h @ W + b
        if i < n_layers - 1:
            cache.pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    cache.logits = h
    out = softmax(h) if m.head == "softmax" else h
    cache.output = out
    return (out[0] if squeeze else out), cache


def backward(m: Mlp, cache: Cache, grad_output, wrt_logits=False):
    """Gradients of a scalar loss w.r.t. every parameter, in ``m.params`` order.

    ``grad_output`` is dLoss/dOutput with the output's shape. For a softmax
    head pass ``wrt_logits=True`` when the gradient is already w.r.t. logits.
    """
    if cache.net_id != id(m) or cache.version != m.version:
        raise SequencingError("cache does not belong to the current parameters of this network")
    G = np.asarray(grad_output, dtype=np.float64)
    if cache.squeeze and G.ndim == 1:
        G = G[None, :]
    if G.shape != cache.output.shape:
        raise ValidationError(f"output gradient shape {G.shape} != output shape {cache.output.shape}")
    if m.head == "softmax" and not wrt_logits:
        p = cache.output
        G = p * (G - (G * p).sum(axis=-1, keepdims=True))
    grads = [None] * len(m.params)
    n_layers = len(m.sizes) - 1
    delta = G
    for i in reversed(range(n_layers)):
        W = m.params[2 * i]
        grads[2 * i] = cache.inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (cache.pre[i - 1] > 0)
    return grads


# ---------------------------------------------------------------------------
# gradient verification


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(loss_fn, params, grads, eps=1e-5, max_checks=10_000, seed=0, floor=1e-8):
    """Max relative error between ``grads`` and central differences of ``loss_fn()``.

    ``loss_fn`` takes no arguments and evaluates the loss from the current
    contents of ``params`` (perturbed in place and restored). Above
    ``max_checks`` scalar parameters a seeded random subsample is checked.
    """
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    index = [(k, j) for k, p in enumerate(params) for j in range(p.size)]
    if len(index) > max_checks:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(index), size=max_checks, replace=False)
        index = [index[i] for i in sorted(pick)]
    worst = 0.0
    for k, j in index:
        flat = params[k].reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        up = loss_fn()
        flat[j] = old - eps
        down = loss_fn()
        flat[j] = old
        numeric = (up - down) / (2 * eps)
        analytic = grads[k].reshape(-1)[j]
        worst = max(worst, float(relative_error(analytic, numeric, floor)))
    return worst


def grad_check(m: Mlp, x, loss, eps=1e-5, max_checks=10_000, seed=0, backward_fn=None):
    """Compare :func:`backward` against central differences for one network.

    ``loss(output) -> (value, dvalue/doutput)``. ``backward_fn`` replaces
    :func:`backward` (used to test that a broken gradient is caught).
    """
    backward_fn = backward if backward_fn is None else backward_fn
    out, cache = forward(m, x)
    _, g = loss(out)
    grads = backward_fn(m, cache, g)

    def value():
        return loss(forward(m, x)[0])[0]

    return check_gradients(value, m.params, grads, eps, max_checks, seed)


# ---------------------------------------------------------------------------
# optimizers


class Optimizer:
    """Plain gradient descent (``"sgd"``) or bias-corrected Adam (``"adam"``)."""

    def __init__(self, params, kind="adam", lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer kind {kind!r}")
        if not lr > 0:
            raise ValidationError("learning rate must be > 0")
        self.kind = kind
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        shapes = [p.shape for p in params]
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        """Update ``params`` in place. Rejects non-finite gradients."""
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ValidationError("gradient shapes do not match parameters")
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise ValidationError("non-finite gradient; update rejected")
        self.t += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    @classmethod
    def from_state(cls, params, state) -> "Optimizer":
        opt = cls(params, state["kind"], state["lr"], state["beta1"], state["beta2"], state["eps"])
        opt.t = state["t"]
        opt.m = [np.array(a) for a in state["m"]]
        opt.v = [np.array(a) for a in state["v"]]
        return opt


def optimizer_step(m: Mlp, grads, opt: Optimizer) -> Mlp:
    opt.step(m.params, grads)
    m.version += 1
    return m


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


# ---------------------------------------------------------------------------
# serialization


def to_bytes(m: Mlp, extra: dict | None = None) -> bytes:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "sizes": m.sizes,
        "head": m.head,
        "seed": m.seed,
        "checksum": m.checksum(),
        "extra": extra or {},
    }
    arrays = {f"p{i}": p for i, p in enumerate(m.params)}
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return buf.getvalue()


def from_bytes(data: bytes):
    """Return ``(mlp, extra)``; raises if the checksum does not match."""
    with np.load(io.BytesIO(data), allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != FORMAT_NAME:
            raise ValidationError("not a pavrl model file")
        if header.get("version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported model format version {header.get('version')}")
        n = 2 * (len(header["sizes"]) - 1)
        params = [z[f"p{i}"] for i in range(n)]
    m = Mlp(header["sizes"], header["head"], header["seed"], params=params)
    if m.checksum() != header["checksum"]:
        raise ValidationError("model checksum mismatch; file is corrupted")
    return m, header.get("extra", {})


def save(m: Mlp, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(m, extra))


def load(path):
    return from_bytes(Path(path).read_bytes())
