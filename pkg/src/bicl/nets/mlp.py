"""Manual-backprop multilayer perceptrons over swappable kernels.

The layer math lives in the kernel modules (compiled or numpy, selected at
import); this module owns parameters, the layer loop, Adam, the numeric
gradient check, and the flat-binary snapshot format.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from ..errors import ContractViolation
from ._backend import kernels
from ._pykernels import IDENTITY, RELU, SOFTMAX, TANH

HEAD_CODES = {"identity": IDENTITY, "tanh": TANH, "softmax": SOFTMAX}

SNAPSHOT_MAGIC = b"BICLNET1"


class Mlp:
    """Fully connected net: ReLU hidden layers and a configurable output head.

    Layer l computes act(x @ weights[l] + biases[l]); everything is float64.
    Weights and biases are initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    from the given seed.
    """

    def __init__(self, sizes, head: str = "identity", seed=0):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractViolation("sizes needs at least two positive entries")
        if head not in HEAD_CODES:
            raise ContractViolation(f"unknown output head {head!r}")
        self.sizes = sizes
        self.head = head
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def _act_code(self, layer: int) -> int:
        return HEAD_CODES[self.head] if layer == self.num_layers - 1 else RELU

    def param_arrays(self) -> list:
        """Parameter arrays in serialization order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.sizes = self.sizes
        dup.head = self.head
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    # forward ---------------------------------------------------------------

    def forward_cached(self, x) -> list:
        """Batched forward pass keeping each post-activation for backward.

        Returns [input, layer1, ..., output]; the input is coerced to a
        C-contiguous float64 (batch, fan_in) array.
        """
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ContractViolation(
                f"input shape {x.shape} does not match fan-in {self.sizes[0]}")
        acts = [x]
        for l in range(self.num_layers):
            acts.append(kernels.linear_act_forward(
                acts[-1], self.weights[l], self.biases[l], self._act_code(l)))
        return acts

    def forward_batch(self, x) -> np.ndarray:
        return self.forward_cached(x)[-1]

    def forward(self, x) -> np.ndarray:
        """Single-vector forward: (fan_in,) -> (fan_out,)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ContractViolation("forward takes a single 1-D input")
        return self.forward_batch(x[None, :])[0]

    # backward --------------------------------------------------------------

    def backward_batch(self, acts, upstream, from_logits: bool = False,
                       want_dx: bool = False, want_params: bool = True):
        """Exact reverse-mode pass for a cached forward.

        upstream is dLoss/d(output), or dLoss/d(pre-head logits) when
        from_logits is set (a loss fused with the softmax head).  Returns
        (param_grads, dx): param_grads is a (dw, db) pair per layer or None
        when not requested; dx is dLoss/d(input) or None.
        """
        g = np.ascontiguousarray(upstream, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ContractViolation("upstream gradient shape mismatch")
        grads = [None] * self.num_layers if want_params else None
        last = self.num_layers - 1
        for l in range(last, -1, -1):
            if l == last and from_logits:
                delta = g
            else:
                delta = kernels.act_backward(g, acts[l + 1], self._act_code(l))
            dw, db, dx = kernels.linear_backward(
                delta, acts[l], self.weights[l],
                want_dx or l > 0, want_params)
            if want_params:
                grads[l] = (dw, db)
            g = dx
        return grads, (g if want_dx else None)

    def backward(self, x, upstream, from_logits: bool = False):
        """Parameter gradients of sum(output * upstream) for one input row."""
        x = np.asarray(x, dtype=np.float64)
        acts = self.forward_cached(x[None, :])
        grads, _ = self.backward_batch(
            acts, np.asarray(upstream, dtype=np.float64)[None, :], from_logits)
        return grads


class Adam:
    """Adam optimizer bound to one Mlp's parameters; steps mutate in place."""

    def __init__(self, net: Mlp, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ContractViolation("learning rate must be positive")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p) for p in net.param_arrays()]
        self.v = [np.zeros_like(p) for p in net.param_arrays()]
        self.t = 0

    def step(self, net: Mlp, grads) -> None:
        """Apply one update from per-layer (dw, db) gradient pairs."""
        flat = []
        for dw, db in grads:
            flat.append(dw)
            flat.append(db)
        params = net.param_arrays()
        if len(flat) != len(params):
            raise ContractViolation("gradient list does not match the net's layers")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            g = np.ascontiguousarray(g, dtype=np.float64)
            kernels.adam_step(p.reshape(-1), g.reshape(-1), m.reshape(-1),
                              v.reshape(-1), self.lr, self.beta1, self.beta2,
                              self.eps, bc1, bc2)


def apply_update(net: Mlp, grads, opt: Adam):
    """One optimizer step; returns the (mutated) net and optimizer."""
    opt.step(net, grads)
    return net, opt


def gradient_check(net: Mlp, x, loss_tag: str, seed=0, step: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of a probe loss over every parameter.

    loss tags: "dot" (w . output, seeded w), "quadratic"
    (0.5 * ||output - t||^2, seeded t), "xent" (-log output[c] for a seeded
    class c; softmax head required, gradient taken through the fused
    logits path).
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    out_dim = net.sizes[-1]
    if loss_tag == "dot":
        probe = rng.normal(size=out_dim)

        def loss_of(o):
            return float(probe @ o)

        def upstream(o):
            return probe, False
    elif loss_tag == "quadratic":
        target = rng.normal(size=out_dim)

        def loss_of(o):
            d = o - target
            return 0.5 * float(d @ d)

        def upstream(o):
            return o - target, False
    elif loss_tag == "xent":
        if net.head != "softmax":
            raise ContractViolation("xent probe needs a softmax head")
        cls = int(rng.integers(out_dim))

        def loss_of(o):
            return -math.log(o[cls])

        def upstream(o):
            g = o.copy()
            g[cls] -= 1.0
            return g, True
    else:
        raise ContractViolation(f"unknown loss tag {loss_tag!r}")

    out = net.forward(x)
    g, fused = upstream(out)
    analytic = net.backward(x, g, from_logits=fused)
    worst = 0.0
    for layer, (dw, db) in enumerate(analytic):
        for arr, ana in ((net.weights[layer], dw), (net.biases[layer], db)):
            it = np.nditer(ana, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                hi = loss_of(net.forward(x))
                arr[idx] = orig - step
                lo = loss_of(net.forward(x))
                arr[idx] = orig
                numeric = (hi - lo) / (2.0 * step)
                a = float(ana[idx])
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


def save_net(net: Mlp, path) -> None:
    """Write a parameter snapshot.

    Layout: magic "BICLNET1", uint32 layer-size count, uint32 sizes, then per
    layer the row-major float64 weight matrix followed by the bias vector,
    all little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(net.sizes)))
        fh.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_net(path, head: str = "identity") -> Mlp:
    """Read a snapshot written by save_net.

    The head is not stored in the file; callers record it alongside (the
    bundle manifest does).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise ContractViolation(f"{path}: bad snapshot magic")
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    if count < 2 or len(blob) < offset + 4 * count:
        raise ContractViolation(f"{path}: truncated snapshot header")
    sizes = struct.unpack_from(f"<{count}I", blob, offset)
    offset += 4 * count
    net = object.__new__(Mlp)
    if head not in HEAD_CODES:
        raise ContractViolation(f"unknown output head {head!r}")
    net.sizes = tuple(int(s) for s in sizes)
    net.head = head
    net.weights = []
    net.biases = []
    for fan_in, fan_out in zip(net.sizes, net.sizes[1:]):
        wn = fan_in * fan_out * 8
        if offset + wn + fan_out * 8 > len(blob):
            raise ContractViolation(f"{path}: truncated snapshot body")
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += wn
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += fan_out * 8
        net.weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        net.biases.append(b.astype(np.float64))
    if offset != len(blob):
        raise ContractViolation(f"{path}: trailing bytes in snapshot")
    return net
