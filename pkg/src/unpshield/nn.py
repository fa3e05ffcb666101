"""Small fully-connected networks with hand-written backpropagation.

Everything is float64. Weights are stored ``(in_dim, out_dim)`` so a batch of
row vectors is evaluated as ``x @ W + b``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray | None:
    # None means "identity", so callers can skip a multiply.
    if kind == "relu":
        return z > 0.0
    if kind == "tanh":
        return 1.0 - a * a
    return None


@dataclass
class Layer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError(f"bad layer shapes {self.weights.shape} / {self.biases.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class GradientSet:
    """Gradients aligned one-to-one with ``net.params()``."""

    arrays: list[np.ndarray]

    @property
    def weights(self) -> list[np.ndarray]:
        return self.arrays[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.arrays[1::2]

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet([g * factor for g in self.arrays])


class Mlp:
    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)

    @classmethod
    def create(cls, input_dim: int, spec: Sequence[tuple[int, str]], rng: np.random.Generator) -> "Mlp":
        """Build a net from ``[(width, activation), ...]``.

        Parameters are drawn uniformly from +-1/sqrt(fan_in).
        """
        layers = []
        fan_in = input_dim
        for width, act in spec:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, width))
            b = rng.uniform(-bound, bound, size=width)
            layers.append(Layer(w, b, act))
            fan_in = width
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def architecture(self) -> list[tuple[int, int, str]]:
        return [(l.in_dim, l.out_dim, l.activation) for l in self.layers]

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass that also returns the cache ``backward_cached`` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has dim {x.shape[-1]}, net expects {self.input_dim}")
        cache = []
        h = x
        for layer in self.layers:
            z = h @ layer.weights + layer.biases
            a = _activate(z, layer.activation)
            cache.append((h, z, a))
            h = a
        return h, cache

    def backward_cached(
        self, cache: list, output_grad: np.ndarray, param_grads: bool = True
    ) -> tuple[GradientSet, np.ndarray]:
        """Backpropagate ``output_grad``; with ``param_grads=False`` only the input gradient is formed."""
        delta = np.asarray(output_grad, dtype=np.float64)
        grads: list[np.ndarray] = []
        for layer, (h, z, a) in zip(reversed(self.layers), reversed(cache)):
            dact = _activation_grad(z, a, layer.activation)
            if dact is not None:
                delta = delta * dact
            if param_grads:
                if delta.ndim == 1:
                    dw = np.outer(h, delta)
                    db = delta.copy()
                else:
                    dw = h.T @ delta
                    db = delta.sum(axis=0)
                grads.append(db)
                grads.append(dw)
            delta = delta @ layer.weights.T
        grads.reverse()
        return GradientSet(grads), delta


def forward(net, x: np.ndarray) -> np.ndarray:
    """Evaluate ``net`` on one input vector or a ``(batch, in_dim)`` matrix."""
    if not isinstance(net, Mlp):
        return net.forward(x)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has dim {x.shape[-1]}, net expects {net.input_dim}")
    h = x
    for layer in net.layers:
        h = _activate(h @ layer.weights + layer.biases, layer.activation)
    return h


def backward(net, x: np.ndarray, output_grad: np.ndarray) -> GradientSet:
    """Gradient of ``sum(forward(net, x) * output_grad)`` w.r.t. every parameter.

    For a batch input the contributions of all rows are summed.
    """
    out, cache = net.forward_train(x)
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != out.shape:
        raise ValueError(f"output gradient shape {output_grad.shape} != output shape {out.shape}")
    grads, _ = net.backward_cached(cache, output_grad)
    return grads


def input_gradient(net: Mlp, x: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
    out, cache = net.forward_train(x)
    _, dx = net.backward_cached(cache, np.broadcast_to(output_grad, out.shape))
    return dx


def _check_congruent(params: list[np.ndarray], others: list[np.ndarray]) -> None:
    if len(params) != len(others) or any(p.shape != o.shape for p, o in zip(params, others)):
        raise ValueError("parameter shapes do not match")


def sgd_update(net, grads: GradientSet, learning_rate: float):
    """In-place ``theta -= learning_rate * grad``; returns ``net``."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    params = net.params()
    _check_congruent(params, grads.arrays)
    for p, g in zip(params, grads.arrays):
        p -= learning_rate * g
    return net


class Adam:
    """Bias-corrected Adam bound to one network's parameter list; steps in place."""

    def __init__(self, net, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        self.net = net
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]
        self.t = 0

    def step(self, grads: GradientSet):
        params = self.net.params()
        _check_congruent(params, grads.arrays)
        self.t += 1
        root_c2 = np.sqrt(1.0 - self.beta2**self.t)
        # lr * m_hat / (sqrt(v_hat) + eps), rearranged to avoid temporaries
        step = self.learning_rate * root_c2 / (1.0 - self.beta1**self.t)
        for p, g, m, v in zip(params, grads.arrays, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v)
            denom += self.eps * root_c2
            np.divide(m, denom, out=denom)
            denom *= step
            p -= denom
        return self.net


class Sgd:
    """Plain gradient descent with the same interface as :class:`Adam`."""

    def __init__(self, net, learning_rate: float):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.net = net
        self.learning_rate = learning_rate

    def step(self, grads: GradientSet):
        return sgd_update(self.net, grads, self.learning_rate)


OPTIMIZERS = {"adam": Adam, "sgd": Sgd}


def make_optimizer(kind: str, net, learning_rate: float):
    try:
        return OPTIMIZERS[kind](net, learning_rate)
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}") from None


def soft_update(target, online, rate: float):
    """In-place ``target = rate * online + (1 - rate) * target``; returns ``target``."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"soft update rate must lie in (0, 1], got {rate}")
    tp, op = target.params(), online.params()
    _check_congruent(tp, op)
    for t, o in zip(tp, op):
        if rate == 1.0:
            t[...] = o
        else:
            t *= 1.0 - rate
            t += rate * o
    return target


def _relu_preactivations(net, x: np.ndarray) -> list[np.ndarray]:
    # Composite networks expose ``relu_preactivations`` themselves.
    if hasattr(net, "relu_preactivations"):
        return net.relu_preactivations(x)
    _, cache = net.forward_train(x)
    return [z for layer, (_, z, _) in zip(net.layers, cache) if layer.activation == "relu"]


def _kink_crossed(base: list[np.ndarray], probes: list[list[np.ndarray]], tol: float) -> bool:
    # A relu unit is a hazard only if the probe moved it and it sits near zero.
    for i, z0 in enumerate(base):
        for zs in probes:
            z = zs[i]
            moved = z != z0
            if np.any(moved & ((np.abs(z) < tol) | (np.abs(z0) < tol))):
                return True
    return False


def finite_diff_check(
    net,
    x: np.ndarray,
    probe_count: int,
    rng: np.random.Generator,
    h: float = 1e-5,
    kink_tol: float = 1e-3,
) -> float:
    """Compare ``backward`` against central differences on random parameters.

    The scalar probed is ``forward(net, x) . g`` for a fixed random ``g``. A
    probe that moves any relu pre-activation lying within ``kink_tol`` of zero
    is discarded and another parameter is drawn instead. Returns the largest
    relative error seen.
    """
    params = net.params()
    sizes = [p.size for p in params]
    total = sum(sizes)
    if not 1 <= probe_count <= total:
        raise ValueError(f"probe_count must lie in [1, {total}]")
    x = np.asarray(x, dtype=np.float64)
    g = rng.standard_normal(np.shape(forward(net, x)))
    grads = backward(net, x, g).arrays
    offsets = np.cumsum([0] + sizes)
    base = _relu_preactivations(net, x)

    def scalar() -> float:
        return float(np.sum(forward(net, x) * g))

    worst = 0.0
    done = 0
    for flat in rng.permutation(total):
        if done == probe_count:
            break
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], params[k].shape)
        p = params[k]
        orig = p[idx]
        p[idx] = orig + h
        plus, z_plus = scalar(), _relu_preactivations(net, x)
        p[idx] = orig - h
        minus, z_minus = scalar(), _relu_preactivations(net, x)
        p[idx] = orig
        if _kink_crossed(base, [z_plus, z_minus], kink_tol):
            continue
        numeric = (plus - minus) / (2.0 * h)
        analytic = float(grads[k][idx])
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
        done += 1
    if done == 0:
        raise RuntimeError("every probe sat on a relu kink; try another input")
    return worst


def save_nets(path: str | Path, nets: dict[str, Mlp]) -> None:
    """Write named nets as plain text.

    Layout: ``net <name> <n_layers>``, then per layer ``layer <in> <out> <act>``
    followed by the weights row by row and one line of biases. Floats are
    written with ``repr`` so reading them back is exact.
    """
    lines = []
    for name, net in nets.items():
        lines.append(f"net {name} {len(net.layers)}")
        for layer in net.layers:
            lines.append(f"layer {layer.in_dim} {layer.out_dim} {layer.activation}")
            for row in layer.weights:
                lines.append(" ".join(repr(float(v)) for v in row))
            lines.append(" ".join(repr(float(v)) for v in layer.biases))
    Path(path).write_text("\n".join(lines) + "\n")


def load_nets(path: str | Path) -> dict[str, Mlp]:
    rows = Path(path).read_text().splitlines()
    nets: dict[str, Mlp] = {}
    i = 0
    while i < len(rows):
        head = rows[i].split()
        if not head:
            i += 1
            continue
        if head[0] != "net":
            raise ValueError(f"{path}:{i + 1}: expected 'net', got {rows[i]!r}")
        name, n_layers = head[1], int(head[2])
        i += 1
        layers = []
        for _ in range(n_layers):
            _, n_in, n_out, act = rows[i].split()
            n_in, n_out = int(n_in), int(n_out)
            w = np.array([[float(v) for v in rows[i + 1 + r].split()] for r in range(n_in)])
            b = np.array([float(v) for v in rows[i + 1 + n_in].split()])
            layers.append(Layer(w.reshape(n_in, n_out), b, act))
            i += n_in + 2
        nets[name] = Mlp(layers)
    return nets
