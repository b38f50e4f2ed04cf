"""Minimal dense-network engine: 2-D tensors, reverse-mode autodiff, Adam.

Everything is float64 and batch-first: a Tensor wraps a (rows, cols) numpy
array plus the closure that routes gradients to its parents. The engine is
deliberately small; the one non-obvious piece is input_gradient, which
expresses the critic's input gradient as ordinary graph ops so that a
penalty built on it can be differentiated w.r.t. the parameters with a
single backward pass (the activation masks are piecewise constant, so
their own derivative vanishes almost everywhere).
"""

from __future__ import annotations

import numpy as np


class DimensionMismatch(Exception):
    pass


class GraphNotRecorded(Exception):
    pass


class UnsupportedLayer(Exception):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager suppressing graph construction (forward data only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A 2-D float64 array with an optional autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionMismatch("item() requires a scalar tensor")
        return float(self.data[0, 0])

    def __getstate__(self):
        return {"data": self.data, "requires_grad": self.requires_grad}

    def __setstate__(self, state):
        self.data = state["data"]
        self.grad = None
        self.requires_grad = state["requires_grad"]
        self._parents = ()
        self._backward = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # operator sugar; scalars become constant multiplications/shifts
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_const(self, other)

    def __rmul__(self, other):
        return mul_const(self, other)

    def __neg__(self):
        return mul_const(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _needs_graph(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _node(data, parents, backward) -> Tensor:
    if _needs_graph(*parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(grad, out):
        return (_unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape))

    return _node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(grad, out):
        return (_unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(grad, out):
        return (_unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape))

    return _node(data, (a, b), backward)


def add_const(a: Tensor, c) -> Tensor:
    return _node(a.data + c, (a,), lambda grad, out: (grad,))


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a scalar or a constant array (no gradient flows into c)."""
    c = np.asarray(c, dtype=np.float64)
    data = a.data * c

    def backward(grad, out):
        return (_unbroadcast(grad * c, a.shape),)

    return _node(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(grad, out):
        return (grad @ b.data.T, a.data.T @ grad)

    return _node(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T, (a,), lambda grad, out: (grad.T,))


def square(a: Tensor) -> Tensor:
    return _node(a.data ** 2, (a,), lambda grad, out: (grad * 2.0 * a.data,))


def powc(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent

    def backward(grad, out):
        return (grad * exponent * a.data ** (exponent - 1.0),)

    return _node(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(grad, out):
        return (grad * 0.5 / out,)

    return _node(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(grad, out):
        return (grad * out,)

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda grad, out: (grad / a.data,))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(grad, out):
        return (grad * (1.0 - out ** 2),)

    return _node(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0.0, 1.0, slope)

    def backward(grad, out):
        return (grad * mask,)

    return _node(a.data * mask, (a,), backward)


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def sum_all(a: Tensor) -> Tensor:
    data = np.array([[a.data.sum()]])

    def backward(grad, out):
        return (np.full_like(a.data, grad[0, 0]),)

    return _node(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.array([[a.data.mean()]])

    def backward(grad, out):
        return (np.full_like(a.data, grad[0, 0] / n),)

    return _node(data, (a,), backward)


def sum_rows(a: Tensor) -> Tensor:
    """Row sums: (n, m) -> (n, 1)."""
    data = a.data.sum(axis=1, keepdims=True)

    def backward(grad, out):
        return (np.repeat(grad, a.data.shape[1], axis=1),)

    return _node(data, (a,), backward)


def mean_cols(a: Tensor) -> Tensor:
    """Column means: (n, m) -> (1, m)."""
    n = a.data.shape[0]
    data = a.data.mean(axis=0, keepdims=True)

    def backward(grad, out):
        return (np.repeat(grad / n, n, axis=0),)

    return _node(data, (a,), backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionMismatch(f"concat_cols got row counts {rows}")
    widths = [p.data.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def backward(grad, out):
        grads, offset = [], 0
        for w in widths:
            grads.append(grad[:, offset:offset + w])
            offset += w
        return tuple(grads)

    return _node(data, tuple(parts), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[:, start:stop]

    def backward(grad, out):
        full = np.zeros_like(a.data)
        full[:, start:stop] = grad
        return (full,)

    return _node(data, (a,), backward)


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise DimensionMismatch(f"cannot reshape {a.data.shape} to ({rows}, {cols})")
    data = a.data.reshape(rows, cols)

    def backward(grad, out):
        return (grad.reshape(a.data.shape),)

    return _node(data, (a,), backward)


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Fused batch normalization with batch statistics; returns (out, mean, var)."""
    n = x.data.shape[0]
    mean = x.data.mean(axis=0, keepdims=True)
    centered = x.data - mean
    var = np.einsum("ij,ij->j", centered, centered)[None, :] / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered
    xhat *= inv  # centered buffer reused; only xhat is needed from here on
    data = gamma.data * xhat
    data += beta.data

    def backward(grad, out):
        dbeta = grad.sum(axis=0, keepdims=True)
        dgamma = (grad * xhat).sum(axis=0, keepdims=True)
        dxhat = grad * gamma.data
        dx = (inv / n) * (
            n * dxhat
            - dxhat.sum(axis=0, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
        )
        return (dx, dgamma, dbeta)

    return _node(data, (x, gamma, beta), backward), mean, var


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(grad, out):
        dot = (grad * p).sum(axis=1, keepdims=True)
        return (p * (grad - dot),)

    return _node(p, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    data = shifted - log_z
    p = np.exp(data)

    def backward(grad, out):
        return (grad - p * grad.sum(axis=1, keepdims=True),)

    return _node(data, (a,), backward)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates into .grad."""
    if loss.data.size != 1:
        raise DimensionMismatch("backward requires a scalar loss")
    if not loss._parents and not loss.requires_grad:
        raise GraphNotRecorded("loss has no recorded graph")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += grad
        if node._backward is None:
            continue
        parent_grads = node._backward(grad, node.data)
        for parent, pgrad in zip(node._parents, parent_grads):
            if pgrad is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pgrad
            else:
                grads[id(parent)] = pgrad


# ---------------------------------------------------------------------------
# Layers


class Affine:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @classmethod
    def build(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Affine":
        limit = np.sqrt(6.0 / fan_in)  # Kaiming-uniform
        w = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
        return cls(w, b)

    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        if x.data.shape[1] != self.weight.data.shape[0]:
            raise DimensionMismatch(
                f"affine expects {self.weight.data.shape[0]} inputs, got {x.data.shape[1]}"
            )
        return add(matmul(x, self.weight), self.bias)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.weight, "b": self.bias}


class LeakyRelu:
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        return leaky_relu(x, self.slope)

    def params(self):
        return {}


class Relu:
    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        return relu(x)

    def params(self):
        return {}


class Tanh:
    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        return tanh(x)

    def params(self):
        return {}


class BatchNorm:
    """Batch statistics in train mode, running averages in eval mode."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones((1, dim)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, dim)), requires_grad=True)
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        if mode == "train":
            out, mean, var = batchnorm_train(x, self.gamma, self.beta, self.eps)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            return out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = mul_const(add_const(x, -self.running_mean), inv)
        return add(mul(xhat, self.gamma), self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class Dropout:
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.p = p

    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        if mode != "train" or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = (rng.random(x.data.shape) >= self.p) / (1.0 - self.p)
        return mul_const(x, mask)

    def params(self):
        return {}


class SpanHead:
    """Output activation map: tanh at given positions, softmax per span."""

    def __init__(self, width: int, tanh_positions: list[int], softmax_spans: list[tuple[int, int]]):
        segments = [(pos, 1, "tanh") for pos in tanh_positions]
        segments += [(off, w, "softmax") for off, w in softmax_spans]
        segments.sort()
        covered = 0
        for off, w, _ in segments:
            if off != covered:
                raise DimensionMismatch("span head segments must tile the output row")
            covered += w
        if covered != width:
            raise DimensionMismatch("span head segments must cover the full width")
        self.width = width
        self.segments = segments

    def forward(self, x: Tensor, mode: str, rng) -> Tensor:
        if x.data.shape[1] != self.width:
            raise DimensionMismatch(f"span head expects width {self.width}, got {x.data.shape[1]}")
        parts = []
        for off, w, kind in self.segments:
            piece = slice_cols(x, off, off + w)
            parts.append(tanh(piece) if kind == "tanh" else softmax_rows(piece))
        return concat_cols(parts)

    def params(self):
        return {}


class Mlp:
    """An ordered stack of layers with named parameters."""

    def __init__(self, layers: list):
        self.layers = list(layers)

    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
        return self.forward_layers(x, mode=mode, rng=rng)

    def forward_layers(self, x, mode: str = "eval", rng=None, stop: int | None = None) -> Tensor:
        out = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers[:stop]:
            out = layer.forward(out, mode, rng)
        return out

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.params().items():
                out[f"layer{i}.{name}"] = tensor
        return out


def input_gradient(mlp: Mlp, batch) -> Tensor:
    """Gradient of the summed scalar output w.r.t. each input row.

    Only affine and leaky-relu layers are supported; the returned tensor is
    a graph node, so penalties built from it can be backpropagated into the
    parameters. Activation masks are treated as constants, which is the
    exact almost-everywhere derivative for piecewise-linear layers.
    """
    for layer in mlp.layers:
        if not isinstance(layer, (Affine, LeakyRelu)):
            raise UnsupportedLayer(
                f"input_gradient supports affine and leaky-relu only, got {type(layer).__name__}"
            )
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    out = x
    masks: list[np.ndarray | None] = []
    for layer in mlp.layers:
        if isinstance(layer, Affine):
            out = layer.forward(out, "eval", None)
            masks.append(None)
        else:
            masks.append(np.where(out.data > 0.0, 1.0, layer.slope))
            out = leaky_relu(out, layer.slope)
    if out.data.shape[1] != 1:
        raise DimensionMismatch("input_gradient requires a scalar network output")

    grad = Tensor(np.ones((x.data.shape[0], 1)))
    for layer, mask in zip(reversed(mlp.layers), reversed(masks)):
        if isinstance(layer, Affine):
            grad = matmul(grad, transpose(layer.weight))
        else:
            grad = mul_const(grad, mask)
    return grad


# ---------------------------------------------------------------------------
# Optimizer


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One bias-corrected Adam update, in place on params."""
    state.setdefault("t", 0)
    state["t"] += 1
    t = state["t"]
    for name, tensor in params.items():
        grad = grads[name]
        slot = state.setdefault(name, {"m": np.zeros_like(tensor.data), "v": np.zeros_like(tensor.data)})
        m, v = slot["m"], slot["v"]
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad ** 2
        # bias-corrected update folded into one scratch array
        step = m / (1 - beta1 ** t)
        step /= np.sqrt(v / (1 - beta2 ** t)) + eps
        step *= lr
        tensor.data -= step
    return state


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def step(self) -> None:
        grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.params.items()
        }
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
