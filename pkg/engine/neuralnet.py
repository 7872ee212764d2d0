"""
PruneGNN — Neural-Net Core
A small numpy tensor with reverse-mode differentiation, dense MLPs, and Adam.
Only the ops the GNN and its sum-rate loss need.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from config.settings import TRAINING_CONFIG
from engine.errors import DimensionError


# ══════════════════════════════════════════════
# TENSOR
# ══════════════════════════════════════════════

class Tensor:
    def __init__(self, data, ctx=None, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.ctx = ctx
        self.requires_grad = requires_grad

    def __repr__(self):
        return f"<Tensor shape={self.data.shape} grad={'yes' if self.requires_grad else 'no'}>"

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __neg__(self): return Neg.apply(self)
    def __add__(self, x): return Add.apply(self, x)
    def __radd__(self, x): return Add.apply(x, self)
    def __sub__(self, x): return Sub.apply(self, x)
    def __rsub__(self, x): return Sub.apply(x, self)
    def __mul__(self, x): return Mul.apply(self, x)
    def __rmul__(self, x): return Mul.apply(x, self)
    def __truediv__(self, x): return Div.apply(self, x)
    def __rtruediv__(self, x): return Div.apply(x, self)
    def __matmul__(self, x): return MatMul.apply(self, x)

    def relu(self): return Relu.apply(self)
    def sigmoid(self): return Sigmoid.apply(self)
    def log(self): return Log.apply(self)
    def sum(self, axis=None, keepdims=False): return Sum.apply(self, axis=axis, keepdims=keepdims)
    def reshape(self, *shape): return Reshape.apply(self, shape=shape)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.ctx is None or node.grad is None:
                continue
            grads = node.ctx.backward(node.grad)
            for parent, g in zip(node.ctx.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


def _toposort(root: Tensor) -> list:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            for parent in node.ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ══════════════════════════════════════════════
# FUNCTIONS
# ══════════════════════════════════════════════

class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *xs, **kwargs) -> Tensor:
        tensors = [as_tensor(x) for x in xs]
        ctx = cls(*tensors)
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        needs = any(t.requires_grad for t in tensors)
        return Tensor(out, ctx=ctx if needs else None, requires_grad=needs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Neg(Function):
    def forward(self, x): return -x
    def backward(self, grad): return (-grad,)


class Add(Function):
    def forward(self, x, y): return x + y
    def backward(self, grad): return grad, grad


class Sub(Function):
    def forward(self, x, y): return x - y
    def backward(self, grad): return grad, -grad


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad): return self.y * grad, self.x * grad


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad): return grad / self.y, -grad * self.x / self.y ** 2


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2:
            raise DimensionError(f"matmul needs 2-D operands, got {x.shape} @ {y.shape}")
        if x.shape[1] != y.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad): return grad @ self.y.T, self.x.T @ grad


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad): return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.s

    def backward(self, grad): return (grad * self.s * (1.0 - self.s),)


class Log(Function):
    def forward(self, x):
        self.x = x
        with np.errstate(divide="ignore"):
            return np.log(x)

    def backward(self, grad): return (grad / self.x,)


class Reshape(Function):
    def forward(self, x, shape=None):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad): return (grad.reshape(self.shape),)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


def _segment_matrix(segment_ids: np.ndarray, num_segments: int) -> sparse.csr_matrix:
    """S[k][i] = 1 iff segment_ids[i] == k; S @ x sums rows per segment in a fixed order."""
    n = len(segment_ids)
    return sparse.csr_matrix(
        (np.ones(n), (np.asarray(segment_ids, dtype=np.int64), np.arange(n))),
        shape=(num_segments, n),
    )


class Gather(Function):
    """Row gather x[index]; the backward scatter-adds into the source rows."""

    def forward(self, x, index=None):
        self.index = np.asarray(index, dtype=np.int64)
        self.rows = x.shape[0]
        return x[self.index]

    def backward(self, grad):
        return (np.asarray(_segment_matrix(self.index, self.rows) @ grad),)


class SegmentSum(Function):
    """out[k] = Σ_{i: ids[i]=k} x[i]; empty segments are zero."""

    def forward(self, x, segment_ids=None, num_segments=None):
        self.ids = np.asarray(segment_ids, dtype=np.int64)
        if len(self.ids) != x.shape[0]:
            raise DimensionError(f"segment ids ({len(self.ids)}) do not match rows ({x.shape[0]})")
        return np.asarray(_segment_matrix(self.ids, num_segments) @ x)

    def backward(self, grad): return (grad[self.ids],)


class Concat(Function):
    def forward(self, *xs, axis=-1):
        self.axis = axis
        self.sizes = [x.shape[axis] for x in xs]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def gather(x, index) -> Tensor:
    return Gather.apply(x, index=index)


def segment_sum(x, segment_ids, num_segments: int) -> Tensor:
    return SegmentSum.apply(x, segment_ids=segment_ids, num_segments=num_segments)


def concat(tensors, axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


# ══════════════════════════════════════════════
# MLP
# ══════════════════════════════════════════════

ACTIVATIONS = ("linear", "relu", "sigmoid")


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return x.relu()
    if name == "sigmoid":
        return x.sigmoid()
    return x


class Mlp:
    """Dense chain: ReLU on hidden layers, configurable output activation."""

    def __init__(self, layer_dims, output_activation: str = "linear", seed: int = 0):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise DimensionError(f"an MLP needs at least two positive dims, got {layer_dims}")
        if output_activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation '{output_activation}'")
        self.layer_dims = layer_dims
        self.output_activation = output_activation
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise DimensionError(f"MLP expects (N, {self.input_dim}) input, got {x.data.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            x = _activate(x, self.output_activation if i == last else "relu")
        return x

    def parameters(self) -> list:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def num_parameters(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.num_parameters(),):
            raise DimensionError(f"expected {self.num_parameters()} parameters, got {flat.shape}")
        pos = 0
        for p in self.parameters():
            n = p.data.size
            p.data = flat[pos:pos + n].reshape(p.data.shape).copy()
            pos += n


def mlp_forward(m: Mlp, x) -> np.ndarray:
    """Forward a single vector (or a batch of rows) and return plain arrays."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != m.input_dim:
            raise DimensionError(f"input has {x.shape[0]} entries, MLP expects {m.input_dim}")
        return m(Tensor(x[None, :])).data[0]
    return m(Tensor(x)).data


# ══════════════════════════════════════════════
# ADAM
# ══════════════════════════════════════════════

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


def adam_step(params, grads, state: AdamState,
              lr: float = TRAINING_CONFIG["learning_rate"],
              beta1: float = TRAINING_CONFIG["beta1"],
              beta2: float = TRAINING_CONFIG["beta2"],
              eps: float = TRAINING_CONFIG["eps"]):
    """One bias-corrected Adam update. Returns (new_params, new_state); inputs are not mutated."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if p.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} does not match param shape {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step)


class Adam:
    """Stateful wrapper that applies adam_step to a list of Tensors in place."""

    def __init__(self, params, lr=TRAINING_CONFIG["learning_rate"], beta1=TRAINING_CONFIG["beta1"],
                 beta2=TRAINING_CONFIG["beta2"], eps=TRAINING_CONFIG["eps"]):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, value in zip(self.params, new):
            p.data = value

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
