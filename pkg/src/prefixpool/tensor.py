"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Operations executed while a GradientTape is
active are recorded in creation order (a topological order of the DAG);
``tape.gradient`` replays them once in reverse. Tensors created with
``requires_grad=True`` are trainable leaves; everything else is constant.
Without an active tape the same ops run as plain numpy, which is what
evaluation paths use.

All public kernels validate shapes (ContractError), reject invalid numeric
domains (DomainError), and check outputs for non-finite values
(NumericError). Everything is float64 and bit-deterministic within a build.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, FrozenWriteError, NumericError

LAYERNORM_EPS = 1e-5
COSINE_EPS = 1e-12


class Tensor:
    """Immutable-by-convention float64 array container."""

    __slots__ = ("data", "requires_grad", "frozen")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.frozen = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if self.frozen:
            flags.append("frozen")
        tag = f" [{','.join(flags)}]" if flags else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; all routed through the module-level kernels.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["GradientTape"] = []


class GradientTape:
    """Records operations for one backward pass.

    Use as a context manager; ``gradient(loss, params)`` may be called once
    after (or inside) the context and returns one gradient array per
    parameter, zeros for parameters the loss does not depend on.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._tracked: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self._nodes.append((out, parents, backward))
        self._tracked.add(id(out))

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        if self._consumed:
            raise ContractError("GradientTape already consumed; build a fresh tape per step")
        if loss.data.shape != ():
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for out, parents, backward in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        return [np.asarray(grads.get(id(p), np.zeros_like(p.data))) for p in params]


def backward(tape: GradientTape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Functional alias for ``tape.gradient``."""
    return tape.gradient(loss, params)


def _active_tape() -> GradientTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(out_data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op} produced non-finite values")
    tape = _active_tape()
    if tape is not None and any(tape._tracks(p) for p in parents):
        out = Tensor(out_data, requires_grad=True)
        tape._record(out, parents, backward_fn)
        return out
    return Tensor(out_data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural kernels
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return _make(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    return _make(out, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return _make(
        out,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    out = np.log(a.data)
    return _make(out, "log", (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative input")
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make(out, "relu", (a,), lambda g: (g * (a.data > 0.0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ContractError("matmul operands must be at least 1-D")
    if a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[-1]):
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g: np.ndarray):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:  # inner product -> scalar
            return g * bd, g * ad
        if ad.ndim == 1:  # (n,) @ (..., n, m)
            ga = (g[..., None, :] @ np.swapaxes(bd, -1, -2)).reshape(g.shape[:-1] + ad.shape)
            ga = _unbroadcast(ga, ad.shape) if ga.shape != ad.shape else ga
            gb = ad[:, None] * g[..., None, :]
            return ga, _unbroadcast(gb, bd.shape)
        if bd.ndim == 1:  # (..., m, n) @ (n,)
            ga = g[..., :, None] * bd[None, :]
            gb = np.swapaxes(ad, -1, -2) @ g[..., :, None]
            return _unbroadcast(ga, ad.shape), _unbroadcast(gb[..., 0], bd.shape)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, "matmul", (a, b), bwd)


def scaled_dot_product(q: Tensor, k: Tensor) -> Tensor:
    """q @ k^T / sqrt(d) over the last two axes; the attention-score kernel."""
    q, k = _as_tensor(q), _as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ContractError(f"scaled_dot_product feature mismatch: {q.shape} vs {k.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    return mul(matmul(q, swapaxes(k, -1, -2)), Tensor(scale))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)
    return _make(out, "swapaxes", (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, "broadcast_to", (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat requires at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g: np.ndarray):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out, "concat", tuple(parts), bwd)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with ints and slices."""
    a = _as_tensor(a)
    out = a.data[key]

    def bwd(g: np.ndarray):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(np.array(out, copy=True), "getitem", (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _make(out, "sum", (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Mean pooling over an axis (or all axes when axis is None)."""
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.shape[axis]

    def bwd(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape).copy(),)

    return _make(out, "mean", (a,), bwd)


# ---------------------------------------------------------------------------
# Fused kernels
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along ``axis``."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: np.ndarray):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, "softmax", (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale/shift."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ContractError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g: np.ndarray):
        gx = g * gain.data
        gxm = gx.mean(axis=-1, keepdims=True)
        gxxm = (gx * xhat).mean(axis=-1, keepdims=True)
        ga = inv * (gx - gxm - xhat * gxxm)
        reduce_axes = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat
        gbias = g.sum(axis=reduce_axes) if reduce_axes else g
        return ga, ggain, gbias

    return _make(out, "layer_norm", (a, gain, bias), bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-instance cross-entropy from raw logits.

    logits [B, C] with int labels [B] -> loss [B]; a single [C] row with a
    scalar label -> scalar loss.
    """
    logits = _as_tensor(logits)
    single = logits.ndim == 1
    lg = logits.data[None, :] if single else logits.data
    if lg.ndim != 2:
        raise ContractError(f"cross_entropy expects 1-D or 2-D logits, got shape {logits.shape}")
    lab = np.asarray([labels] if single else labels)
    if lab.shape != (lg.shape[0],):
        raise ContractError(f"labels shape {lab.shape} does not match logits rows {lg.shape[0]}")
    if lab.dtype.kind not in "iu":
        raise ContractError("labels must be integers")
    if np.any(lab < 0) or np.any(lab >= lg.shape[1]):
        raise ContractError("label out of range for logit columns")

    m = lg.max(axis=1, keepdims=True)
    z = lg - m
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(lg.shape[0]), lab]
    out = losses[0] if single else losses

    def bwd(g: np.ndarray):
        p = np.exp(z - lse[:, None])
        p[np.arange(lg.shape[0]), lab] -= 1.0
        gl = p * (np.asarray(g).reshape(-1)[:, None])
        return (gl[0] if single else gl,)

    return _make(np.asarray(out), "cross_entropy", (logits,), bwd)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity; (n,)x(n,) -> scalar, (B,n)x(n,) -> (B,) row-wise."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 1:
        raise ContractError(f"cosine right operand must be 1-D, got shape {b.shape}")
    if a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ContractError(f"cosine shape mismatch: {a.shape} vs {b.shape}")
    single = a.ndim == 1
    ad = a.data[None, :] if single else a.data

    na = np.sqrt((ad * ad).sum(axis=1))
    nb = math.sqrt(float((b.data * b.data).sum()))
    if nb == 0.0:
        raise DomainError("cosine right operand is the zero vector")
    if np.any(na == 0.0):
        row = int(np.argmax(na == 0.0))
        raise DomainError(f"cosine left operand row {row} is the zero vector")

    denom = np.maximum(na * nb, COSINE_EPS)
    dots = ad @ b.data
    cos = dots / denom
    out = cos[0] if single else cos

    def bwd(g: np.ndarray):
        gv = np.asarray(g).reshape(-1)
        # d cos/d a = b/(na*nb) - cos * a/na^2; d cos/d b analogous, summed over rows.
        ga = gv[:, None] * (b.data[None, :] / denom[:, None] - (cos / (na * na))[:, None] * ad)
        gb = (gv / denom) @ ad - float((gv * cos).sum()) * b.data / (nb * nb)
        return (ga[0] if single else ga, gb)

    return _make(np.asarray(out), "cosine", (a, b), bwd)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay and bias correction."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        beta1, beta2 = betas
        if lr <= 0.0:
            raise ContractError(f"lr must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ContractError(f"betas must lie in (0, 1), got {betas}")
        if eps <= 0.0:
            raise ContractError(f"eps must be positive, got {eps}")
        if weight_decay < 0.0:
            raise ContractError(f"weight_decay must be non-negative, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ContractError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.step_count += 1
        t = self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if p.frozen:
                raise FrozenWriteError("optimizer update on a frozen parameter")
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            )


def adamw_step(params, grads, state: AdamW) -> AdamW:
    """Functional wrapper: apply one AdamW update in place, return the state."""
    if list(params) != state.params:
        raise ContractError("params do not match the optimizer state")
    state.step(grads)
    return state


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``fn`` must be deterministic and scalar-valued; relative error per
    coordinate is |analytic - fd| / max(1e-12, |analytic| + |fd|).
    """
    params = list(params)
    base_a = float(fn(params).data)
    base_b = float(fn(params).data)
    if base_a != base_b:
        raise NumericError(
            f"grad_check requires a deterministic function; got {base_a!r} then {base_b!r}"
        )

    with GradientTape() as tape:
        loss = fn(params)
    analytic = tape.gradient(loss, params)

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = float(fn(params).data)
            flat[j] = orig - step
            lo = float(fn(params).data)
            flat[j] = orig
            fd = (hi - lo) / (2.0 * step)
            err = abs(gflat[j] - fd) / max(1e-12, abs(gflat[j]) + abs(fd))
            worst = max(worst, err)
    return worst
