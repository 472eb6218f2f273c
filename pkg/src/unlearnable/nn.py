"""Small feed-forward classifiers with hand-written reverse-mode gradients.

Everything is float64 numpy. A model is an immutable :class:`ModelState`;
training steps return new states. Labels are 1-based (``1..K``) at every
public boundary and shifted to 0-based only for indexing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputContractError, NumericContractError


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0.0).astype(np.float64)


def _tanh_grad(z, a):
    return 1.0 - a * a


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
}


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(inputs, hidden..., classes)`` plus the hidden activation.

    Serialises to a single line such as ``mlp 784 256 10 relu``.
    """

    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or len(widths) > 4:
            raise InputContractError(
                f"architecture needs inputs, 0-2 hidden widths and classes; got {widths}")
        if any(w < 1 for w in widths):
            raise InputContractError(f"layer widths must be positive: {widths}")
        if widths[-1] < 2:
            raise InputContractError("a classifier needs at least 2 classes")
        if self.activation not in ACTIVATIONS:
            raise InputContractError(f"unknown activation {self.activation!r}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        parts = text.split()
        if not parts or parts[0] != "mlp":
            raise InputContractError(f"architecture must start with 'mlp': {text!r}")
        activation = "relu"
        if parts[-1] in ACTIVATIONS:
            activation = parts.pop()
        try:
            widths = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise InputContractError(f"bad layer width in {text!r}") from None
        return cls(widths, activation)

    def __str__(self):
        return " ".join(["mlp", *map(str, self.widths), self.activation])

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            out += [(fan_in, fan_out), (fan_out,)]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)


@dataclass(frozen=True, eq=False)
class ModelState:
    """Architecture plus parameters ``(W1, b1, W2, b2, ...)``; read-only."""

    arch: Architecture
    params: tuple[np.ndarray, ...]
    seed: int | None = None

    def __post_init__(self):
        shapes = self.arch.shapes
        if len(self.params) != len(shapes):
            raise InputContractError(
                f"expected {len(shapes)} parameter arrays, got {len(self.params)}")
        frozen = []
        for p, shape in zip(self.params, shapes):
            a = np.array(p, dtype=np.float64, copy=True)
            if a.shape != shape:
                raise InputContractError(f"parameter shape {a.shape} != {shape}")
            a.setflags(write=False)
            frozen.append(a)
        object.__setattr__(self, "params", tuple(frozen))

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    @classmethod
    def from_flat(cls, arch: Architecture, flat, seed=None) -> "ModelState":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.n_params,):
            raise InputContractError(
                f"flat parameter vector has shape {flat.shape}, need ({arch.n_params},)")
        params, at = [], 0
        for shape in arch.shapes:
            size = int(np.prod(shape))
            params.append(flat[at:at + size].reshape(shape))
            at += size
        return cls(arch, tuple(params), seed)

    def same_as(self, other: "ModelState") -> bool:
        """Bitwise parameter equality (architecture included)."""
        return self.arch == other.arch and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.params, other.params))


def init_model(arch: Architecture | str, seed: int) -> ModelState:
    """Symmetric uniform fan-in init: ``W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    if isinstance(arch, str):
        arch = Architecture.parse(arch)
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return ModelState(arch, tuple(params), seed)


def zero_model(arch: Architecture | str) -> ModelState:
    if isinstance(arch, str):
        arch = Architecture.parse(arch)
    return ModelState(arch, tuple(np.zeros(s) for s in arch.shapes))


# --- forward / backward -------------------------------------------------------


def _as_batch(model: ModelState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.arch.n_inputs:
        raise InputContractError(
            f"input shape {x.shape} does not match model input width {model.arch.n_inputs}")
    if not np.all(np.isfinite(x)):
        raise NumericContractError("non-finite input features")
    return x


def _forward(model: ModelState, x: np.ndarray):
    act, _ = ACTIVATIONS[model.arch.activation]
    cache = []
    h = x
    n_layers = len(model.params) // 2
    for i in range(n_layers):
        W, b = model.params[2 * i], model.params[2 * i + 1]
        z = h @ W + b
        a = z if i == n_layers - 1 else act(z)
        cache.append((h, z, a))
        h = a
    return h, cache


def _backward(model: ModelState, cache, dlogits: np.ndarray):
    _, dact = ACTIVATIONS[model.arch.activation]
    n_layers = len(cache)
    grads = [None] * (2 * n_layers)
    dz = dlogits
    for i in reversed(range(n_layers)):
        h, _, _ = cache[i]
        grads[2 * i] = h.T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        dh = dz @ model.params[2 * i].T
        if i > 0:
            _, z_prev, a_prev = cache[i - 1]
            dz = dh * dact(z_prev, a_prev)
        else:
            dinput = dh
    return grads, dinput


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logits(model: ModelState, x) -> np.ndarray:
    out, _ = _forward(model, _as_batch(model, x))
    return out


def predict_proba(model: ModelState, x) -> np.ndarray:
    """Softmax probabilities; a single sample gives a length-K vector."""
    single = np.asarray(x).ndim == 1
    p = softmax(logits(model, x))
    return p[0] if single else p


def predict(model: ModelState, x) -> np.ndarray:
    """Hard 1-based predictions; argmax ties go to the lowest class index."""
    return np.argmax(logits(model, x), axis=1) + 1


# --- losses -------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Cross-entropy, optionally plus ``asr_weight`` times the mean squared
    distance of the predicted probabilities from uniform."""

    asr_weight: float = 0.0

    def __post_init__(self):
        if not self.asr_weight >= 0:
            raise InputContractError("asr_weight must be >= 0")


@dataclass(frozen=True)
class LossResult:
    loss: float
    ce: float
    asr: float
    grads: tuple[np.ndarray, ...]
    input_grad: np.ndarray | None = field(default=None, repr=False)


def _check_labels(model: ModelState, y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if y.shape != (n,):
        raise InputContractError(f"{y.shape[0] if y.ndim else 1} labels for {n} samples")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputContractError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 1) or np.any(y > model.n_classes):
        raise InputContractError(f"labels must lie in 1..{model.n_classes}")
    return y.astype(np.int64)


def loss_and_grads(model: ModelState, x, y, spec: LossSpec | None = None, *,
                   clean_x=None, wrt_input: bool = False) -> LossResult:
    """Batch-mean loss with exact gradients for every parameter.

    The cross-entropy term sees ``x``. The uniform-distance term, when
    ``spec.asr_weight > 0``, is evaluated on ``clean_x`` (defaulting to ``x``).
    ``input_grad`` is the derivative with respect to ``x`` when requested.
    """
    spec = spec or LossSpec()
    x = _as_batch(model, x)
    n = x.shape[0]
    if n == 0:
        raise InputContractError("empty batch")
    y = _check_labels(model, y, n)
    K = model.n_classes

    out, cache = _forward(model, x)
    logp = log_softmax(out)
    ce = float(-logp[np.arange(n), y - 1].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y - 1] -= 1.0
    dlogits /= n
    grads, dinput = _backward(model, cache, dlogits)

    asr = 0.0
    if spec.asr_weight > 0:
        shared = clean_x is None
        cx = x if shared else _as_batch(model, clean_x)
        m = cx.shape[0]
        c_out, c_cache = (out, cache) if shared else _forward(model, cx)
        p = softmax(c_out)
        dev = p - 1.0 / K
        asr = float(((dev * dev).sum(axis=1) / K).mean())
        dp = spec.asr_weight * (2.0 / K) * dev / m
        dz = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        agrads, adinput = _backward(model, c_cache, dz)
        grads = [g + a for g, a in zip(grads, agrads)]
        if shared:
            dinput = dinput + adinput

    loss = ce + spec.asr_weight * asr if spec.asr_weight > 0 else ce
    if not np.isfinite(loss):
        raise NumericContractError("non-finite loss")
    return LossResult(loss, ce, asr, tuple(grads), dinput if wrt_input else None)


def loss_value(model: ModelState, x, y, spec: LossSpec | None = None, *, clean_x=None) -> float:
    """Forward-only version of :func:`loss_and_grads` (same arithmetic)."""
    spec = spec or LossSpec()
    x = _as_batch(model, x)
    n = x.shape[0]
    if n == 0:
        raise InputContractError("empty batch")
    y = _check_labels(model, y, n)
    out, _ = _forward(model, x)
    ce = float(-log_softmax(out)[np.arange(n), y - 1].mean())
    if spec.asr_weight <= 0:
        return ce
    p = softmax(out if clean_x is None else logits(model, clean_x))
    dev = p - 1.0 / model.n_classes
    asr = float(((dev * dev).sum(axis=1) / model.n_classes).mean())
    return ce + spec.asr_weight * asr


# --- updates and checks -------------------------------------------------------


def sgd_update(model: ModelState, grads: Sequence[np.ndarray], lr: float) -> ModelState:
    """Return a new state with ``theta - lr * grads``."""
    if not lr > 0:
        raise InputContractError("learning rate must be positive")
    if len(grads) != len(model.params):
        raise InputContractError(f"{len(grads)} gradient arrays for {len(model.params)} parameters")
    new = []
    for p, g in zip(model.params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise InputContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        new.append(p - lr * g)
    return ModelState(model.arch, tuple(new), model.seed)


def check_gradient(fn: Callable[[np.ndarray], float], grad: np.ndarray, point, eps: float = 1e-4) -> float:
    """Max of ``|analytic - central| / max(1, |central|)`` over coordinates of ``point``."""
    if not 0 < eps <= 1e-2:
        raise InputContractError("eps must lie in (0, 1e-2]")
    point = np.array(point, dtype=np.float64, copy=True).ravel()
    grad = np.asarray(grad, dtype=np.float64).ravel()
    worst = 0.0
    for j in range(point.size):
        orig = point[j]
        point[j] = orig + eps
        up = fn(point)
        point[j] = orig - eps
        down = fn(point)
        point[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericContractError(f"non-finite loss while probing coordinate {j}")
        central = (up - down) / (2 * eps)
        worst = max(worst, abs(grad[j] - central) / max(1.0, abs(central)))
    return worst


def grad_check(model: ModelState, x, y, eps: float = 1e-4, spec: LossSpec | None = None, *,
               clean_x=None) -> float:
    """Compare :func:`loss_and_grads` against central differences over all parameters."""
    spec = spec or LossSpec()
    analytic = loss_and_grads(model, x, y, spec, clean_x=clean_x)
    flat_grad = np.concatenate([g.ravel() for g in analytic.grads])

    def fn(theta):
        return loss_value(ModelState.from_flat(model.arch, theta), x, y, spec, clean_x=clean_x)

    return check_gradient(fn, flat_grad, model.flat(), eps)


def input_grad_check(model: ModelState, x, y, eps: float = 1e-4, spec: LossSpec | None = None) -> float:
    """Same as :func:`grad_check` but over the input features."""
    spec = spec or LossSpec()
    x = _as_batch(model, x)
    analytic = loss_and_grads(model, x, y, spec, wrt_input=True).input_grad

    def fn(flat_x):
        return loss_value(model, flat_x.reshape(x.shape), y, spec)

    return check_gradient(fn, analytic, x, eps)
