"""Model assembly, momentum SGD, and the finite-difference gradient check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError, ShapeError
from .layers import (
    ConvLayer,
    FcLayer,
    FlattenLayer,
    MaxPoolLayer,
    ReluLayer,
    conv_output_size,
    softmax_cross_entropy,
)


def _assert_finite(what: str, arr: np.ndarray) -> None:
    # one-pass check: any NaN/Inf poisons the float64 sum
    if not np.isfinite(np.sum(arr, dtype=np.float64)):
        raise NumericsError(f"non-finite values in {what}")


@dataclass
class SgdConfig:
    """Hyper-parameters for one training phase.

    learning_rate may be zero (frozen-weight regime used by schedule tests);
    momentum must lie in [0, 1) and weight_decay must be non-negative.
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class ConvNetModel:
    """An ordered stack of layers ending in a softmax cross-entropy head.

    Built from a layer spec list like
        [("conv", {"out": 32, "kernel": 5, "pad": 2}), ("relu", {}),
         ("pool", {"size": 2}), ("fc", {"out": 10})]
    A flatten stage is inserted automatically before the first fc layer.
    """

    def __init__(self, layers: list, input_shape: tuple[int, int, int], dtype=np.float64):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.conv_spatial: dict[int, tuple[int, int]] = {}
        self._infer_shapes()

    @classmethod
    def build(
        cls,
        spec: list[tuple[str, dict]],
        input_shape: tuple[int, int, int],
        rng: np.random.Generator,
        dtype=np.float64,
    ) -> "ConvNetModel":
        dtype = np.dtype(dtype)
        c, h, w = input_shape
        layers: list = []
        flat: int | None = None
        for kind, args in spec:
            if kind == "conv":
                if flat is not None:
                    raise ConfigError("conv layer after fc is not supported")
                out = int(args["out"])
                k = int(args.get("kernel", 3))
                stride = int(args.get("stride", 1))
                pad = int(args.get("pad", 0))
                weights = he_init(rng, (out, c, k, k), fan_in=c * k * k, dtype=dtype)
                layers.append(ConvLayer(weights, np.zeros(out, dtype=dtype), stride, pad))
                h = conv_output_size(h, k, stride, pad)
                w = conv_output_size(w, k, stride, pad)
                c = out
            elif kind == "relu":
                layers.append(ReluLayer())
            elif kind == "pool":
                size = int(args["size"])
                layers.append(MaxPoolLayer(size))
                if h % size or w % size:
                    raise ConfigError(f"pool size {size} does not divide map {h}x{w}")
                h //= size
                w //= size
            elif kind == "fc":
                if flat is None:
                    layers.append(FlattenLayer())
                    flat = c * h * w
                out = int(args["out"])
                weights = he_init(rng, (out, flat), fan_in=flat, dtype=dtype)
                layers.append(FcLayer(weights, np.zeros(out, dtype=dtype)))
                flat = out
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
        return cls(layers, input_shape, dtype)

    def _infer_shapes(self) -> None:
        c, h, w = self.input_shape
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                if layer.c_in != c:
                    raise ConfigError(
                        f"layer {idx} expects {layer.c_in} input channels, gets {c}"
                    )
                kh, kw = layer.kernel
                h = conv_output_size(h, kh, layer.stride, layer.pad)
                w = conv_output_size(w, kw, layer.stride, layer.pad)
                c = layer.c_out
                self.conv_spatial[idx] = (h, w)
            elif isinstance(layer, MaxPoolLayer):
                if h % layer.size or w % layer.size:
                    raise ConfigError(f"pool size {layer.size} does not divide map {h}x{w}")
                h //= layer.size
                w //= layer.size

    def conv_layers(self) -> list[tuple[int, ConvLayer]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ConvLayer)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out)
        _assert_finite("forward output", out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        for path, _, g, _ in self.param_items():
            if g is not None:
                _assert_finite(f"gradient of {path}", g)
        return grad

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        value, _ = softmax_cross_entropy(self.forward(x), y)
        return float(value)

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> float:
        logits = self.forward(x)
        value, grad = softmax_cross_entropy(logits, y)
        if not np.isfinite(value):
            raise NumericsError("non-finite training loss")
        self.backward(grad)
        return float(value)

    def param_items(self):
        """Yield (path, value, grad, trainable_mask) over all parameters."""
        items = []
        for idx, layer in enumerate(self.layers):
            for name, value, grad, trainable in layer.params():
                items.append((f"layer{idx}.{name}", value, grad, trainable))
        return items

    def n_params(self) -> int:
        return sum(v.size for _, v, _, _ in self.param_items())

    def invalidate_caches(self) -> None:
        for _, layer in self.conv_layers():
            layer.invalidate()

    def predict(self, x: np.ndarray, batch_size: int = 100) -> np.ndarray:
        preds = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start : start + batch_size])
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    def accuracy(self, x: np.ndarray, y: np.ndarray, batch_size: int = 100) -> float:
        if len(x) == 0:
            raise ShapeError("cannot evaluate accuracy on an empty set")
        return float(np.mean(self.predict(x, batch_size) == y))


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class MomentumSgd:
    """Momentum SGD with weight decay, honouring per-parameter trainability masks.

    For a parameter with trainable mask m (1 = free, 0 = frozen):
        v <- m * (momentum * v - lr * (grad + weight_decay * w))
        w <- w + v
    Frozen entries therefore keep both their value and a zero velocity, so a
    masked column is bit-identical after any number of steps.
    """

    def __init__(self, cfg: SgdConfig):
        self.cfg = cfg
        self.velocities: dict[str, np.ndarray] = {}

    def step(self, model: ConvNetModel) -> None:
        cfg = self.cfg
        for path, value, grad, trainable in model.param_items():
            if grad is None:
                raise RuntimeError(f"no gradient stored for {path}; run backward first")
            v = self.velocities.get(path)
            if v is None:
                v = np.zeros_like(value)
                self.velocities[path] = v
            np.multiply(v, cfg.momentum, out=v)
            v -= cfg.learning_rate * (grad + cfg.weight_decay * value)
            if trainable is not None:
                v *= trainable
            value += v
        model.invalidate_caches()


def sgd_step(model: ConvNetModel, cfg: SgdConfig) -> None:
    """Apply one update with fresh momentum state (one-off helper for tests/demos)."""
    MomentumSgd(cfg).step(model)


def gradient_check(
    model: ConvNetModel,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    Returns the max relative error per parameter tensor, where the relative
    error of a pair (a, n) is |a - n| / max(|a|, |n|, 1e-6).  Intended for
    small models (<= 1e4 parameters) at float64 precision.
    """
    if model.dtype != np.float64:
        raise ConfigError("gradient_check requires a float64 model")
    model.loss_and_grads(x, y)
    analytic = {path: g.copy() for path, _, g, _ in model.param_items()}
    report: dict[str, float] = {}
    for path, value, _, _ in model.param_items():
        a = analytic[path]
        worst = 0.0
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            model.invalidate_caches()
            loss_plus = model.loss(x, y)
            flat[i] = orig - epsilon
            model.invalidate_caches()
            loss_minus = model.loss(x, y)
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2 * epsilon)
            ref = a.reshape(-1)[i]
            rel = abs(ref - numeric) / max(abs(ref), abs(numeric), 1e-6)
            worst = max(worst, rel)
        report[path] = worst
    model.invalidate_caches()
    return report
