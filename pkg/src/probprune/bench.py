"""Inference benchmark: masked dense model vs structurally compacted model.

Pruning zeroes whole weight-matrix columns, so a pruned network can be
rebuilt with those columns physically removed.  The compact convolution
gathers only the surviving patch entries and multiplies by the shrunken
(c_out, n_kept) matrix, turning the mask into a real FLOP reduction.

Both paths here are inference-only (no backward caches) so the timing
comparison is apples to apples.  BLAS is pinned to one thread while timing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ShapeError
from .layers import (
    ConvLayer,
    FcLayer,
    FlattenLayer,
    MaxPoolLayer,
    ReluLayer,
    _batch_windows,
)
from .network import ConvNetModel


class CompactConv:
    """Convolution over a subset of im2col rows.

    kept_idx select columns of the original (c_out, c_in*kh*kw) weight
    matrix; `matrix` holds just those columns.  The forward pass gathers
    the matching (channel, row, col) patch entries straight from the
    sliding-window view, so both the gather and the GEMM scale with the
    number of kept groups.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        bias: np.ndarray,
        kept_idx: np.ndarray,
        c_in: int,
        kernel: tuple[int, int],
        stride: int,
        pad: int,
    ):
        kh, kw = kernel
        if matrix.shape[1] != kept_idx.size:
            raise ShapeError(
                f"matrix has {matrix.shape[1]} columns but {kept_idx.size} kept indices"
            )
        self.matrix = matrix
        self.bias = bias
        self.kept_idx = kept_idx
        self.c_in = c_in
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        # decompose flat column ids into (channel, patch row, patch col)
        self._ci = kept_idx // (kh * kw)
        rem = kept_idx % (kh * kw)
        self._ki = rem // kw
        self._kj = rem % kw

    @classmethod
    def from_layer(cls, layer: ConvLayer) -> "CompactConv":
        kept = np.flatnonzero(layer.mask)
        matrix = np.ascontiguousarray(layer.weight_matrix[:, kept])
        return cls(
            matrix, layer.bias.copy(), kept, layer.c_in, layer.kernel, layer.stride, layer.pad
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        win, h_out, w_out = _batch_windows(x, *self.kernel, self.stride, self.pad)
        # advanced indices at axes 1, 4, 5 land in front: (n_kept, n, h_out, w_out)
        cols = win[:, self._ci, :, :, self._ki, self._kj]
        cols = cols.reshape(self.kept_idx.size, n * h_out * w_out)
        out = self.matrix @ cols + self.bias[:, None]
        out = out.reshape(out.shape[0], n, h_out * w_out).transpose(1, 0, 2)
        return out.reshape(n, -1, h_out, w_out)


class CompactedNet:
    """Inference-only copy of a model with pruned conv columns removed."""

    def __init__(self, stages: list):
        self.stages = stages

    @classmethod
    def from_model(cls, model: ConvNetModel) -> "CompactedNet":
        stages = []
        for layer in model.layers:
            if isinstance(layer, ConvLayer):
                stages.append(("conv", CompactConv.from_layer(layer)))
            elif isinstance(layer, ReluLayer):
                stages.append(("relu", None))
            elif isinstance(layer, MaxPoolLayer):
                stages.append(("pool", layer.size))
            elif isinstance(layer, FlattenLayer):
                stages.append(("flatten", None))
            elif isinstance(layer, FcLayer):
                stages.append(("fc", (layer.weights.copy(), layer.bias.copy())))
            else:
                raise ShapeError(f"cannot compact layer type {type(layer).__name__}")
        return cls(stages)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for kind, payload in self.stages:
            if kind == "conv":
                x = payload.forward(x)
            elif kind == "relu":
                x = np.maximum(x, 0)
            elif kind == "pool":
                x = _pool_infer(x, payload)
            elif kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            else:
                w, b = payload
                x = x @ w.T + b
        return x

    def kept_fractions(self) -> dict[int, float]:
        out = {}
        for i, (kind, payload) in enumerate(self.stages):
            if kind == "conv":
                nc = payload.c_in * payload.kernel[0] * payload.kernel[1]
                out[i] = payload.kept_idx.size / nc
        return out


def _pool_infer(x: np.ndarray, size: int) -> np.ndarray:
    n, c, h, w = x.shape
    h_out, w_out = h // size, w // size
    tiles = x.reshape(n, c, h_out, size, w_out, size)
    return tiles.max(axis=(3, 5))


def dense_forward(model: ConvNetModel, x: np.ndarray) -> np.ndarray:
    """Forward pass through the masked dense model without backward caches."""
    for layer in model.layers:
        if isinstance(layer, ConvLayer):
            n = x.shape[0]
            kh, kw = layer.kernel
            win, h_out, w_out = _batch_windows(x, kh, kw, layer.stride, layer.pad)
            cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(layer.n_columns, n * h_out * w_out)
            out = layer.masked_matrix() @ np.ascontiguousarray(cols) + layer.bias[:, None]
            x = out.reshape(layer.c_out, n, h_out * w_out).transpose(1, 0, 2)
            x = x.reshape(n, layer.c_out, h_out, w_out)
        elif isinstance(layer, ReluLayer):
            x = np.maximum(x, 0)
        elif isinstance(layer, MaxPoolLayer):
            x = _pool_infer(x, layer.size)
        elif isinstance(layer, FlattenLayer):
            x = x.reshape(x.shape[0], -1)
        else:
            x = x @ layer.weights.T + layer.bias
    return x


@dataclass
class BenchResult:
    batch_size: int
    warmup: int
    runs: int
    dense_ms: float
    compact_ms: float
    dense_best_ms: float
    compact_best_ms: float
    speedup: float
    max_abs_diff: float
    kept_fractions: dict[int, float]

    def to_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("batch_size", repr(self.batch_size)),
            ("warmup", repr(self.warmup)),
            ("runs", repr(self.runs)),
            ("dense_ms", repr(self.dense_ms)),
            ("compact_ms", repr(self.compact_ms)),
            ("dense_best_ms", repr(self.dense_best_ms)),
            ("compact_best_ms", repr(self.compact_best_ms)),
            ("speedup", repr(self.speedup)),
            ("max_abs_diff", repr(self.max_abs_diff)),
        ]
        for i, frac in sorted(self.kept_fractions.items()):
            rows.append((f"kept_fraction.layer{i}", repr(frac)))
        return rows


def write_bench_csv(path, result: BenchResult) -> None:
    lines = ["name,value"] + [f"{k},{v}" for k, v in result.to_rows()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _timed(fn, x) -> float:
    t0 = time.perf_counter()
    fn(x)
    return time.perf_counter() - t0


def run_benchmark(
    model: ConvNetModel, x: np.ndarray, warmup: int = 5, runs: int = 50
) -> BenchResult:
    """Time masked-dense vs compacted inference on one fixed batch.

    Returns per-batch means in milliseconds plus the largest absolute
    difference between the two paths' logits, which should sit at rounding
    noise since removed columns are exact zeros in the dense path.
    """
    compact = CompactedNet.from_model(model)
    dense_t = np.empty(runs)
    compact_t = np.empty(runs)
    with threadpool_limits(limits=1):
        for _ in range(max(warmup, 1)):
            dense_out = dense_forward(model, x)
            compact_out = compact.forward(x)
        # interleave the two paths so slow load drift hits both equally
        for i in range(runs):
            dense_t[i] = _timed(lambda b: dense_forward(model, b), x)
            compact_t[i] = _timed(compact.forward, x)
    diff = float(np.abs(dense_out - compact_out).max())
    return BenchResult(
        batch_size=x.shape[0],
        warmup=warmup,
        runs=runs,
        dense_ms=float(dense_t.mean() * 1e3),
        compact_ms=float(compact_t.mean() * 1e3),
        dense_best_ms=float(dense_t.min() * 1e3),
        compact_best_ms=float(compact_t.min() * 1e3),
        speedup=float(dense_t.mean() / compact_t.mean()),
        max_abs_diff=diff,
        kept_fractions=compact.kept_fractions(),
    )
