"""Importance measurement and pruning-ratio allocation.

Importance of a weight group (one column of the im2col weight matrix) is
its L1 norm; groups are ranked ascending, so rank 0 is the least important.
This module also provides the one-shot L1 column-pruning baseline, a
PCA-reconstruction sensitivity curve per layer, and the conversion of
per-layer remaining-ratio proportions plus a FLOP-reduction target into
concrete per-layer pruning ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ShapeError
from .layers import ConvLayer
from .network import ConvNetModel


@dataclass
class GroupNorms:
    layer_id: int
    norms: np.ndarray


def group_l1_norms(layer_or_weights) -> np.ndarray:
    """Per-column L1 norms of the im2col weight matrix, length Nc.

    Norms are computed on the stored weight values, ignoring any sampled
    mask, so temporarily masked groups keep competing on their real weights.
    """
    if isinstance(layer_or_weights, ConvLayer):
        weights = layer_or_weights.weights
    else:
        weights = np.asarray(layer_or_weights)
    if weights.ndim != 4:
        raise ShapeError(f"expected 4-D conv weights, got shape {weights.shape}")
    c_out = weights.shape[0]
    return np.abs(weights.reshape(c_out, -1)).sum(axis=0)


def model_group_norms(model: ConvNetModel) -> list[GroupNorms]:
    return [GroupNorms(lid, group_l1_norms(layer)) for lid, layer in model.conv_layers()]


def rank_ascending(norms: np.ndarray) -> np.ndarray:
    """Ascending ranks: result[j] is the rank of group j, 0 = smallest norm.

    Ties are broken by group index (stable sort), so equal norms rank in
    index order and the result is always a permutation of 0..Nc-1.
    """
    norms = np.asarray(norms)
    order = np.argsort(norms, kind="stable")
    ranks = np.empty(len(norms), dtype=np.int64)
    ranks[order] = np.arange(len(norms))
    return ranks


def round_half_even(x: float) -> int:
    """Nearest integer with ties to even (the target-count rounding rule)."""
    return int(round(x))


def fp_oneshot_prune(model: ConvNetModel, ratios: dict[int, float]) -> dict[int, np.ndarray]:
    """One-shot L1 baseline: mask the bottom round(R*Nc) columns of each layer.

    `ratios` maps conv layer id to its pruning ratio R.  Returns the pruned
    group indices per layer; the model's masks are updated in place.  A ratio
    that rounds to zero groups leaves that layer untouched.
    """
    pruned: dict[int, np.ndarray] = {}
    for lid, layer in model.conv_layers():
        ratio = ratios.get(lid, 0.0)
        if not 0 <= ratio < 1:
            raise ConfigError(f"pruning ratio for layer {lid} must be in [0, 1), got {ratio}")
        target = round_half_even(ratio * layer.n_columns)
        if target == 0:
            pruned[lid] = np.zeros(0, dtype=np.int64)
            continue
        ranks = rank_ascending(group_l1_norms(layer))
        chosen = np.flatnonzero(ranks < target)
        mask = layer.mask.copy()
        mask[chosen] = 0
        layer.set_mask(mask)
        pruned[lid] = chosen
    return pruned


@dataclass
class SensitivityCurve:
    layer_id: int
    retained_fraction: np.ndarray
    normalized_error: np.ndarray


DEFAULT_FRACTIONS = np.round(np.linspace(0.05, 1.0, 20), 10)


def pca_sensitivity(
    weight_matrix: np.ndarray,
    fractions: np.ndarray | None = None,
    layer_id: int = -1,
) -> SensitivityCurve:
    """PCA reconstruction error of a (c_out, Nc) weight matrix per retained fraction.

    Rows (output-channel filters) are centered, the spectrum is taken by SVD,
    and for each fraction f the matrix is reconstructed from the top
    ceil(f * rank) components.  normalized_error is the Frobenius norm of the
    residual over the Frobenius norm of the centered matrix, so it is
    non-increasing in f and exactly 0 at f = 1.
    """
    w = np.asarray(weight_matrix, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D weight matrix, got shape {w.shape}")
    if w.shape[0] < 2:
        raise ConfigError(f"need at least 2 output channels for PCA, got {w.shape[0]}")
    fractions = DEFAULT_FRACTIONS if fractions is None else np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or np.any(fractions > 1):
        raise ConfigError("retained fractions must lie in (0, 1]")
    centered = w - w.mean(axis=0)
    spectrum = np.linalg.svd(centered, compute_uv=False)
    if spectrum.size == 0 or spectrum[0] == 0:
        raise ConfigError("degenerate weight matrix: all rows identical")
    # singular values below numerical-rank tolerance are noise, not signal
    tol = spectrum[0] * max(centered.shape) * np.finfo(np.float64).eps
    spectrum = np.where(spectrum > tol, spectrum, 0.0)
    rank = int(np.count_nonzero(spectrum))
    energy = spectrum**2
    total = energy.sum()
    errors = np.empty(len(fractions))
    for i, f in enumerate(fractions):
        kept = math.ceil(f * rank)
        errors[i] = math.sqrt(energy[kept:].sum() / total)
    return SensitivityCurve(layer_id, fractions.copy(), errors)


@dataclass
class RatioPlan:
    """Per-layer remaining ratios solving a global FLOP-reduction target."""

    remaining: dict[int, float]
    dense_flops: dict[int, float]
    achieved_speedup: float
    target_speedup: float

    @property
    def pruning_ratios(self) -> dict[int, float]:
        return {lid: 1.0 - rem for lid, rem in self.remaining.items()}

    @property
    def pruned_flops(self) -> dict[int, float]:
        return {lid: fl * self.remaining[lid] for lid, fl in self.dense_flops.items()}


def conv_flops(model: ConvNetModel) -> dict[int, float]:
    """Dense forward FLOPs per conv layer (multiply-add counted as 2)."""
    flops = {}
    for lid, layer in model.conv_layers():
        h_out, w_out = model.conv_spatial[lid]
        flops[lid] = 2.0 * layer.c_out * h_out * w_out * layer.n_columns
    return flops


def allocate_ratios(
    proportions,
    model: ConvNetModel,
    target_speedup: float,
    unprunable=(),
    floor: float = 0.01,
) -> RatioPlan:
    """Turn remaining-ratio proportions and a FLOP target into per-layer ratios.

    proportions: one positive real per conv layer (in model order); layers
    listed in `unprunable` (conv positions, 0-based) keep remaining = 1.
    Finds the scale s with remaining_l = clamp(s * proportion_l, floor, 1)
    such that pruned/dense conv FLOPs == 1/target_speedup within 0.1%.
    """
    convs = model.conv_layers()
    proportions = [float(p) for p in proportions]
    if len(proportions) != len(convs):
        raise ConfigError(
            f"{len(proportions)} proportions for {len(convs)} conv layers"
        )
    if any(p <= 0 for p in proportions):
        raise ConfigError("proportions must be positive")
    if target_speedup <= 1:
        raise ConfigError(f"target speedup must exceed 1, got {target_speedup}")
    unprunable = set(unprunable)
    if not unprunable.issubset(range(len(convs))):
        raise ConfigError(f"unprunable positions {sorted(unprunable)} out of range")

    flops = conv_flops(model)
    layer_ids = [lid for lid, _ in convs]
    dense_total = sum(flops.values())
    goal = 1.0 / target_speedup

    def remaining_at(s: float) -> dict[int, float]:
        out = {}
        for pos, lid in enumerate(layer_ids):
            if pos in unprunable:
                out[lid] = 1.0
            else:
                out[lid] = min(max(s * proportions[pos], floor), 1.0)
        return out

    def flop_ratio(s: float) -> float:
        rem = remaining_at(s)
        return sum(flops[lid] * rem[lid] for lid in layer_ids) / dense_total

    if flop_ratio(0.0) > goal + 1e-12:
        raise ConfigError(
            f"target speedup {target_speedup}x unreachable: even at the "
            f"{floor} remaining-ratio floor the FLOP ratio is {flop_ratio(0.0):.4f}"
        )
    s_hi = max(1.0 / proportions[pos] for pos in range(len(convs)) if pos not in unprunable)
    if flop_ratio(s_hi) < goal:
        # every prunable layer already unclamped at 1; only feasible if goal == 1
        raise ConfigError(f"target speedup {target_speedup}x unreachable for this model")
    scale = brentq(lambda s: flop_ratio(s) - goal, 0.0, s_hi, xtol=1e-14)
    remaining = remaining_at(scale)
    achieved_ratio = flop_ratio(scale)
    if abs(achieved_ratio - goal) > 1e-3 * goal:
        raise ConfigError(
            f"ratio allocation missed the target: got FLOP ratio {achieved_ratio:.6f}, "
            f"wanted {goal:.6f}"
        )
    return RatioPlan(
        remaining=remaining,
        dense_flops=flops,
        achieved_speedup=1.0 / achieved_ratio,
        target_speedup=target_speedup,
    )
