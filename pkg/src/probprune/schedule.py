"""The pruning-probability schedule.

Each layer ranks its Nc weight groups by ascending L1 norm; a group of rank
r receives the probability increment

    delta(r) = A * exp(-alpha * r)                    for r <= N
    delta(r) = 2*u*A - A * exp(-alpha * (2*N - r))    for r >  N

with alpha = (ln 2 - ln u) / (R * Nc) and N = -ln(u) / alpha.  The curve is
strictly decreasing, center-symmetric about (N, u*A), positive below rank
R*Nc and negative above it, so groups compete for the bottom R*Nc slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def solve_schedule(ratio: float, n_columns: int, u: float) -> tuple[float, float]:
    """Closed-form (alpha, N) for a layer with pruning ratio R and Nc groups."""
    if not 0 < ratio < 1:
        raise ConfigError(f"pruning ratio must be in (0, 1), got {ratio}")
    if n_columns < 1:
        raise ConfigError(f"group count must be >= 1, got {n_columns}")
    if not 0 < u < 1:
        raise ConfigError(f"flatness u must be in (0, 1), got {u}")
    alpha = (math.log(2.0) - math.log(u)) / (ratio * n_columns)
    center = -math.log(u) / alpha
    return alpha, center


@dataclass(frozen=True)
class LayerSchedule:
    layer_id: int
    ratio: float
    n_columns: int
    alpha: float
    center: float  # the rank N where delta(N) = u*A
    target: int  # round-half-even(ratio * n_columns), groups to prune


class PruningSchedule:
    """Global hyper-parameters (A, u, t) plus per-layer derived constants.

    `ratios` maps conv layer id -> pruning ratio R and `n_columns` maps the
    same ids to their group counts.  The update counter k advances once per
    probability update across the whole network.
    """

    def __init__(
        self,
        ratios: dict[int, float],
        n_columns: dict[int, int],
        peak: float = 0.05,
        flatness: float = 0.25,
        update_every: int = 180,
    ):
        if peak <= 0:
            raise ConfigError(f"peak increment A must be positive, got {peak}")
        if not 0 < flatness < 1:
            raise ConfigError(f"flatness u must be in (0, 1), got {flatness}")
        if update_every < 1:
            raise ConfigError(f"update interval t must be >= 1, got {update_every}")
        if set(ratios) != set(n_columns):
            raise ConfigError("ratios and n_columns must cover the same layers")
        if not ratios:
            raise ConfigError("schedule needs at least one prunable layer")
        self.peak = peak
        self.flatness = flatness
        self.update_every = update_every
        self.k = 0
        self.layers: dict[int, LayerSchedule] = {}
        for lid in sorted(ratios):
            ratio, nc = ratios[lid], n_columns[lid]
            alpha, center = solve_schedule(ratio, nc, flatness)
            target = int(round(ratio * nc))
            if target < 1:
                raise ConfigError(
                    f"layer {lid}: ratio {ratio} rounds to zero of {nc} groups"
                )
            if not center < ratio * nc:
                raise ConfigError(f"layer {lid}: schedule center N >= R*Nc")
            self.layers[lid] = LayerSchedule(lid, ratio, nc, alpha, center, target)

    @classmethod
    def for_model(
        cls,
        model,
        ratios: float | dict[int, float],
        peak: float = 0.05,
        flatness: float = 0.25,
        update_every: int = 180,
    ) -> "PruningSchedule":
        """Build a schedule over a model's conv layers from a global or per-layer R.

        A scalar ratio covers every conv layer; a dict may cover any subset
        (layers left out are simply not pruned) but must not name non-conv
        layers.
        """
        columns = {lid: layer.n_columns for lid, layer in model.conv_layers()}
        if isinstance(ratios, dict):
            ratio_map = dict(ratios)
            unknown = set(ratio_map) - set(columns)
            if unknown:
                raise ConfigError(
                    f"ratio map names layers {sorted(unknown)}, "
                    f"model has conv layers {sorted(columns)}"
                )
        else:
            ratio_map = {lid: float(ratios) for lid in columns}
        return cls(ratio_map, {lid: columns[lid] for lid in ratio_map}, peak, flatness, update_every)

    def delta(self, rank, layer_id: int):
        """Probability increment for rank(s) `rank` in the given layer."""
        lay = self.layers[layer_id]
        r = np.asarray(rank, dtype=np.float64)
        lower = self.peak * np.exp(-lay.alpha * r)
        upper = 2 * self.flatness * self.peak - self.peak * np.exp(-lay.alpha * (2 * lay.center - r))
        out = np.where(r <= lay.center, lower, upper)
        return float(out) if out.ndim == 0 else out

    def targets(self) -> dict[int, int]:
        return {lid: lay.target for lid, lay in self.layers.items()}

    def max_iteration_budget(self) -> int:
        """Default safety budget: 50x the analytic lower bound on iterations.

        The slowest group sits just below the threshold at rank target-1 with
        increment delta(target-1); it needs ceil(1/delta) updates of t
        iterations each if ranks never move.
        """
        worst = 0
        for lid, lay in self.layers.items():
            step = self.delta(lay.target - 1, lid)
            worst = max(worst, math.ceil(1.0 / step))
        return 50 * self.update_every * worst
