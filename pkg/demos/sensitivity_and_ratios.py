"""Layer sensitivity curves and FLOP-budget ratio allocation.

PCA reconstruction error of a layer's weight matrix proxies how much
information its columns carry; flatter curves tolerate harder pruning.
Given per-layer pruning proportions and a FLOP-reduction target, the
allocator solves for per-layer ratios that hit the budget exactly.
"""

import numpy as np

from probprune.config import ExperimentConfig, spawn_rngs
from probprune.criteria import allocate_ratios, conv_flops, pca_sensitivity

cfg = ExperimentConfig(n_classes=10, dims=(3, 32, 32), model_preset="reference")
model = cfg.build_model(spawn_rngs(0)["init"])

fractions = np.array([0.25, 0.5, 0.75, 1.0])
print("PCA sensitivity (normalized reconstruction error by retained fraction)")
print("layer  columns  " + "  ".join(f"f={f:.2f}" for f in fractions))
for lid, layer in model.conv_layers():
    curve = pca_sensitivity(layer.weight_matrix, fractions, layer_id=lid)
    errs = "  ".join(f"{e:.4f}" for e in curve.normalized_error)
    print(f"{lid:>5}  {layer.n_columns:>7}  {errs}")

print("\nFLOPs per conv layer (dense):")
for lid, flops in sorted(conv_flops(model).items()):
    print(f"  layer {lid}: {flops:,.0f}")

for target in (2.0, 4.0):
    plan = allocate_ratios([1.0, 1.0, 1.0], model, target)
    print(f"\ntarget speedup {target}x -> achieved {plan.achieved_speedup:.3f}x")
    for lid in sorted(plan.remaining):
        print(
            f"  layer {lid}: keep {plan.remaining[lid]:.3f} of columns "
            f"(prune ratio {plan.pruning_ratios[lid]:.3f})"
        )

# uneven proportions shift the burden onto the later, wider layers
plan = allocate_ratios([1.0, 2.0, 2.0], model, 4.0)
print("\nproportions 1:2:2 at 4x -> per-layer remaining fractions:")
for lid in sorted(plan.remaining):
    print(f"  layer {lid}: {plan.remaining[lid]:.4f}")
