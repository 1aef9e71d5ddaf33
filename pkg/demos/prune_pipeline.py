"""Full pipeline: train, prune probabilistically, retrain, compare to one-shot.

Both methods remove the same number of weight-matrix columns per layer.  The
probabilistic run samples masks while training continues, so early ranking
mistakes can be undone; the recovery ratio counts the groups that escaped.
"""

import copy

import numpy as np

from probprune.config import ExperimentConfig, spawn_rngs
from probprune.criteria import fp_oneshot_prune
from probprune.data import synthetic_dataset
from probprune.engine import (
    PruningRun,
    retrain,
    run_training,
    states_from_pruned_sets,
)
from probprune.network import SgdConfig
from probprune.schedule import PruningSchedule

SEED = 3
RATIO = 0.5

dataset = synthetic_dataset(seed=SEED, n_classes=5, n_samples=2000, dims=(3, 16, 16), margin=0.3)
rngs = spawn_rngs(SEED)
cfg = ExperimentConfig(
    n_classes=5,
    dims=(3, 16, 16),
    model_preset=None,
    model_layers=(
        "conv:out=8,kernel=3,pad=1 relu pool:size=2 "
        "conv:out=12,kernel=3,pad=1 relu pool:size=2 fc:out=5"
    ),
)
model = cfg.build_model(rngs["init"])

train_sgd = SgdConfig(learning_rate=0.05, momentum=0.9, weight_decay=1e-4, batch_size=32)
run_training(model, dataset, train_sgd, epochs=4, rng=rngs["train"])
base_acc = model.accuracy(dataset.x_test, dataset.y_test)
print(f"dense baseline test accuracy: {base_acc:.4f}")

one_shot = copy.deepcopy(model)

# probabilistic route: sample masks, train, update probabilities, repeat
schedule = PruningSchedule.for_model(model, RATIO, update_every=2)
prune_sgd = SgdConfig(learning_rate=0.02, momentum=0.9, weight_decay=1e-4, batch_size=32)
run = PruningRun(model, dataset, schedule, prune_sgd, rngs["prune"])
run.run()
print(f"\nprobabilistic run finished after {run.iteration} iterations")
for rec in run.recovery:
    print(
        f"  layer {rec.layer_id}: {len(rec.initial_below)} groups started below the "
        f"threshold, {len(rec.final_above)} recovered (ratio {rec.recovery_ratio:.3f})"
    )
retrain(model, dataset, prune_sgd, 1, rngs["retrain"], states=run.states)
spp_acc = model.accuracy(dataset.x_test, dataset.y_test)

# one-shot route: cut the bottom-ranked columns of the baseline, then retrain
ratios = {lid: RATIO for lid, _ in one_shot.conv_layers()}
pruned_sets = fp_oneshot_prune(one_shot, ratios)
states = states_from_pruned_sets(one_shot, pruned_sets)
retrain(one_shot, dataset, prune_sgd, 1, spawn_rngs(SEED)["retrain"], states=states)
fp_acc = one_shot.accuracy(dataset.x_test, dataset.y_test)

print(f"\ntest accuracy, half the columns removed per conv layer:")
print(f"  probabilistic: {spp_acc:.4f}")
print(f"  one-shot:      {fp_acc:.4f}")
print(f"  dense:         {base_acc:.4f}")
