"""Train a small dense baseline on the synthetic image task and watch it learn."""

from probprune.config import ExperimentConfig, spawn_rngs
from probprune.data import synthetic_dataset
from probprune.engine import run_training
from probprune.metrics import RunMetrics
from probprune.network import SgdConfig

SEED = 7

dataset = synthetic_dataset(seed=SEED, n_classes=6, n_samples=3000, dims=(3, 16, 16), margin=0.3)
rngs = spawn_rngs(SEED)
cfg = ExperimentConfig(n_classes=6, dims=(3, 16, 16), model_preset="tiny")
model = cfg.build_model(rngs["init"])

metrics = RunMetrics()
sgd = SgdConfig(learning_rate=0.05, momentum=0.9, weight_decay=1e-4, batch_size=32)
run_training(model, dataset, sgd, epochs=5, rng=rngs["train"], metrics=metrics, eval_every=25)

print("iteration  loss      val_acc")
for row in metrics.rows:
    if row.layer_id == 0:
        print(f"{row.iteration:>9}  {row.loss:<8.4f}  {row.val_acc:.4f}")

print()
print(f"final val accuracy:  {model.accuracy(dataset.x_val, dataset.y_val):.4f}")
print(f"final test accuracy: {model.accuracy(dataset.x_test, dataset.y_test):.4f}")
