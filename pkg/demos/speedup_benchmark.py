"""Measured wall-clock speedup from physically removing pruned columns.

Masked columns cost nothing mathematically but still burn FLOPs in a dense
GEMM.  Compacting the weight matrix (dropping masked columns and gathering
only the surviving patch rows) turns the sparsity into real time savings.
"""

import numpy as np

from probprune.bench import run_benchmark
from probprune.network import ConvNetModel

rng = np.random.default_rng(5)
spec = [
    ("conv", {"out": 256, "kernel": 3, "pad": 1}),
    ("relu", {}),
    ("conv", {"out": 256, "kernel": 3, "pad": 1}),
]
model = ConvNetModel.build(spec, (256, 10, 10), rng, np.float32)
x = rng.standard_normal((4, 256, 10, 10)).astype(np.float32)

print("kept fraction  dense ms  compact ms  speedup  max |diff|")
for keep in (1.0, 0.5, 0.25, 0.1):
    for _, conv in model.conv_layers():
        mask = np.ones(conv.n_columns)
        drop = rng.permutation(conv.n_columns)[: round((1 - keep) * conv.n_columns)]
        mask[drop] = 0
        conv.set_mask(mask)
    r = run_benchmark(model, x, warmup=2, runs=10)
    print(
        f"{keep:>13.2f}  {r.dense_ms:>8.2f}  {r.compact_ms:>10.2f}  "
        f"{r.speedup:>6.2f}x  {r.max_abs_diff:.2e}"
    )

print("\ntheoretical speedup at kept fraction f is 1/f; the gap is gather overhead")
