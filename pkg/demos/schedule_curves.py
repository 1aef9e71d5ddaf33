"""Explore the rank-to-probability-increment curve and its closed forms.

The increment is peaked at rank 0, crosses zero exactly at the target count
R*Nc, and saturates at a mild negative value for the best-ranked groups.
A static simulation shows how the per-group probabilities absorb at 1.
"""

import numpy as np

from probprune.schedule import PruningSchedule

NC = 100
RATIO = 0.5
sched = PruningSchedule({0: RATIO}, {0: NC}, peak=0.05, flatness=0.25, update_every=1)
lay = sched.layers[0]

print(f"columns={NC} ratio={RATIO} -> target={lay.target} groups")
print(f"alpha={lay.alpha:.6f}  curve center N={lay.center:.3f}")
print(f"delta(0)      = {sched.delta(0.0, 0):+.6f}   (the peak)")
print(f"delta(N)      = {sched.delta(lay.center, 0):+.6f}   (flatness * peak)")
print(f"delta(R*Nc)   = {sched.delta(RATIO * NC, 0):+.6f}   (zero crossing)")
print(f"delta(Nc-1)   = {sched.delta(NC - 1.0, 0):+.6f}   (most protected)")

print("\nrank  delta      bar")
ranks = np.arange(0, NC, 5, dtype=np.float64)
deltas = sched.delta(ranks, 0)
scale = 40 / np.abs(deltas).max()
for r, d in zip(ranks, deltas):
    bar = "#" * int(round(abs(d) * scale))
    side = bar.rjust(40) + "|" if d < 0 else " " * 40 + "|" + bar
    print(f"{int(r):>4}  {d:+.5f}  {side}")

# with frozen ranks every group below the threshold eventually absorbs at 1
print("\nstatic-rank absorption (updates until p reaches 1):")
for rank in (0, 10, 25, 40, 49):
    p, k = 0.0, 0
    step = float(sched.delta(float(rank), 0))
    while p < 1.0:
        k += 1
        p = min(max(p + step, 0.0), 1.0)
    print(f"  rank {rank:>2}: {k} updates (delta {step:+.6f})")
