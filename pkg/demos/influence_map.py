"""Which examples does the recognition model actually listen to?

The model code is a max over per-example features, so every feature column
is won by exactly one example. Counting wins per example gives an exact,
discrete influence score. In the bouncing-ball rooms the winners tend to be
the transitions near the room's corners, where the path bends.

    python demos/influence_map.py
"""

import numpy as np

from mela.config import bounce_preset
from mela.experiments import HELDOUT, TRAIN, VALIDATION, ensemble, example_vertex_distance, train_mela
from mela.model import example_influence
from mela.tasks.bounce import room_of

cfg = bounce_preset(seed=0, n_train=200, iterations=8, eval_every=2)
model = train_mela(cfg, ensemble(cfg, cfg.n_train, TRAIN), ensemble(cfg, 20, VALIDATION)).model

d = ensemble(cfg, 1, HELDOUT)[0]
report = example_influence(model, d.X_train, d.Y_train)
dist = example_vertex_distance(d, d.train_idx)
print("room corners:", np.round(room_of(d).vertices, 3).tolist())
print(f"{d.X_train.shape[0]} transitions; influence sums to {sum(report.fractions)}")
print("\n rank  influence  distance to nearest corner")
for rank, i in enumerate(report.top(10), 1):
    print(f"{rank:5d}  {report.values[i]:9.3f}  {dist[i]:8.3f}")
print(f"\nmean distance, all transitions: {dist.mean():.3f}")
print(f"mean distance, top 10:          {dist[report.top(10)].mean():.3f}")
