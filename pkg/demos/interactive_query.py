"""Choosing which example to measure next.

Given two examples of a sine task, which of eight candidate inputs should
be measured to best predict y at x* = -4? MeLA scores each candidate by how
strongly its (still unknown) output would move the prediction at x*, using
derivatives through the generated network and the recognition model.

    python demos/interactive_query.py
"""

import numpy as np

from mela.config import sinusoid_preset
from mela.experiments import TRAIN, VALIDATION, ensemble, interact_task, train_mela
from mela.model import sensitivity_select
from mela.tasks.sinusoid import sinusoid

cfg = sinusoid_preset(seed=1, iterations=150)
model = train_mela(cfg, ensemble(cfg, cfg.n_train, TRAIN), ensemble(cfg, cfg.n_validation, VALIDATION)).model

rng = np.random.default_rng(5)
c1, c2 = rng.uniform(0.1, 5.0), rng.uniform(0.0, np.pi)
truth = lambda x: sinusoid(np.asarray(x, dtype=float), c1, c2)
Xg = rng.uniform(-5, 5, size=(2, 1))
C = rng.uniform(-5, 5, size=(8, 1))
res = sensitivity_select(model, Xg, truth(Xg), [[-4.0]], C)
print(f"task y = {c1:.2f} sin(x + {c2:.2f}); given x = {np.round(Xg[:, 0], 2).tolist()}")
for i in np.argsort(-res.scores):
    mark = "  <- measure this one" if i == res.selected else ""
    print(f"  candidate x = {C[i, 0]:6.2f}  score {res.scores[i]:.4f}{mark}")

selected, before, errs = interact_task(model, Xg, truth(Xg), C, truth, -4.0)
print(f"\nsquared error at x* = -4: before {before:.4f}, with the chosen example {errs[selected]:.4f}, "
      f"with a random one (average) {errs.mean():.4f}")
