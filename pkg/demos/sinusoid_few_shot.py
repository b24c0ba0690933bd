"""Few-shot sine regression: MeLA against a single pretrained network.

Each task is y = c1 sin(x + c2) with 10 examples to learn from. MeLA reads
those 10 examples and writes the weights of a small network for the task,
with no gradient steps. The pretrained network has to make do with one set
of weights for every task.

Runs in a few minutes on one core:

    python demos/sinusoid_few_shot.py
"""

import time

import numpy as np

from mela import baselines as bl
from mela.config import sinusoid_preset
from mela.experiments import TRAIN, HELDOUT, VALIDATION, ensemble, train_baseline, train_mela
from mela.training import evaluate
from mela.model import instantiate

cfg = sinusoid_preset(seed=0, iterations=150, baseline_steps=5000)
train = ensemble(cfg, cfg.n_train, TRAIN)
val = ensemble(cfg, cfg.n_validation, VALIDATION)
held = ensemble(cfg, 300, HELDOUT)
print(f"{len(train)} training tasks, {len(held)} held-out tasks, 10 + 10 examples each")

t0 = time.perf_counter()
mela = train_mela(cfg, train, val)
print(f"MeLA: {mela.steps} meta-gradient steps in {time.perf_counter() - t0:.0f}s")
pre = train_baseline(cfg, bl.PRETRAINED, train, val)
print(f"pretrained: {pre.steps} steps")

print("\ntest MSE on held-out tasks after k fine-tuning steps")
print("   k      MeLA   pretrained")
a = evaluate(mela.model, held, K=10)
b = evaluate(pre.model, held, K=10)
for k in (0, 1, 5, 10):
    print(f"{k:4d}  {a.mean[k]:8.4f}  {b.mean[k]:10.4f}")

# one task up close: the generated network against the truth
d = held[0]
c1, c2 = d.oracle_params()
xs = np.linspace(-5, 5, 9).reshape(-1, 1)
ys = instantiate(mela.model, d.X_train, d.Y_train).predict(xs).value
print(f"\ntask 0: y = {c1:.2f} sin(x + {c2:.2f})")
for x, y in zip(xs[:, 0], ys[:, 0]):
    print(f"  x={x:5.1f}  truth={c1 * np.sin(x + c2):7.3f}  generated net={y:7.3f}")
