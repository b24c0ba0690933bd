"""A ball bouncing in random four-sided rooms, predicted by a generated network.

Every room is a task. From a handful of observed transitions (three
positions in, the next position out) MeLA generates a network that knows
where this room's walls are. Rolling that network forward on its own
predictions shows how far the ball can be tracked before errors pile up.

    python demos/bouncing_ball.py
"""

import math

import numpy as np

from mela import baselines as bl
from mela.config import bounce_preset
from mela.experiments import HELDOUT, TRAIN, VALIDATION, ensemble, rollout_errors, train_baseline, train_mela
from mela.tasks.bounce import gen_room, random_state, simulate

# the simulator first: one room, one trajectory, a few wall contacts
rng = np.random.default_rng(0)
room = gen_room(rng)
traj = simulate(room, random_state(rng, room), 2.0)
print("room corners:", np.round(room.vertices, 3).tolist())
for e in traj.events[:4]:
    kind = f"wall {e.wall}" if e.wall >= 0 else f"corner {-e.wall - 1}"
    print(f"  contact with {kind} after {e.arc:.3f} of path; speed {math.hypot(*e.v_after):.12f}")

# a small training run; the full-size recipe is `mela reproduce fig2`
cfg = bounce_preset(seed=0, n_train=200, iterations=8, eval_every=2, baseline_steps=4000,
                    maml_steps=500, baseline_eval_every=1000, n_heldout=40)
train = ensemble(cfg, cfg.n_train, TRAIN)
val = ensemble(cfg, 20, VALIDATION)
held = ensemble(cfg, cfg.n_heldout, HELDOUT)
models = {
    "mela": train_mela(cfg, train, val).model,
    "pretrained": train_baseline(cfg, bl.PRETRAINED, train, val).model,
    "oracle": train_baseline(cfg, bl.ORACLE, train, val).model,
}
errors = rollout_errors(models, held, cfg)
print("\nmean rollout error by distance travelled")
print("distance " + "".join(f"{m:>12}" for m in models))
for j in range(10):
    print(f"{(j + 1) / 10:8.1f} " + "".join(f"{errors[m][:, j].mean():12.4f}" for m in models))
