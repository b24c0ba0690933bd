"""Task families: sinusoid regression and a ball bouncing in convex rooms."""

from .bounce import (
    BALL_RADIUS,
    BallState,
    PolygonRoom,
    Trajectory,
    bounce_ensemble,
    gen_bounce_dataset,
    gen_room,
    rollout_eval,
    simulate,
)
from .sinusoid import gen_sinusoid_dataset, sinusoid_ensemble
