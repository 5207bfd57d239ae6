"""Dynamic discounted satisficing model of driver stopping decisions, trained with sampled BPTT."""

from dds.model import (
    BehaviorParams,
    DaySequence,
    DriverHistory,
    LatentState,
    LatentTrajectory,
    ModelConfig,
    NoiseDraw,
    decision_probability,
    project,
    simulate_history,
    stopping_task,
    update_beta,
    update_lambda,
)

__version__ = "0.1.0"
