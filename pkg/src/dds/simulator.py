"""Synthetic drivers: exponential ride utilities labelled by the DDS rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dds.model import BehaviorParams, ModelConfig, NoiseDraw, SimulationResult, simulate_history


def default_generator() -> BehaviorParams:
    return BehaviorParams(a1=0.8, a2=0.2, b1=0.8, b2=0.2, lambda0=70.0, beta0=0.87)


@dataclass(frozen=True)
class SimConfig:
    days: int = 500
    width: int = 30
    exp_scale: float = 10.0
    generator: BehaviorParams = field(default_factory=default_generator)
    noise_std_eps: float = 1.0
    noise_std_eta: float = 1.0
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.days < 1 or self.width < 1:
            raise ValueError("days and width must be positive")
        if self.exp_scale <= 0:
            raise ValueError("exp_scale must be positive")
        if self.noise_std_eps < 0 or self.noise_std_eta < 0:
            raise ValueError("noise standard deviations must be non-negative")


def _rngs(seed: int):
    # independent streams so the utility matrix does not depend on the noise settings
    u_seq, n_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(u_seq), np.random.default_rng(n_seq)


def generate_utilities(config: SimConfig) -> np.ndarray:
    rng, _ = _rngs(config.seed)
    return rng.exponential(config.exp_scale, size=(config.days, config.width))


def generate_noise(config: SimConfig) -> NoiseDraw:
    _, rng = _rngs(config.seed)
    return NoiseDraw.sample(rng, config.days, config.noise_std_eps, config.noise_std_eta)


def generate_driver(config: SimConfig, driver_id: str = "sim") -> SimulationResult:
    """Simulate ``config.days`` days of one driver.

    The first ride of each day is always accepted since the stopping rule
    returns ``t >= 1``, also when ``lambda_d = 0``.
    """
    u = generate_utilities(config)
    noise = generate_noise(config)
    return simulate_history(config.generator, u, noise, config.model, driver_id)
