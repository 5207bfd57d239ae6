"""Dynamic discounted satisficing: latent-state recurrences and the stopping rule.

A driver carries an initial target ``lambda`` and a within-day discount factor
``beta``. On each day the driver keeps accepting rides until the accumulated
utility reaches the discounted threshold ``beta**(t-1) * lambda``. Across days
both quantities evolve through noisy linear recurrences that are projected back
onto their feasible sets.

Satisficing (S) and discounted satisficing (DS) are special cases:
``(a1, a2, b1, b2) = (1, 0, 1, 0)`` with zero noise freezes the latent state
(DS), and additionally ``beta0 = 1`` makes the threshold constant (S).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

DEFAULT_BETA_MIN = 1e-6

Activation = Literal["clamp", "smooth"]
UtilityFeedback = Literal["accepted", "full_day"]


@dataclass(frozen=True)
class BehaviorParams:
    """Trainable weights ``(a1, a2, b1, b2)`` and the day-1 latent state."""

    a1: float
    a2: float
    b1: float
    b2: float
    lambda0: float
    beta0: float

    def __post_init__(self):
        vals = (self.a1, self.a2, self.b1, self.b2, self.lambda0, self.beta0)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite behaviour parameter in {self}")
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")
        if not 0 < self.beta0 <= 1:
            raise ValueError(f"beta0 must lie in (0, 1], got {self.beta0}")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        return (self.a1, self.a2, self.b1, self.b2)

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.b1, self.b2, self.lambda0, self.beta0])

    @classmethod
    def from_array(cls, x) -> "BehaviorParams":
        return cls(*(float(v) for v in x))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorParams":
        return cls(**{k: float(d[k]) for k in PARAM_NAMES})

    @classmethod
    def discounted(cls, lambda0: float, beta0: float) -> "BehaviorParams":
        """DS reduction: latent state frozen across days."""
        return cls(1.0, 0.0, 1.0, 0.0, lambda0, beta0)

    @classmethod
    def satisficing(cls, lambda0: float) -> "BehaviorParams":
        return cls(1.0, 0.0, 1.0, 0.0, lambda0, 1.0)


PARAM_NAMES = ("a1", "a2", "b1", "b2", "lambda0", "beta0")


@dataclass(frozen=True)
class ModelConfig:
    beta_min: float = DEFAULT_BETA_MIN
    activation: Activation = "clamp"
    utility_feedback: UtilityFeedback = "accepted"

    def __post_init__(self):
        if not 0 < self.beta_min < 1:
            raise ValueError("beta_min must lie in (0, 1)")
        if self.activation not in ("clamp", "smooth"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.utility_feedback not in ("accepted", "full_day"):
            raise ValueError(f"unknown utility_feedback {self.utility_feedback!r}")


@dataclass(frozen=True)
class DaySequence:
    utilities: tuple[float, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.utilities) != len(self.labels):
            raise ValueError("utilities and labels differ in length")
        if not self.labels:
            raise ValueError("empty day")
        if any(u < 0 or not math.isfinite(u) for u in self.utilities):
            raise ValueError("utilities must be finite and non-negative")
        if any(y not in (0, 1) for y in self.labels):
            raise ValueError("labels must be binary")
        if any(b > a for a, b in zip(self.labels, self.labels[1:])):
            raise ValueError(f"labels are not a prefix of ones: {self.labels}")
        if self.labels[0] != 1:
            raise ValueError("the first ride of a day is always accepted")

    @property
    def stop_count(self) -> int:
        return sum(self.labels)

    @property
    def total_utility(self) -> float:
        return float(sum(self.utilities[: self.stop_count]))

    @property
    def width(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DriverHistory:
    """Padded ``D x T`` utility matrix and binary acceptance labels of one driver."""

    utilities: np.ndarray
    labels: np.ndarray
    driver_id: str = "driver"

    def __post_init__(self):
        u = np.array(self.utilities, dtype=float)
        y = np.array(self.labels, dtype=np.int8)
        if u.ndim != 2 or u.shape != y.shape:
            raise ValueError(f"utilities {u.shape} and labels {y.shape} must be equal 2-d shapes")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValueError("history needs at least one day and one slot")
        if not np.all(np.isfinite(u)) or np.any(u < 0):
            raise ValueError("utilities must be finite and non-negative")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be binary")
        if np.any(np.diff(y, axis=1) > 0):
            raise ValueError("labels must be a prefix of ones on every day")
        if np.any(y[:, 0] != 1):
            raise ValueError("the first ride of every day must be accepted")
        u.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_days(cls, days: Sequence[DaySequence], driver_id: str = "driver") -> "DriverHistory":
        widths = {d.width for d in days}
        if len(widths) != 1:
            raise ValueError(f"days have differing widths {sorted(widths)}")
        return cls(np.array([d.utilities for d in days]), np.array([d.labels for d in days]), driver_id)

    @property
    def n_days(self) -> int:
        return self.utilities.shape[0]

    @property
    def width(self) -> int:
        return self.utilities.shape[1]

    @property
    def stop_counts(self) -> np.ndarray:
        return self.labels.sum(axis=1).astype(int)

    @property
    def total_utilities(self) -> np.ndarray:
        return (self.utilities * self.labels).sum(axis=1)

    def day(self, d: int) -> DaySequence:
        return DaySequence(tuple(self.utilities[d].tolist()), tuple(int(v) for v in self.labels[d]))

    @property
    def days(self) -> list[DaySequence]:
        return [self.day(d) for d in range(self.n_days)]

    def feedback_utilities(self, mode: UtilityFeedback = "accepted") -> np.ndarray:
        """Per-day utility fed to the next day's target update."""
        if mode == "full_day":
            return self.utilities.sum(axis=1)
        return self.total_utilities

    def slice_days(self, start: int, stop: int | None = None) -> "DriverHistory":
        return DriverHistory(self.utilities[start:stop], self.labels[start:stop], self.driver_id)


@dataclass(frozen=True)
class LatentState:
    lam: float
    beta: float
    lam_pre: float
    beta_pre: float
    lam_clamped: bool
    beta_clamped: bool


@dataclass(frozen=True)
class LatentTrajectory:
    states: tuple[LatentState, ...]

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.states])

    @property
    def betas(self) -> np.ndarray:
        return np.array([s.beta for s in self.states])

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class NoiseDraw:
    """Additive noise per day. Entry 0 is never used: day 1 takes the initial state."""

    eps: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if eps.shape != eta.shape or eps.ndim != 1:
            raise ValueError("eps and eta must be 1-d arrays of equal length")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "eta", eta)

    def __len__(self):
        return len(self.eps)

    @classmethod
    def zeros(cls, n_days: int) -> "NoiseDraw":
        return cls(np.zeros(n_days), np.zeros(n_days))

    @classmethod
    def sample(cls, rng: np.random.Generator, n_days: int, std_eps=1.0, std_eta=1.0) -> "NoiseDraw":
        return cls(rng.normal(0.0, std_eps, n_days), rng.normal(0.0, std_eta, n_days))


def project(x: float, lo: float, hi: float) -> float:
    """Clamp ``x`` onto ``[lo, hi]``; either bound may be infinite."""
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if x <= lo:
        return lo
    if x >= hi:
        return hi
    return x


def _check_finite(**kw):
    for k, v in kw.items():
        if not math.isfinite(v):
            raise ValueError(f"{k} must be finite, got {v}")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def update_lambda(prev_lambda: float, prev_total_utility: float, eps: float, params: BehaviorParams,
                  config: ModelConfig = ModelConfig()) -> tuple[float, float, bool]:
    """One step of the target recurrence. Returns ``(lambda, lambda_pre, clamped)``."""
    _check_finite(prev_lambda=prev_lambda, prev_total_utility=prev_total_utility, eps=eps)
    if prev_lambda < 0:
        raise ValueError("prev_lambda must be >= 0")
    pre = params.a1 * prev_lambda + params.a2 * prev_total_utility + eps
    # ReLU and the [0, inf) projection coincide
    lam = project(pre, 0.0, math.inf)
    return lam, pre, pre <= 0.0


def update_beta(prev_beta: float, prev_stop_count: int, eta: float, params: BehaviorParams,
                config: ModelConfig = ModelConfig()) -> tuple[float, float, bool]:
    """One step of the discount recurrence. Returns ``(beta, beta_pre, clamped)``."""
    _check_finite(prev_beta=prev_beta, eta=eta)
    if not 0 < prev_beta <= 1:
        raise ValueError("prev_beta must lie in (0, 1]")
    if prev_stop_count < 1:
        raise ValueError("prev_stop_count must be a positive integer")
    pre = params.b1 * prev_beta + params.b2 * math.exp(-prev_stop_count) + eta
    if config.activation == "smooth":
        beta = float(sigmoid(pre))
        beta = project(beta, config.beta_min, 1.0)
        return beta, pre, beta == config.beta_min
    beta = project(pre, config.beta_min, 1.0)
    return beta, pre, not (config.beta_min < pre < 1.0)


def stopping_task(utilities: Sequence[float], lam: float, beta: float) -> int | None:
    """Smallest 1-based ``t`` with cumulative utility ``>= beta**(t-1) * lam``.

    Returns ``None`` when the threshold is never met within the offered rides.
    """
    if len(utilities) == 0:
        raise ValueError("utilities must be non-empty")
    if lam < 0 or not 0 < beta <= 1:
        raise ValueError(f"invalid latent state lambda={lam}, beta={beta}")
    cum = 0.0
    for t, u in enumerate(utilities, start=1):
        cum += u
        if cum >= beta ** (t - 1) * lam:
            return t
    return None


def decision_probability(lam: float, beta: float, t: int, cumulative_utility: float,
                         temperature: float = 1.0) -> float:
    """Probability of continuing after ride ``t``.

    Exactly 0.5 at a tie; the stopping rule treats a tie as a stop, so the
    driver is predicted to continue only when the probability is strictly
    above 0.5.
    """
    if t < 1:
        raise ValueError("t is 1-based")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return float(sigmoid((beta ** (t - 1) * lam - cumulative_utility) / temperature))


def continues(prob: float) -> bool:
    return prob > 0.5


@dataclass(frozen=True)
class SimulationResult:
    history: DriverHistory
    trajectory: LatentTrajectory
    stop_counts: np.ndarray = field(repr=False)


def simulate_history(params: BehaviorParams, raw_utilities, noise: NoiseDraw,
                     config: ModelConfig = ModelConfig(), driver_id: str = "driver") -> SimulationResult:
    """Generate the decisions of a driver following the model on offered utilities.

    Day 1 uses ``(lambda0, beta0)`` verbatim. A day on which the threshold is
    never reached accepts every offered ride.
    """
    u = np.asarray(raw_utilities, dtype=float)
    if u.ndim != 2:
        raise ValueError("raw_utilities must be a D x T matrix")
    n_days, width = u.shape
    if len(noise) != n_days:
        raise ValueError(f"noise has {len(noise)} days, utilities have {n_days}")

    labels = np.zeros((n_days, width), dtype=np.int8)
    stops = np.zeros(n_days, dtype=int)
    states = []
    lam, beta = params.lambda0, params.beta0
    state = LatentState(lam, beta, lam, beta, False, False)
    for d in range(n_days):
        if d > 0:
            prev_u = u[d - 1].sum() if config.utility_feedback == "full_day" else u[d - 1, : stops[d - 1]].sum()
            lam, lam_pre, lam_c = update_lambda(lam, float(prev_u), float(noise.eps[d]), params, config)
            beta, beta_pre, beta_c = update_beta(beta, int(stops[d - 1]), float(noise.eta[d]), params, config)
            state = LatentState(lam, beta, lam_pre, beta_pre, lam_c, beta_c)
        states.append(state)
        t = stopping_task(u[d], lam, beta)
        stops[d] = width if t is None else t
        labels[d, : stops[d]] = 1
    history = DriverHistory(u, labels, driver_id)
    return SimulationResult(history, LatentTrajectory(tuple(states)), stops)
