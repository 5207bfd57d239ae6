"""Noise-conditioned forward pass, BCE loss and exact reverse-mode gradients.

The recurrences are teacher-forced: day ``d`` reads the observed total utility
and stop count of day ``d-1`` from the history, never the model's own
prediction. The decision probability after ride ``t`` predicts the label of
slot ``t+1`` (slot 1 is always accepted), so a history of width ``T`` yields
``T-1`` decision targets per day.

All heavy loops are batched over ``R`` independent noise draws; the public
single-draw ``forward``/``backward`` pair is the ``R = 1`` case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numba
import numpy as np

from dds.model import (
    BehaviorParams,
    DriverHistory,
    LatentState,
    LatentTrajectory,
    ModelConfig,
    NoiseDraw,
    PARAM_NAMES,
)

MaskMode = Literal["all_slots", "prefix_plus_one"]
P_MIN = 1e-7


@dataclass(frozen=True)
class EngineConfig:
    temperature: float = 1.0
    mask_mode: MaskMode = "all_slots"
    p_min: float = P_MIN
    train_initial_state: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mask_mode not in ("all_slots", "prefix_plus_one"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")
        if not 0 < self.p_min < 0.5:
            raise ValueError("p_min must lie in (0, 0.5)")


@dataclass(frozen=True)
class Gradients:
    d_a1: float
    d_a2: float
    d_b1: float
    d_b2: float
    d_lambda0: float = 0.0
    d_beta0: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.d_a1, self.d_a2, self.d_b1, self.d_b2, self.d_lambda0, self.d_beta0])

    @classmethod
    def from_array(cls, g) -> "Gradients":
        return cls(*(float(v) for v in g))


@dataclass(frozen=True)
class ForwardTrace:
    """Everything one forward pass produced; ``backward`` consumes it."""

    latent: LatentTrajectory
    probs: np.ndarray
    thresholds: np.ndarray
    cumulative: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    loss: float
    params: BehaviorParams
    noise: NoiseDraw
    config: EngineConfig
    lam_gate: np.ndarray = field(repr=False)
    beta_gate: np.ndarray = field(repr=False)


# --------------------------------------------------------------------------
# batched kernels


@numba.njit(cache=True)
def _rollout(p, fb_u, stops, eps, eta, n_days, beta_min, smooth):
    """Teacher-forced latent trajectories for ``R`` noise draws.

    Returns lam, beta and the derivative of each projection w.r.t. its
    pre-activation (0 when clamped, including exactly at the boundary).
    """
    a1, a2, b1, b2, lam0, beta0 = p[0], p[1], p[2], p[3], p[4], p[5]
    R = eps.shape[0]
    lam = np.empty((R, n_days))
    beta = np.empty((R, n_days))
    lam_pre = np.empty((R, n_days))
    beta_pre = np.empty((R, n_days))
    lam_gate = np.empty((R, n_days))
    beta_gate = np.empty((R, n_days))
    for r in range(R):
        lam[r, 0] = lam0
        beta[r, 0] = beta0
        lam_pre[r, 0] = lam0
        beta_pre[r, 0] = beta0
        lam_gate[r, 0] = 1.0
        beta_gate[r, 0] = 1.0
        for d in range(1, n_days):
            x = a1 * lam[r, d - 1] + a2 * fb_u[d - 1] + eps[r, d]
            lam_pre[r, d] = x
            if x > 0.0:
                lam[r, d] = x
                lam_gate[r, d] = 1.0
            else:
                lam[r, d] = 0.0
                lam_gate[r, d] = 0.0
            y = b1 * beta[r, d - 1] + b2 * np.exp(-stops[d - 1]) + eta[r, d]
            beta_pre[r, d] = y
            if smooth:
                s = 0.5 * (1.0 + np.tanh(0.5 * y))
                if s > beta_min:
                    beta[r, d] = min(s, 1.0)
                    beta_gate[r, d] = s * (1.0 - s)
                else:
                    beta[r, d] = beta_min
                    beta_gate[r, d] = 0.0
            elif y <= beta_min:
                beta[r, d] = beta_min
                beta_gate[r, d] = 0.0
            elif y >= 1.0:
                beta[r, d] = 1.0
                beta_gate[r, d] = 0.0
            else:
                beta[r, d] = y
                beta_gate[r, d] = 1.0
    return lam, beta, lam_pre, beta_pre, lam_gate, beta_gate


@numba.njit(cache=True)
def _reverse(p, fb_u, stops, lam, beta, lam_gate, beta_gate, g_lam, g_beta):
    """Accumulate weight gradients backwards over days.

    ``g_lam``/``g_beta`` hold the direct loss sensitivity to each day's latent
    state. Column order of the result follows ``PARAM_NAMES``.
    """
    a1, b1, b2 = p[0], p[2], p[3]
    R, n_days = lam.shape
    out = np.zeros((R, 6))
    for r in range(R):
        carry_l = 0.0
        carry_b = 0.0
        for d in range(n_days - 1, 0, -1):
            gl = (g_lam[r, d] + carry_l) * lam_gate[r, d]
            out[r, 0] += gl * lam[r, d - 1]
            out[r, 1] += gl * fb_u[d - 1]
            carry_l = gl * a1
            gb = (g_beta[r, d] + carry_b) * beta_gate[r, d]
            out[r, 2] += gb * beta[r, d - 1]
            out[r, 3] += gb * np.exp(-stops[d - 1])
            carry_b = gb * b1
        out[r, 4] = g_lam[r, 0] + carry_l
        out[r, 5] = g_beta[r, 0] + carry_b
    return out


# --------------------------------------------------------------------------
# slot-level pieces


def decision_targets(history: DriverHistory) -> np.ndarray:
    """Continuation target after ride ``t``: whether ride ``t+1`` was accepted."""
    return history.labels[:, 1:].astype(float)


def decision_mask(history: DriverHistory, mode: MaskMode) -> np.ndarray:
    n_dec = history.width - 1
    if mode == "all_slots":
        return np.ones((history.n_days, n_dec), dtype=bool)
    # continue decisions up to and including the observed stop
    t = np.arange(1, n_dec + 1)
    return t[None, :] <= history.stop_counts[:, None]


def cumulative_utility(history: DriverHistory) -> np.ndarray:
    return np.cumsum(history.utilities, axis=1)[:, :-1]


def bce_loss(probs, labels, mask, p_min: float = P_MIN) -> float:
    """Mean binary cross-entropy over masked entries, probabilities clipped to ``[p_min, 1-p_min]``."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if probs.shape != labels.shape or probs.shape != mask.shape:
        raise ValueError("probs, labels and mask must share a shape")
    if not mask.any():
        raise ValueError("empty loss mask")
    p = np.clip(probs[mask], p_min, 1 - p_min)
    y = labels[mask]
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _bce_grad(p, y, mask, p_min, n):
    inside = mask & (p > p_min) & (p < 1 - p_min)
    g = np.where(y > 0, -1.0 / np.clip(p, p_min, None), 1.0 / np.clip(1 - p, p_min, None))
    return np.where(inside, g, 0.0) / n


def _slot_terms(lam, beta, cum, temperature):
    """thresholds and probabilities, broadcasting latent arrays of shape ``(..., )`` over slots."""
    powers = np.arange(cum.shape[-1], dtype=float)
    disc = beta[..., None] ** powers
    thr = disc * lam[..., None]
    z = (thr - cum) / temperature
    probs = 0.5 * (1.0 + np.tanh(0.5 * z))
    return powers, disc, thr, probs


def _latent_grads(g_prob, probs, powers, disc, lam, beta, temperature):
    """Chain rule from d loss/d prob down to d loss/d lambda_d and d loss/d beta_d."""
    g_thr = g_prob * probs * (1.0 - probs) / temperature
    g_lam = np.sum(g_thr * disc, axis=-1)
    # d/dbeta beta**k = k * beta**(k-1); the k = 0 term is identically zero
    dpow = np.zeros_like(disc)
    dpow[..., 1:] = powers[1:] * beta[..., None] ** (powers[1:] - 1)
    g_beta = np.sum(g_thr * dpow, axis=-1) * lam
    return g_lam, g_beta


def _inputs(history: DriverHistory, config: EngineConfig):
    fb_u = history.feedback_utilities(config.model.utility_feedback)
    return np.ascontiguousarray(fb_u, dtype=float), history.stop_counts.astype(float)


def _check_finite(name, arr):
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        loc = tuple(int(i) for i in bad[0])
        raise FloatingPointError(f"non-finite {name} at index {loc}")


# --------------------------------------------------------------------------
# batched objective used by the trainer


def batch_loss_and_grad(history: DriverHistory, params: np.ndarray, eps: np.ndarray, eta: np.ndarray,
                        config: EngineConfig, day: int | None = None):
    """Losses and gradients for ``R`` noise draws at once.

    With ``day`` set, only that day's decisions enter the loss and the
    recurrence is rolled up to that day. Returns ``(losses (R,), grads (R, 6))``.
    """
    eps = np.atleast_2d(eps)
    eta = np.atleast_2d(eta)
    fb_u, stops = _inputs(history, config)
    n_days = history.n_days if day is None else day + 1
    smooth = config.model.activation == "smooth"
    lam, beta, _, _, lam_gate, beta_gate = _rollout(
        params, fb_u, stops, eps, eta, n_days, config.model.beta_min, smooth)

    cum = cumulative_utility(history)
    targets = decision_targets(history)
    mask = decision_mask(history, config.mask_mode)
    if day is not None:
        lam_d, beta_d = lam[:, day], beta[:, day]
        cum, targets, mask = cum[day], targets[day], mask[day]
    else:
        lam_d, beta_d = lam, beta
    n = mask.sum()
    if n == 0:
        raise ValueError("empty loss mask")

    powers, disc, _, probs = _slot_terms(lam_d, beta_d, cum, config.temperature)
    pc = np.clip(probs, config.p_min, 1 - config.p_min)
    terms = np.where(mask, targets * np.log(pc) + (1 - targets) * np.log1p(-pc), 0.0)
    losses = -terms.reshape(len(eps), -1).sum(axis=1) / n
    g_prob = _bce_grad(probs, targets, mask, config.p_min, n)
    g_lam_d, g_beta_d = _latent_grads(g_prob, probs, powers, disc, lam_d, beta_d, config.temperature)

    if day is not None:
        g_lam = np.zeros_like(lam)
        g_beta = np.zeros_like(beta)
        g_lam[:, day] = g_lam_d
        g_beta[:, day] = g_beta_d
    else:
        g_lam, g_beta = g_lam_d, g_beta_d
    grads = _reverse(params, fb_u, stops, lam, beta, lam_gate, beta_gate,
                     np.ascontiguousarray(g_lam), np.ascontiguousarray(g_beta))
    if not config.train_initial_state:
        grads[:, 4:] = 0.0
    return losses, grads


def zero_noise_latents(history: DriverHistory, params: BehaviorParams, config: EngineConfig):
    """Deterministic teacher-forced ``(lambda_d, beta_d)`` arrays."""
    fb_u, stops = _inputs(history, config)
    z = np.zeros((1, history.n_days))
    lam, beta, *_ = _rollout(params.as_array(), fb_u, stops, z, z, history.n_days,
                             config.model.beta_min, config.model.activation == "smooth")
    return lam[0], beta[0]


def decision_probs(history: DriverHistory, params: BehaviorParams, config: EngineConfig) -> np.ndarray:
    """Zero-noise continuation probabilities, shape ``(D, T-1)``."""
    lam, beta = zero_noise_latents(history, params, config)
    return _slot_terms(lam, beta, cumulative_utility(history), config.temperature)[3]


# --------------------------------------------------------------------------
# single-draw public API


def forward(history: DriverHistory, params: BehaviorParams, noise: NoiseDraw,
            config: EngineConfig = EngineConfig(), loss_days: Sequence[int] | None = None) -> ForwardTrace:
    """Run the recurrence under one noise draw and score every masked decision.

    ``loss_days`` restricts the loss to a subset of days; the recurrence still
    rolls over the whole history.
    """
    if len(noise) != history.n_days:
        raise ValueError(f"noise covers {len(noise)} days, history has {history.n_days}")
    if history.width < 2:
        raise ValueError("histories need at least two slots to carry a decision")
    fb_u, stops = _inputs(history, config)
    p = params.as_array()
    lam, beta, lam_pre, beta_pre, lam_gate, beta_gate = _rollout(
        p, fb_u, stops, noise.eps[None, :], noise.eta[None, :], history.n_days,
        config.model.beta_min, config.model.activation == "smooth")
    lam, beta, lam_pre, beta_pre = lam[0], beta[0], lam_pre[0], beta_pre[0]
    _check_finite("lambda", lam)
    _check_finite("beta", beta)

    cum = cumulative_utility(history)
    _, _, thr, probs = _slot_terms(lam, beta, cum, config.temperature)
    _check_finite("threshold (day, slot)", thr)
    _check_finite("probability (day, slot)", probs)
    mask = decision_mask(history, config.mask_mode)
    if loss_days is not None:
        keep = np.zeros(history.n_days, dtype=bool)
        keep[list(loss_days)] = True
        mask = mask & keep[:, None]
    targets = decision_targets(history)
    loss = bce_loss(probs, targets, mask, config.p_min)

    states = tuple(
        LatentState(float(lam[d]), float(beta[d]), float(lam_pre[d]), float(beta_pre[d]),
                    bool(lam_gate[0, d] == 0.0), bool(beta_gate[0, d] == 0.0))
        for d in range(history.n_days))
    return ForwardTrace(LatentTrajectory(states), probs, thr, cum, targets, mask, loss,
                        params, noise, config, lam_gate[0], beta_gate[0])


def backward(trace: ForwardTrace, history: DriverHistory, params: BehaviorParams) -> Gradients:
    """Exact gradient of ``trace.loss`` with respect to the behaviour parameters."""
    if params != trace.params:
        raise ValueError("trace was produced with different parameters")
    if trace.probs.shape != (history.n_days, history.width - 1):
        raise ValueError("trace does not match the history shape")
    config = trace.config
    fb_u, stops = _inputs(history, config)
    lam = trace.latent.lambdas
    beta = trace.latent.betas
    n = trace.mask.sum()
    g_prob = _bce_grad(trace.probs, trace.targets, trace.mask, config.p_min, n)
    powers = np.arange(trace.probs.shape[1], dtype=float)
    disc = beta[:, None] ** powers
    g_lam, g_beta = _latent_grads(g_prob, trace.probs, powers, disc, lam, beta, config.temperature)
    g = _reverse(params.as_array(), fb_u, stops, lam[None, :], beta[None, :],
                 trace.lam_gate[None, :], trace.beta_gate[None, :], g_lam[None, :], g_beta[None, :])[0]
    if not config.train_initial_state:
        g[4:] = 0.0
    _check_finite("gradient", g)
    return Gradients.from_array(g)


def finite_diff_gradients(history: DriverHistory, params: BehaviorParams, noise: NoiseDraw,
                          config: EngineConfig = EngineConfig(), step: float = 1e-5,
                          loss_days: Sequence[int] | None = None) -> Gradients:
    """Central differences of ``forward(...).loss`` under a frozen noise draw."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = params.as_array()
    names = PARAM_NAMES if config.train_initial_state else PARAM_NAMES[:4]
    g = np.zeros(6)
    for i, _ in enumerate(names):
        hi, lo = base.copy(), base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = forward(history, BehaviorParams.from_array(hi), noise, config, loss_days).loss
        f_lo = forward(history, BehaviorParams.from_array(lo), noise, config, loss_days).loss
        g[i] = (f_hi - f_lo) / (2 * step)
    return Gradients.from_array(g)
