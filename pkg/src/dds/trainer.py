"""Sampling-based backpropagation through time and evaluation.

Every update averages gradients over ``R`` independent noise draws and takes a
plain gradient-descent step. In ``per_day_reverse`` mode an epoch walks the
days from last to first with one update per day; ``full_batch`` makes one
update per epoch on the loss over all days.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from dds.engine import (
    EngineConfig,
    MaskMode,
    batch_loss_and_grad,
    bce_loss,
    cumulative_utility,
    decision_mask,
    decision_targets,
    zero_noise_latents,
)
from dds.model import BehaviorParams, DriverHistory, ModelConfig, PARAM_NAMES, sigmoid

log = logging.getLogger(__name__)

UpdateMode = Literal["per_day_reverse", "full_batch"]
ModelKind = Literal["dds", "ds", "s"]

EPOCH_CSV_COLUMNS = ("epoch", "split", "loss", "decision_acc", "stop_exact", "stop_mae", "lambda_err", "beta_err")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, day: int | None, detail: str = ""):
        where = f"epoch {epoch}" + (f", day {day}" if day is not None else "")
        super().__init__(f"training diverged at {where}{': ' + detail if detail else ''}")
        self.epoch = epoch
        self.day = day


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    samples: int = 32
    epochs: int = 20
    temperature: float = 10.0
    noise_std_eps: float = 1.0
    noise_std_eta: float = 1.0
    seed: int = 0
    update_mode: UpdateMode = "per_day_reverse"
    train_initial_state: bool = True
    mask_mode: MaskMode = "all_slots"
    model_kind: ModelKind = "dds"
    freeze_noise_per_epoch: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.update_mode not in ("per_day_reverse", "full_batch"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.model_kind not in ("dds", "ds", "s"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")

    @property
    def engine(self) -> EngineConfig:
        return EngineConfig(temperature=self.temperature, mask_mode=self.mask_mode,
                            train_initial_state=self.train_initial_state or self.model_kind != "dds",
                            model=self.model)

    @property
    def noise_scale(self) -> tuple[float, float]:
        if self.model_kind != "dds":
            return 0.0, 0.0
        return self.noise_std_eps, self.noise_std_eta

    def trainable(self) -> np.ndarray:
        """Boolean mask over ``PARAM_NAMES``."""
        if self.model_kind == "s":
            return np.array([False, False, False, False, True, False])
        if self.model_kind == "ds":
            return np.array([False, False, False, False, True, True])
        return np.array([True, True, True, True, self.train_initial_state, self.train_initial_state])


def restrict(params: BehaviorParams, kind: ModelKind) -> BehaviorParams:
    """Pin the frozen coordinates of a reduced model."""
    if kind == "ds":
        return BehaviorParams.discounted(params.lambda0, params.beta0)
    if kind == "s":
        return BehaviorParams.satisficing(params.lambda0)
    return params


def default_init(history: DriverHistory) -> BehaviorParams:
    """Neutral starting point: half-weights, and the mean accepted daily total as target."""
    return BehaviorParams(0.5, 0.5, 0.5, 0.5, float(history.total_utilities.mean()), 0.9)


@dataclass
class SplitMetrics:
    loss: list = field(default_factory=list)
    decision_acc: list = field(default_factory=list)
    stop_exact: list = field(default_factory=list)
    stop_mae: list = field(default_factory=list)

    def append(self, m: dict):
        for k in ("loss", "decision_acc", "stop_exact", "stop_mae"):
            getattr(self, k).append(m[k])


@dataclass
class TrainReport:
    config: dict
    train: SplitMetrics = field(default_factory=SplitMetrics)
    test: SplitMetrics | None = None
    lambda_error: list | None = None
    beta_error: list | None = None
    mean_lambda: list = field(default_factory=list)
    mean_beta: list = field(default_factory=list)
    params_history: list = field(default_factory=list)
    initial_params: dict | None = None
    final_params: dict | None = None
    driver_id: str = ""

    @property
    def epochs(self) -> int:
        return len(self.train.loss)

    @property
    def final(self) -> BehaviorParams:
        return BehaviorParams.from_dict(self.final_params)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        d = dict(d)
        d["train"] = SplitMetrics(**d["train"])
        if d.get("test") is not None:
            d["test"] = SplitMetrics(**d["test"])
        return cls(**d)

    def epoch_rows(self) -> list[dict]:
        rows = []
        splits = [("train", self.train)] + ([("test", self.test)] if self.test else [])
        for e in range(self.epochs):
            for name, m in splits:
                rows.append({
                    "epoch": e + 1, "split": name,
                    "loss": m.loss[e], "decision_acc": m.decision_acc[e],
                    "stop_exact": m.stop_exact[e], "stop_mae": m.stop_mae[e],
                    "lambda_err": self.lambda_error[e] if self.lambda_error and name == "train" else "",
                    "beta_err": self.beta_error[e] if self.beta_error and name == "train" else "",
                })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=EPOCH_CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.epoch_rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


# --------------------------------------------------------------------------
# prediction and evaluation


def _margins(history: DriverHistory, params: BehaviorParams, config: EngineConfig):
    """Zero-noise ``threshold - cumulative`` over all ``T`` slots."""
    lam, beta = zero_noise_latents(history, params, config)
    cum = np.cumsum(history.utilities, axis=1)
    thr = beta[:, None] ** np.arange(history.width) * lam[:, None]
    return thr - cum


def predict_stops(params: BehaviorParams, history: DriverHistory, config: EngineConfig = EngineConfig()) -> np.ndarray:
    """Predicted last accepted ride for every day, in ``[1, T]``.

    The driver continues after ride ``t`` only while the continuation
    probability is strictly above 0.5, i.e. the threshold exceeds the
    cumulative utility; the sign is tested directly so that ties stop.
    """
    go_on = _margins(history, params, config) > 0
    stops = np.argmin(go_on, axis=1) + 1
    stops[go_on.all(axis=1)] = history.width
    return stops


def predict_stop(params: BehaviorParams, day_index: int, history: DriverHistory,
                 config: EngineConfig = EngineConfig()) -> int:
    """Stop prediction for one day; earlier days are used only as teacher-forced inputs."""
    return int(predict_stops(params, history.slice_days(0, day_index + 1), config)[-1])


def evaluate(params: BehaviorParams, history: DriverHistory, config: EngineConfig = EngineConfig(),
             days: slice | None = None) -> dict:
    """Zero-noise loss, per-decision accuracy and stop-count metrics.

    The latent state is rolled over the full history; ``days`` selects which
    days are scored.
    """
    days = days or slice(None)
    margins = _margins(history, params, config)[:, :-1]
    probs = sigmoid(margins / config.temperature)
    targets = decision_targets(history)
    mask = decision_mask(history, config.mask_mode)
    pred = margins > 0
    m = mask[days]
    stops = predict_stops(params, history, config)[days]
    observed = history.stop_counts[days]
    return {
        "loss": bce_loss(probs[days], targets[days], m, config.p_min),
        "decision_acc": float(np.mean((pred[days] == (targets[days] > 0))[m])),
        "stop_exact": float(np.mean(stops == observed)),
        "stop_mae": float(np.mean(np.abs(stops - observed))),
    }


def latent_errors(learned: BehaviorParams, truth: BehaviorParams, history: DriverHistory,
                  config: EngineConfig) -> tuple[float, float]:
    """Mean absolute gap between learned and generator zero-noise latent trajectories."""
    lam_l, beta_l = zero_noise_latents(history, learned, config)
    lam_t, beta_t = zero_noise_latents(history, truth, config)
    return float(np.mean(np.abs(lam_l - lam_t))), float(np.mean(np.abs(beta_l - beta_t)))


# --------------------------------------------------------------------------
# training


def sampled_gradient(history: DriverHistory, params: BehaviorParams, config: TrainConfig,
                     rng: np.random.Generator, day: int | None = None,
                     noise: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[float, np.ndarray]:
    """Mean loss and mean gradient over ``config.samples`` noise draws."""
    n = history.n_days if day is None else day + 1
    if noise is None:
        s_eps, s_eta = config.noise_scale
        eps = rng.normal(0.0, 1.0, (config.samples, n)) * s_eps
        eta = rng.normal(0.0, 1.0, (config.samples, n)) * s_eta
    else:
        eps, eta = noise[0][:, :n], noise[1][:, :n]
    losses, grads = batch_loss_and_grad(history, params.as_array(), eps, eta, config.engine, day)
    return float(losses.mean()), grads.mean(axis=0) * config.trainable()


def _step(params: BehaviorParams, grad: np.ndarray, lr: float, beta_min: float) -> BehaviorParams:
    x = params.as_array() - lr * grad
    x[4] = max(x[4], 0.0)
    x[5] = min(max(x[5], beta_min), 1.0)
    return BehaviorParams.from_array(x)


def sbptt_train(history: DriverHistory, config: TrainConfig, generator_truth: BehaviorParams | None = None,
                init: BehaviorParams | None = None, split_index: int | None = None) -> TrainReport:
    """Fit behaviour parameters to one driver's history.

    Days ``[0, split_index)`` are trained on; the remaining days are only
    scored. When ``generator_truth`` is given the latent-trajectory errors
    against it are tracked on the training days.
    """
    D = history.n_days
    split = D if split_index is None else split_index
    if not 1 <= split <= D:
        raise ValueError(f"split_index {split_index} outside [1, {D}]")
    train_hist = history.slice_days(0, split)
    engine = config.engine

    if init is None:
        init = default_init(train_hist)
        if generator_truth is not None and not config.train_initial_state:
            init = replace(init, lambda0=generator_truth.lambda0, beta0=generator_truth.beta0)
    params = restrict(init, config.model_kind)

    report = TrainReport(config=config_to_dict(config), driver_id=history.driver_id,
                         initial_params=params.to_dict())
    if split < D:
        report.test = SplitMetrics()
    if generator_truth is not None:
        report.lambda_error, report.beta_error = [], []

    rng = np.random.default_rng(config.seed)
    s_eps, s_eta = config.noise_scale
    for epoch in range(1, config.epochs + 1):
        frozen = None
        if config.freeze_noise_per_epoch:
            frozen = (rng.normal(0.0, 1.0, (config.samples, split)) * s_eps,
                      rng.normal(0.0, 1.0, (config.samples, split)) * s_eta)
        days = reversed(range(split)) if config.update_mode == "per_day_reverse" else [None]
        for d in days:
            loss, grad = sampled_gradient(train_hist, params, config, rng, d, frozen)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(epoch, d, f"loss={loss}")
            try:
                params = _step(params, grad, config.learning_rate, config.model.beta_min)
            except ValueError as exc:
                raise TrainingDiverged(epoch, d, str(exc)) from exc

        m_train = evaluate(params, history, engine, slice(0, split))
        if not np.isfinite(m_train["loss"]):
            raise TrainingDiverged(epoch, None, "non-finite evaluation loss")
        report.train.append(m_train)
        if report.test is not None:
            report.test.append(evaluate(params, history, engine, slice(split, D)))
        if generator_truth is not None:
            le, be = latent_errors(params, generator_truth, train_hist, engine)
            report.lambda_error.append(le)
            report.beta_error.append(be)
        lam, beta = zero_noise_latents(train_hist, params, engine)
        report.mean_lambda.append(float(lam.mean()))
        report.mean_beta.append(float(beta.mean()))
        report.params_history.append(params.to_dict())
        log.info("epoch %d loss=%.5f acc=%.4f", epoch, m_train["loss"], m_train["decision_acc"])

    report.final_params = params.to_dict()
    return report


def train_ds_baseline(history: DriverHistory, config: TrainConfig, generator_truth: BehaviorParams | None = None,
                      init: BehaviorParams | None = None, split_index: int | None = None) -> TrainReport:
    """Discounted-satisficing baseline: only the constant target and discount are fit."""
    return sbptt_train(history, replace(config, model_kind="ds"), generator_truth, init, split_index)


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d.update({f"model.{k}": v for k, v in d.pop("model").items()})
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    model = {k.split(".", 1)[1]: d.pop(k) for k in list(d) if k.startswith("model.")}
    return TrainConfig(**d, model=ModelConfig(**model))


__all__ = [
    "TrainConfig", "TrainReport", "TrainingDiverged", "sbptt_train", "train_ds_baseline",
    "evaluate", "predict_stop", "predict_stops", "latent_errors", "sampled_gradient", "PARAM_NAMES",
]
