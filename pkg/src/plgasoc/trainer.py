"""Optimisation loop: AdamW with decoupled decay, warm-up + cosine schedule,
gradient clipping by value, windowed curve logging and loss-spike detection."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, InputError, NonFiniteError, TrainingDiverged
from .model import ModelConfig, ModelParams, model_forward
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr_max: float = 1.2e-3
    warmup_steps: int = 2000
    total_steps: int = 20000
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-5
    weight_decay: float = 0.1
    clip_value: float = 1.0
    lr_floor_fraction: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InputError("betas must lie in (0, 1)")
        if not self.lr_max > 0:
            raise InputError("lr_max must be positive")
        if self.warmup_steps < 0 or self.total_steps < 0 or self.warmup_steps > self.total_steps:
            raise InputError("need 0 <= warmup_steps <= total_steps")
        if not self.eps > 0 or self.weight_decay < 0 or not self.clip_value > 0:
            raise InputError("eps and clip_value must be positive, weight_decay non-negative")
        if not 0 <= self.lr_floor_fraction <= 1:
            raise InputError("lr_floor_fraction must lie in [0, 1]")


def lr_at_step(cfg: OptimizerConfig, step: int) -> float:
    """Linear ramp from 0 to ``lr_max`` then cosine decay to ``lr_floor_fraction * lr_max``."""
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.lr_max
        return cfg.lr_max * (step / cfg.warmup_steps)
    floor = cfg.lr_floor_fraction * cfg.lr_max
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return floor + (cfg.lr_max - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads: dict[str, np.ndarray], clip_value: float) -> dict[str, np.ndarray]:
    if not clip_value > 0:
        raise ContractError("clip_value must be positive")
    return {k: np.clip(g, -clip_value, clip_value) for k, g in grads.items()}


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               lr: float, cfg: OptimizerConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update; returns new parameter arrays and state."""
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        if m.shape != theta.shape:
            raise ContractError(f"moment buffer shape mismatch for {k}")
        m_hat = m / c1
        v_hat = v / c2
        new_params[k] = theta - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# logging and spike detection


@dataclass
class WindowRecord:
    step: int
    loss_avg: float
    acc_avg: float
    lr: float
    dragon_king: bool


@dataclass
class TrainLog:
    window: int
    records: list[WindowRecord] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    dragon_kings: list[int] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss_avg", "acc_avg", "lr", "dragon_king"])
            for r in self.records:
                w.writerow([r.step, repr(r.loss_avg), repr(r.acc_avg), repr(r.lr), int(r.dragon_king)])

    def write_steps_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "accuracy", "lr"])
            for row in zip(self.steps, self.losses, self.accuracies, self.lrs):
                w.writerow([row[0]] + [repr(x) for x in row[1:]])


@dataclass
class SpikeDetector:
    """Flag a step whose loss exceeds ``max(ratio * mean, mean + margin)`` of the trailing window."""

    window: int = 50
    ratio: float = 2.0
    margin: float = 1.0

    def is_spike(self, history: Sequence[float], value: float) -> bool:
        if not history:
            return False
        trail = np.asarray(history[-self.window:], dtype=np.float64)
        mu = float(trail.mean())
        return value > max(self.ratio * mu, mu + self.margin)


def detect_dragon_king(log_or_losses, detector: SpikeDetector | None = None) -> list[int]:
    """Step labels of loss spikes in a :class:`TrainLog` or a plain loss sequence.

    For a plain sequence the labels are 0-based positions.
    """
    det = detector or SpikeDetector()
    if isinstance(log_or_losses, TrainLog):
        losses, steps = log_or_losses.losses, log_or_losses.steps
    else:
        losses = list(log_or_losses)
        steps = list(range(len(losses)))
    if not losses:
        raise ContractError("detect_dragon_king needs a nonempty trace")
    return [steps[i] for i in range(len(losses)) if det.is_spike(losses[:i], losses[i])]


# ---------------------------------------------------------------------------
# loop


def batch_stream(blocks: np.ndarray, batch_size: int, rng: Rng) -> Iterable[np.ndarray]:
    """Endless deterministic batches; blocks are reshuffled each epoch."""
    blocks = np.asarray(blocks)
    if blocks.ndim != 2 or len(blocks) == 0:
        raise InputError("training blocks must be a nonempty (n, context_length) array")
    while True:
        order = rng.gen.permutation(len(blocks))
        for i in range(0, len(order), batch_size):
            yield blocks[order[i : i + batch_size]]


def train_loop(params: ModelParams, model_cfg: ModelConfig, blocks: np.ndarray, opt_cfg: OptimizerConfig,
               rng: Rng, batch_size: int = 8, log_window: int = 2000, pad_id: int | None = None,
               detector: SpikeDetector | None = None,
               checkpoint_fn: Callable[[int, ModelParams, TrainLog], None] | None = None) -> tuple[TrainLog, ModelParams]:
    """Run ``opt_cfg.total_steps`` updates of next-token training on ``blocks``.

    Each block of ``context_length`` tokens yields inputs ``block[:-1]`` and
    targets ``block[1:]``; targets equal to ``pad_id`` are masked out.
    ``checkpoint_fn`` fires at every window boundary and at completion.
    """
    if log_window < 1:
        raise InputError("log_window must be >= 1")
    detector = detector or SpikeDetector()
    tlog = TrainLog(window=log_window)
    named = params.named_tensors()
    state = AdamState()
    last_good = params.state_dict()
    stream = batch_stream(blocks, batch_size, rng)
    flagged_in_window = False

    for step in range(1, opt_cfg.total_steps + 1):
        batch = next(stream)
        inputs, targets = batch[:, :-1], batch[:, 1:]
        weights = np.ones(targets.shape) if pad_id is None else (targets != pad_id).astype(np.float64)
        params.zero_grad()
        try:
            trace = model_forward(params, model_cfg, inputs, targets, weights, capture=False)
            loss = trace.loss.item()
            if not math.isfinite(loss):
                raise NonFiniteError("loss is not finite")
            trace.loss.backward()
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite value at step {step}: {exc}", step=step, last_good=last_good) from exc

        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in named.items()}
        grads = clip_gradients(grads, opt_cfg.clip_value)
        lr = lr_at_step(opt_cfg, step)
        new, state = adamw_step(state, {k: t.data for k, t in named.items()}, grads, lr, opt_cfg)
        for k, t in named.items():
            t.data = new[k]

        if detector.is_spike(tlog.losses, loss):
            tlog.dragon_kings.append(step)
            flagged_in_window = True
        tlog.steps.append(step)
        tlog.losses.append(loss)
        tlog.accuracies.append(trace.accuracy)
        tlog.lrs.append(lr)

        if step % log_window == 0:
            rec = WindowRecord(
                step=step,
                loss_avg=float(np.mean(tlog.losses[-log_window:])),
                acc_avg=float(np.mean(tlog.accuracies[-log_window:])),
                lr=lr,
                dragon_king=flagged_in_window,
            )
            tlog.records.append(rec)
            flagged_in_window = False
            last_good = params.state_dict()
            log.info("step %d loss %.4f acc %.4f lr %.3g", step, rec.loss_avg, rec.acc_avg, lr)
            if checkpoint_fn is not None:
                checkpoint_fn(step, params, tlog)

    if checkpoint_fn is not None and opt_cfg.total_steps > 0 and opt_cfg.total_steps % log_window != 0:
        checkpoint_fn(opt_cfg.total_steps, params, tlog)
    return tlog, params
