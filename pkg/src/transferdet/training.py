"""Fine-tuning loop with loss-average monitoring, checkpoints and a divergence guard."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.annotations import AnnotatedImage
from .data.augment import AugmentationConfig, choose_input_dim
from .data.batches import batch_to_tensor, compose_batch
from .errors import ConfigurationError, DivergenceError
from .network import Network
from .region import batch_region_loss
from .tensor_core import sgd_momentum_step
from .weights import WeightsFile

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (1000, 5000, 10000, 15000, 20000, 25000, 30000)
FINAL_NAME = "final.ylw"


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 64
    max_iterations: int = 30000
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    loss_stop_threshold: float = 0.5
    stop_warmup: int = 1000
    ema_factor: float = 0.9
    checkpoint_iterations: tuple[int, ...] = DEFAULT_CHECKPOINTS
    divergence_ratio: float = 10.0
    lr_backoff_factor: float = 0.5
    max_backoffs: int = 3
    hard_negative_cap: float = 0.25
    base_input_dim: int = 416
    resize_interval: int = 10
    stop_on_loss: bool = True
    lr_steps: tuple[int, ...] = ()   # the rate is multiplied by lr_step_scale from each of these on
    lr_step_scale: float = 0.1
    lr_spike_iteration: int = 0      # 0 disables the injected spike
    lr_spike_factor: float = 100.0
    lr_spike_length: int = 50
    threads: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        cp = self.checkpoint_iterations
        if any(b <= a for a, b in zip(cp, cp[1:])):
            raise ConfigurationError("checkpoint_iterations must be strictly increasing")
        if any(c <= 0 for c in cp):
            raise ConfigurationError("checkpoint iterations must be positive")
        if any(b <= a for a, b in zip(self.lr_steps, self.lr_steps[1:])) or any(s <= 0 for s in self.lr_steps):
            raise ConfigurationError("lr_steps must be positive and strictly increasing")
        for name in ("loss_stop_threshold", "ema_factor", "divergence_ratio", "lr_backoff_factor",
                     "lr_step_scale"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_iterations >= 0")
        if self.base_input_dim % 32:
            raise ConfigurationError("base_input_dim must be a multiple of 32")


@dataclass
class TrainingState:
    iteration: int = 0
    last_loss: float = math.nan
    avg_loss: float | None = None
    current_lr: float = 1e-3
    backoffs: int = 0
    status: str = "running"
    history: list[tuple[int, float, float]] = field(default_factory=list)
    divergences: list[int] = field(default_factory=list)


@dataclass
class CheckpointRecord:
    iteration: int
    path: Path | None = None
    validation_ap: float | None = None
    avg_loss: float | None = None
    weights: WeightsFile | None = field(default=None, repr=False)


def update_avg_loss(avg: float | None, loss: float, ema_factor: float = 0.9) -> float:
    """Exponential moving average; the first loss initialises the average."""
    if not math.isfinite(loss):
        raise ValueError("non-finite loss cannot be folded into the average")
    if avg is None:
        return float(loss)
    return ema_factor * avg + (1.0 - ema_factor) * float(loss)


def should_stop(state: TrainingState, cfg: TrainingConfig) -> bool:
    return (state.avg_loss is not None and state.avg_loss < cfg.loss_stop_threshold
            and state.iteration >= cfg.stop_warmup)


def detect_divergence(state: TrainingState, loss: float, divergence_ratio: float = 10.0) -> bool:
    if not math.isfinite(loss):
        return True
    if state.avg_loss is None:
        return False
    return loss > divergence_ratio * state.avg_loss


def backoff_and_restore(state: TrainingState, checkpoints: Sequence[CheckpointRecord],
                        cfg: TrainingConfig, network: Network) -> TrainingState:
    """Halve the learning rate and reload the most recent checkpoint.

    Raises DivergenceError when no snapshot exists or the backoff budget is spent.
    """
    state.backoffs += 1
    state.divergences.append(state.iteration)
    if state.backoffs >= cfg.max_backoffs:
        state.status = "diverged"
        raise DivergenceError(
            f"loss diverged {state.backoffs} times (last at iteration {state.iteration}); "
            f"learning rate already reduced to {state.current_lr:g}"
        )
    usable = [c for c in checkpoints if c.weights is not None]
    if not usable:
        state.status = "diverged"
        raise DivergenceError("divergence with no checkpoint to restore")
    snap = usable[-1]
    network.load_state([lw.arrays for lw in snap.weights.layers])
    state.current_lr *= cfg.lr_backoff_factor
    if snap.avg_loss is not None:
        state.avg_loss = snap.avg_loss
    log.warning("divergence at iteration %d: restored iteration %d, lr -> %g",
                state.iteration, snap.iteration, state.current_lr)
    return state


def select_best_checkpoint(checkpoints: Sequence[CheckpointRecord]) -> CheckpointRecord:
    """Checkpoint just before validation AP first drops; the last one if it never drops."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    ordered = sorted(checkpoints, key=lambda c: c.iteration)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.validation_ap is None or cur.validation_ap is None:
            raise ValueError("every checkpoint needs a validation AP")
        if cur.validation_ap < prev.validation_ap:
            return prev
    return ordered[-1]


def checkpoint_name(iteration: int) -> str:
    return f"model_{iteration}.ylw"


def _save_checkpoint(network: Network, state: TrainingState, out_dir: Path | None,
                     name: str | None = None) -> CheckpointRecord:
    wf = WeightsFile.from_network(network)
    path = None
    if out_dir is not None:
        path = out_dir / (name or checkpoint_name(state.iteration))
        wf.save(path)
    return CheckpointRecord(state.iteration, path, None, state.avg_loss, wf)


def write_loss_csv(history: Sequence[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "avg_loss"])
        for it, loss, avg in history:
            w.writerow([it, f"{loss:.6g}", f"{avg:.6g}"])


def write_state(state: TrainingState, path: str | Path) -> None:
    d = asdict(state)
    d.pop("history")
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def train(network: Network, dataset: Sequence[AnnotatedImage], cfg: TrainingConfig,
          augment_cfg: AugmentationConfig | None = None, out_dir: str | Path | None = None,
          state: TrainingState | None = None) -> tuple[TrainingState, list[CheckpointRecord]]:
    """Run compose -> forward -> loss -> backward -> SGD until a stop condition.

    Stops at ``max_iterations`` or when the loss average falls below the
    threshold (after the warm-up).  Checkpoints land exactly on the scheduled
    iterations; the end point, if unscheduled, is also returned and saved as
    ``final.ylw``.  On unrecoverable divergence the state is
    marked ``diverged`` and DivergenceError propagates after the loss curve
    has been written.
    """
    augment_cfg = augment_cfg or AugmentationConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = state or TrainingState(current_lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    params = network.parameters()
    head = network.head
    schedule = set(cfg.checkpoint_iterations)
    initial = CheckpointRecord(state.iteration, None, None, state.avg_loss,
                               WeightsFile.from_network(network))
    checkpoints: list[CheckpointRecord] = []
    spike_active = cfg.lr_spike_iteration > 0
    dim = cfg.base_input_dim
    try:
        while state.iteration < cfg.max_iterations:
            it = state.iteration + 1
            if (it - 1) % cfg.resize_interval == 0:
                dim = choose_input_dim(cfg.base_input_dim, augment_cfg.scale_jitter, 32, rng)
            batch = compose_batch(dataset, cfg.batch_size, cfg.hard_negative_cap, rng,
                                  augment_cfg, cfg.threads)
            x = batch_to_tensor(batch, dim)
            raw = network.forward(x, train=True)
            loss, grad, _ = batch_region_loss(raw, [b.boxes for b in batch], head)
            state.iteration = it
            state.last_loss = loss
            lr = state.current_lr * cfg.lr_step_scale ** sum(it >= s for s in cfg.lr_steps)
            in_spike = spike_active and cfg.lr_spike_iteration <= it < cfg.lr_spike_iteration + cfg.lr_spike_length
            if in_spike:
                lr *= cfg.lr_spike_factor
            diverged = detect_divergence(state, loss, cfg.divergence_ratio)
            if not diverged:
                network.backward(grad)
                try:
                    sgd_momentum_step(params, lr, cfg.momentum, cfg.weight_decay)
                except DivergenceError:
                    diverged = True
            if diverged:
                network.zero_grad()
                state.history.append((it, loss, state.avg_loss if state.avg_loss is not None else loss))
                # an injected spike is a transient fault; the guard firing ends it
                spike_active = False
                backoff_and_restore(state, [initial] + checkpoints, cfg, network)
                continue
            state.avg_loss = update_avg_loss(state.avg_loss, loss, cfg.ema_factor)
            state.history.append((it, loss, state.avg_loss))
            if it in schedule:
                checkpoints.append(_save_checkpoint(network, state, out))
            if cfg.stop_on_loss and should_stop(state, cfg):
                state.status = "converged"
                break
        else:
            state.status = "budget"
    finally:
        if out is not None:
            write_loss_csv(state.history, out / "loss.csv")
            write_state(state, out / "state.json")
    if state.iteration > 0 and (not checkpoints or checkpoints[-1].iteration != state.iteration):
        # unscheduled end point: kept apart so model_* files match the schedule exactly
        checkpoints.append(_save_checkpoint(network, state, out, FINAL_NAME))
    return state, checkpoints
