"""Denoiser training loop: noise-prediction regression with Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..optim import Adam
from .network import DenoiserConfig, DenoiserNetwork
from .schedule import NoiseSchedule, forward_diffuse


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, timesteps: np.ndarray, batch_indices: np.ndarray):
        super().__init__(
            f"non-finite loss at step {step} "
            f"(timesteps {timesteps.tolist()}, batch indices {batch_indices.tolist()})"
        )
        self.step = step
        self.timesteps = timesteps
        self.batch_indices = batch_indices


@dataclass
class DiffusionTrainConfig:
    steps: int
    batch: int
    lr: float
    seed: int
    hidden: int = 128
    depth: int = 2
    attn_width: int = 64
    time_width: int = 32
    clip_norm: float = 1.0


@dataclass
class TrainState:
    net: DenoiserNetwork
    optimizer: Adam
    step: int
    loss_history: list[float] = field(default_factory=list)


def training_loss(
    net,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: list[np.ndarray],
    t: np.ndarray,
    noise: np.ndarray,
) -> float:
    """Mean squared error between the drawn noise and the network's estimate.

    ``x0``/``noise`` are (batch, width); ``t`` lies in [1, T] per row.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t))
    if np.any(t < 1) or np.any(t > schedule.num_steps):
        raise ValueError(f"training timesteps must lie in [1, {schedule.num_steps}]")
    x_t = forward_diffuse(schedule, x0, t, noise)
    eps_hat = net.predict(x_t, t, cond)
    return float(np.mean((noise - eps_hat) ** 2))


def loss_and_grads(
    net: DenoiserNetwork,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    cond: list[np.ndarray],
    t: np.ndarray,
    noise: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    x_t = forward_diffuse(schedule, x0, t, noise)
    eps_hat, cache = net.forward(x_t, t, cond)
    diff = eps_hat - noise
    loss = float(np.mean(diff**2))
    d_eps = (2.0 / diff.size) * diff
    return loss, net.backward(cache, d_eps)


def smoothed(history: Sequence[float], window: int = 50) -> float:
    """Trailing-mean smoothing of a loss history."""
    if not history:
        raise ValueError("empty loss history")
    tail = list(history)[-window:]
    return float(np.mean(tail))


def train(
    x0: np.ndarray,
    cond: list[np.ndarray],
    schedule: NoiseSchedule,
    config: DiffusionTrainConfig,
) -> TrainState:
    """Fit the denoiser on (feature vector, condition) pairs.

    Every step draws batch indices, per-sample timesteps, and fresh Gaussian
    noise from one seeded generator, so runs are bit-reproducible.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise ValueError("training set must be a non-empty (n, width) matrix")
    cond = [np.asarray(ctok, dtype=np.float64) for ctok in cond]
    for j, ctok in enumerate(cond):
        if ctok.shape[0] != x0.shape[0]:
            raise ValueError(f"condition token {j} has {ctok.shape[0]} rows, expected {x0.shape[0]}")

    net_config = DenoiserConfig(
        input_width=x0.shape[1],
        cond_widths=tuple(ctok.shape[1] for ctok in cond),
        hidden=config.hidden,
        depth=config.depth,
        attn_width=config.attn_width,
        time_width=config.time_width,
    )
    rng = np.random.default_rng(config.seed)
    net = DenoiserNetwork(net_config, rng_seed=config.seed)
    optimizer = Adam(lr=config.lr, clip_norm=config.clip_norm)
    state = TrainState(net=net, optimizer=optimizer, step=0)

    n = x0.shape[0]
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch, n))
        t = rng.integers(1, schedule.num_steps + 1, size=idx.size)
        noise = rng.standard_normal((idx.size, x0.shape[1]))
        batch_cond = [ctok[idx] for ctok in cond]
        # overflow mid-step shows up as a non-finite loss and aborts below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grads(net, schedule, x0[idx], batch_cond, t, noise)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, t, idx)
        optimizer.step(net.params, grads)
        state.loss_history.append(loss)
        state.step += 1
    return state
