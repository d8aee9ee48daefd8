"""DDPM noise schedule and the closed-form forward process."""

from __future__ import annotations

import numpy as np


class NoiseSchedule:
    """Beta schedule with cumulative-product tables.

    ``alpha_bar(t)`` is defined for t = 0..T with alpha_bar(0) = 1, so the
    forward process at t = 0 is the identity.
    """

    def __init__(self, betas: np.ndarray):
        betas = np.asarray(betas, dtype=np.float64).reshape(-1)
        if betas.size == 0:
            raise ValueError("schedule needs at least one step")
        if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ValueError("betas must be non-decreasing")
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_step(t, low=1)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_step(t, low=1)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t) -> np.ndarray | float:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.num_steps):
            raise ValueError(f"step out of range [0, {self.num_steps}]")
        out = self.alpha_bars[t]
        return float(out) if out.ndim == 0 else out

    def _check_step(self, t: int, low: int) -> None:
        if not low <= t <= self.num_steps:
            raise ValueError(f"step {t} out of range [{low}, {self.num_steps}]")


def linear_schedule(num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if num_steps == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, num_steps))


def forward_diffuse(schedule: NoiseSchedule, x0: np.ndarray, t, noise: np.ndarray) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    ``t`` may be a scalar or a per-row array matching a batched ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != input shape {x0.shape}")
    abar = schedule.alpha_bar(t)
    if np.ndim(abar) > 0:
        abar = np.asarray(abar)[..., None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def make_so_seed(subject_emb: np.ndarray, object_emb: np.ndarray) -> np.ndarray:
    """Coordinate-wise mean of a subject and an object box embedding."""
    a = np.asarray(subject_emb, dtype=np.float64).reshape(-1)
    b = np.asarray(object_emb, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"width mismatch: {a.shape[0]} vs {b.shape[0]}")
    return (a + b) / 2.0
