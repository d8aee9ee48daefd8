"""Conditional noise-prediction network over feature vectors.

The denoiser maps (noisy feature vector, timestep, condition tokens) to a
noise estimate of the same width.  Conditioning uses one single-head
cross-attention block whose query comes from the hidden state and whose
keys/values come from per-token projections of the condition sequence, so
tokens of unequal widths (text embedding, hardness vector) share an
attention space.

Forward and backward passes are written out explicitly in numpy; the
backward pass is verified against central finite differences in the test
suite, which is the reason for keeping float64 end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..encoders import ConditionVector
from ..optim import silu, silu_grad


@dataclass(frozen=True)
class DenoiserConfig:
    input_width: int
    cond_widths: tuple[int, ...]
    hidden: int = 128
    depth: int = 2
    attn_width: int = 64
    time_width: int = 32

    def __post_init__(self):
        if self.input_width < 1:
            raise ValueError("input_width must be positive")
        if not 1 <= len(self.cond_widths) <= 2:
            raise ValueError("denoiser supports 1 or 2 condition tokens")
        if self.time_width < 4 or self.time_width % 2:
            raise ValueError("time_width must be an even number >= 4")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")


def sinusoidal_embedding(t: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    exponents = np.arange(half, dtype=np.float64) / max(half - 1, 1)
    freqs = np.exp(-math.log(10000.0) * exponents)
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def stack_conditions(conds: Sequence[ConditionVector]) -> list[np.ndarray]:
    """Batch per-sample condition vectors into per-token matrices."""
    widths = conds[0].widths
    for c in conds:
        if c.widths != widths:
            raise ValueError(f"inconsistent condition widths in batch: {c.widths} vs {widths}")
    return [np.stack([c.tokens[j] for c in conds]) for j in range(len(widths))]


class DenoiserNetwork:
    """Residual MLP trunk with timestep embedding and cross-attention conditioning."""

    def __init__(self, config: DenoiserConfig, rng_seed: int = 0):
        self.config = config
        rng = np.random.default_rng(rng_seed)
        c = config
        self.params: dict[str, np.ndarray] = {}

        def dense(name: str, out_dim: int, in_dim: int) -> None:
            self.params[f"{name}.w"] = rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)
            self.params[f"{name}.b"] = np.zeros(out_dim)

        dense("in", c.hidden, c.input_width)
        dense("time.1", c.hidden, c.time_width)
        dense("time.2", c.hidden, c.hidden)
        dense("attn.q", c.attn_width, c.hidden)
        for j, w in enumerate(c.cond_widths):
            dense(f"attn.k{j}", c.attn_width, w)
            dense(f"attn.v{j}", c.attn_width, w)
        dense("attn.out", c.hidden, c.attn_width)
        for i in range(c.depth):
            dense(f"trunk{i}.1", c.hidden, c.hidden)
            dense(f"trunk{i}.2", c.hidden, c.hidden)
        dense("out", c.input_width, c.hidden)

    # -- helpers -----------------------------------------------------------

    def _check_inputs(self, x: np.ndarray, t: np.ndarray, cond: list[np.ndarray]) -> None:
        c = self.config
        if x.ndim != 2 or x.shape[1] != c.input_width:
            raise ValueError(f"input must be (batch, {c.input_width}), got {x.shape}")
        if t.shape != (x.shape[0],):
            raise ValueError(f"timesteps must be ({x.shape[0]},), got {t.shape}")
        if len(cond) != len(c.cond_widths):
            raise ValueError(
                f"expected {len(c.cond_widths)} condition tokens, got {len(cond)}"
            )
        for j, (tok, w) in enumerate(zip(cond, c.cond_widths)):
            if tok.shape != (x.shape[0], w):
                raise ValueError(
                    f"condition token {j} must be ({x.shape[0]}, {w}), got {tok.shape}"
                )

    def has_finite_params(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())

    # -- forward -----------------------------------------------------------

    def forward(
        self, x: np.ndarray, t: np.ndarray, cond: list[np.ndarray]
    ) -> tuple[np.ndarray, dict]:
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t)
        cond = [np.asarray(ctok, dtype=np.float64) for ctok in cond]
        self._check_inputs(x, t, cond)
        p = self.params
        c = self.config

        h0 = x @ p["in.w"].T + p["in.b"]
        temb0 = sinusoidal_embedding(t, c.time_width)
        zt = temb0 @ p["time.1.w"].T + p["time.1.b"]
        ut = silu(zt)
        temb = ut @ p["time.2.w"].T + p["time.2.b"]
        h1 = h0 + temb

        q = h1 @ p["attn.q.w"].T + p["attn.q.b"]
        keys = [cond[j] @ p[f"attn.k{j}.w"].T + p[f"attn.k{j}.b"] for j in range(len(cond))]
        vals = [cond[j] @ p[f"attn.v{j}.w"].T + p[f"attn.v{j}.b"] for j in range(len(cond))]
        K = np.stack(keys, axis=1)  # (B, J, A)
        V = np.stack(vals, axis=1)
        scale = 1.0 / math.sqrt(c.attn_width)
        scores = np.einsum("ba,bja->bj", q, K) * scale
        scores_shift = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(scores_shift)
        attn = expd / expd.sum(axis=1, keepdims=True)
        ctx = np.einsum("bj,bja->ba", attn, V)
        h2 = h1 + ctx @ p["attn.out.w"].T + p["attn.out.b"]

        h = h2
        trunk_cache = []
        for i in range(c.depth):
            z = h @ p[f"trunk{i}.1.w"].T + p[f"trunk{i}.1.b"]
            u = silu(z)
            h_next = h + u @ p[f"trunk{i}.2.w"].T + p[f"trunk{i}.2.b"]
            trunk_cache.append((h, z, u))
            h = h_next
        eps_hat = h @ p["out.w"].T + p["out.b"]

        cache = {
            "x": x, "temb0": temb0, "zt": zt, "ut": ut, "h1": h1,
            "q": q, "K": K, "V": V, "attn": attn, "ctx": ctx,
            "cond": cond, "trunk": trunk_cache, "h_final": h, "scale": scale,
        }
        return eps_hat, cache

    def predict(self, x: np.ndarray, t: np.ndarray, cond: list[np.ndarray]) -> np.ndarray:
        eps_hat, _ = self.forward(x, t, cond)
        return eps_hat

    # -- backward ----------------------------------------------------------

    def backward(self, cache: dict, d_eps: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, given d loss / d eps_hat."""
        p = self.params
        c = self.config
        grads: dict[str, np.ndarray] = {}

        grads["out.w"] = d_eps.T @ cache["h_final"]
        grads["out.b"] = d_eps.sum(axis=0)
        dh = d_eps @ p["out.w"]

        for i in reversed(range(c.depth)):
            h_in, z, u = cache["trunk"][i]
            grads[f"trunk{i}.2.w"] = dh.T @ u
            grads[f"trunk{i}.2.b"] = dh.sum(axis=0)
            du = dh @ p[f"trunk{i}.2.w"]
            dz = du * silu_grad(z)
            grads[f"trunk{i}.1.w"] = dz.T @ h_in
            grads[f"trunk{i}.1.b"] = dz.sum(axis=0)
            dh = dh + dz @ p[f"trunk{i}.1.w"]

        # h2 = h1 + ctx @ Wao.T + bao
        grads["attn.out.w"] = dh.T @ cache["ctx"]
        grads["attn.out.b"] = dh.sum(axis=0)
        dctx = dh @ p["attn.out.w"]
        dh1 = dh.copy()

        attn, K, V, q = cache["attn"], cache["K"], cache["V"], cache["q"]
        dattn = np.einsum("ba,bja->bj", dctx, V)
        dV = np.einsum("bj,ba->bja", attn, dctx)
        # softmax backward
        dscores = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        dq = np.einsum("bj,bja->ba", dscores, K) * cache["scale"]
        dK = np.einsum("bj,ba->bja", dscores, q) * cache["scale"]

        grads["attn.q.w"] = dq.T @ cache["h1"]
        grads["attn.q.b"] = dq.sum(axis=0)
        dh1 += dq @ p["attn.q.w"]
        for j, ctok in enumerate(cache["cond"]):
            grads[f"attn.k{j}.w"] = dK[:, j, :].T @ ctok
            grads[f"attn.k{j}.b"] = dK[:, j, :].sum(axis=0)
            grads[f"attn.v{j}.w"] = dV[:, j, :].T @ ctok
            grads[f"attn.v{j}.b"] = dV[:, j, :].sum(axis=0)

        # h1 = h0 + temb
        dtemb = dh1
        grads["time.2.w"] = dtemb.T @ cache["ut"]
        grads["time.2.b"] = dtemb.sum(axis=0)
        dut = dtemb @ p["time.2.w"]
        dzt = dut * silu_grad(cache["zt"])
        grads["time.1.w"] = dzt.T @ cache["temb0"]
        grads["time.1.b"] = dzt.sum(axis=0)

        grads["in.w"] = dh1.T @ cache["x"]
        grads["in.b"] = dh1.sum(axis=0)
        return grads
