"""Ancestral sampling, with random or subject-object seeded initialization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..encoders import (
    ConditionVector,
    EmbeddingStore,
    build_condition,
    sample_region_embedding,
)
from ..hardness import KMeansModel, hardness_vector
from .network import stack_conditions
from .schedule import NoiseSchedule, make_so_seed

RANDOM_SEED_MODE = "random"
SO_SEED_MODE = "so_seed"


def _reverse_steps(
    net,
    schedule: NoiseSchedule,
    x: np.ndarray,
    cond: list[np.ndarray],
    rngs: Sequence[np.random.Generator],
) -> np.ndarray:
    """Shared reverse chain: x holds x_T rows, one rng per row."""
    width = x.shape[1]
    for t in range(schedule.num_steps, 0, -1):
        beta = schedule.beta(t)
        alpha = schedule.alpha(t)
        abar = schedule.alpha_bar(t)
        t_vec = np.full(x.shape[0], t)
        eps_hat = net.predict(x, t_vec, cond)
        x = (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            z = np.stack([rng.standard_normal(width) for rng in rngs])
            x = x + np.sqrt(beta) * z
    return x


def sample(
    net,
    schedule: NoiseSchedule,
    cond: ConditionVector,
    seed_mode: str = RANDOM_SEED_MODE,
    rng: np.random.Generator | int | None = None,
    so_vector: np.ndarray | None = None,
) -> np.ndarray:
    """Draw one feature vector from the reverse process.

    ``random`` mode starts from a standard normal; ``so_seed`` mode noises
    ``so_vector`` through the forward process at the final step and starts
    from the result.
    """
    if hasattr(net, "has_finite_params") and not net.has_finite_params():
        raise ValueError("denoiser has non-finite parameters; refusing to sample")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    width = net.config.input_width if hasattr(net, "config") else None
    if seed_mode == RANDOM_SEED_MODE:
        if width is None:
            width = so_vector.shape[0] if so_vector is not None else None
        if width is None:
            raise ValueError("cannot infer sample width for random mode")
        x_init = rng.standard_normal(width)
    elif seed_mode == SO_SEED_MODE:
        if so_vector is None:
            raise ValueError("so_seed mode requires a subject-object seed vector")
        v = np.asarray(so_vector, dtype=np.float64).reshape(-1)
        abar_final = schedule.alpha_bar(schedule.num_steps)
        eps = rng.standard_normal(v.shape[0])
        x_init = np.sqrt(abar_final) * v + np.sqrt(1.0 - abar_final) * eps
    else:
        raise ValueError(f"unknown seed mode {seed_mode!r}")
    batch_cond = stack_conditions([cond])
    out = _reverse_steps(net, schedule, x_init[None, :], batch_cond, [rng])
    return out[0]


@dataclass
class GenerationError:
    key: str
    stage: str
    message: str


@dataclass
class GenerationResult:
    store: EmbeddingStore
    errors: list[GenerationError]


def generate_for_augmented(
    net,
    schedule: NoiseSchedule,
    augmented: Sequence,
    text_store: EmbeddingStore,
    hardness_model: KMeansModel | None,
    box_store: EmbeddingStore | None,
    seed_mode: str,
    rng_seed: int,
    batch_size: int = 256,
) -> GenerationResult:
    """Sample one visual embedding per augmented triplet.

    Each item gets its own generator spawned from ``rng_seed``, so results do
    not depend on batch size and items with missing inputs are simply
    reported and skipped.  Output rows are keyed by the augmented-triplet key.
    """
    if seed_mode not in (RANDOM_SEED_MODE, SO_SEED_MODE):
        raise ValueError(f"unknown seed mode {seed_mode!r}")
    if seed_mode == SO_SEED_MODE and box_store is None:
        raise ValueError("so_seed mode requires a box store")
    if hasattr(net, "has_finite_params") and not net.has_finite_params():
        raise ValueError("denoiser has non-finite parameters; refusing to sample")

    width = net.config.input_width
    children = np.random.SeedSequence(rng_seed).spawn(len(augmented))
    store = EmbeddingStore(width=width, kind="visual")
    errors: list[GenerationError] = []

    pending: list[tuple[str, ConditionVector, np.ndarray, np.random.Generator]] = []

    def flush() -> None:
        if not pending:
            return
        keys = [item[0] for item in pending]
        cond = stack_conditions([item[1] for item in pending])
        inits = np.stack([item[2] for item in pending])
        rngs = [item[3] for item in pending]
        out = _reverse_steps(net, schedule, inits, cond, rngs)
        for key, row in zip(keys, out):
            store.add(key, row)
        pending.clear()

    abar_final = schedule.alpha_bar(schedule.num_steps)
    for aug, child_seed in zip(augmented, children):
        key = aug.key
        rng = np.random.default_rng(child_seed)
        if key not in text_store:
            errors.append(GenerationError(key, "text", f"no text embedding under key {key!r}"))
            continue
        text = text_store.get(key).astype(np.float64)
        if hardness_model is not None:
            cond = build_condition(text, hardness_vector(text, hardness_model))
        else:
            cond = build_condition(text)
        t = aug.triplet
        if seed_mode == SO_SEED_MODE:
            try:
                subj = sample_region_embedding(box_store, t.subject_id, "subject", rng)
                obj = sample_region_embedding(box_store, t.object_id, "object", rng)
            except KeyError as exc:
                errors.append(GenerationError(key, "so_seed", str(exc)))
                continue
            v = make_so_seed(subj, obj)
            eps = rng.standard_normal(width)
            x_init = np.sqrt(abar_final) * v + np.sqrt(1.0 - abar_final) * eps
        else:
            x_init = rng.standard_normal(width)
        pending.append((key, cond, x_init, rng))
        if len(pending) >= batch_size:
            flush()
    flush()
    return GenerationResult(store=store, errors=errors)
