"""Reference relationship classifier: shared trunk, three heads, long-tail eval.

This is the common stand-in that DiffAugment fine-tuning is measured
against.  It consumes the relation-region embedding only and predicts the
subject, relation, and object classes with one linear head each.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .corpus import FEW, MANY, MEDIUM, SplitAssignment
from .diffusion.checkpoint import CheckpointError, _Reader, read_tensor_block, write_tensor_block
from .optim import Adam, silu, silu_grad

VRR_MAGIC = b"VRRM"
VRR_VERSION = 1

HEADS = ("subject", "relation", "object")


class VRRClassifier:
    """One hidden trunk layer over the region embedding, three linear heads."""

    def __init__(self, input_width: int, num_obj_classes: int, num_rel_classes: int,
                 hidden: int = 64, rng_seed: int = 0):
        self.input_width = input_width
        self.num_obj_classes = num_obj_classes
        self.num_rel_classes = num_rel_classes
        self.hidden = hidden
        rng = np.random.default_rng(rng_seed)

        def dense(name, out_dim, in_dim):
            self.params[f"{name}.w"] = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
            self.params[f"{name}.b"] = np.zeros(out_dim)

        self.params: dict[str, np.ndarray] = {}
        dense("trunk", hidden, input_width)
        dense("head.subject", num_obj_classes, hidden)
        dense("head.relation", num_rel_classes, hidden)
        dense("head.object", num_obj_classes, hidden)

    def copy(self) -> "VRRClassifier":
        clone = copy.copy(self)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def forward(self, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict]:
        x = np.asarray(x, dtype=np.float64)
        z = x @ self.params["trunk.w"].T + self.params["trunk.b"]
        h = silu(z)
        logits = {
            head: h @ self.params[f"head.{head}.w"].T + self.params[f"head.{head}.b"]
            for head in HEADS
        }
        return logits, {"x": x, "z": z, "h": h}

    def predict(self, x: np.ndarray) -> np.ndarray:
        """(n, 3) argmax class ids per head; argmax ties go to the lowest id."""
        logits, _ = self.forward(np.atleast_2d(x))
        return np.stack([np.argmax(logits[head], axis=1) for head in HEADS], axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _weighted_ce(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None):
    """Weighted cross-entropy (sum w_i nll_i / sum w_i) and its logit gradient."""
    n = logits.shape[0]
    probs = _softmax(logits)
    nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300))
    if weights is None:
        w = np.ones(n)
    else:
        w = weights[labels]
    denom = w.sum()
    loss = float((w * nll).sum() / denom)
    dlogits = probs * (w / denom)[:, None]
    dlogits[np.arange(n), labels] -= w / denom
    return loss, dlogits


def wce_weights(freqs: np.ndarray) -> np.ndarray:
    """Inverse-frequency class weights normalized to sum to the class count.

    Classes never observed get the maximum weight among observed classes.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.all(freqs == 0):
        raise ValueError("all class frequencies are zero")
    if np.any(freqs < 0):
        raise ValueError("negative class frequency")
    inv = np.zeros_like(freqs)
    observed = freqs > 0
    inv[observed] = 1.0 / freqs[observed]
    inv[~observed] = inv[observed].max()
    return inv * (freqs.size / inv.sum())


@dataclass
class VRRTrainConfig:
    steps: int
    batch: int
    lr: float
    seed: int
    hidden: int = 64
    clip_norm: float = 1.0


def _loss_and_grads(model: VRRClassifier, x, labels, head_weights):
    logits, cache = model.forward(x)
    total = 0.0
    dh = np.zeros_like(cache["h"])
    grads: dict[str, np.ndarray] = {}
    for col, head in enumerate(HEADS):
        loss, dlogits = _weighted_ce(logits[head], labels[:, col], head_weights[head])
        total += loss
        grads[f"head.{head}.w"] = dlogits.T @ cache["h"]
        grads[f"head.{head}.b"] = dlogits.sum(axis=0)
        dh += dlogits @ model.params[f"head.{head}.w"]
    dz = dh * silu_grad(cache["z"])
    grads["trunk.w"] = dz.T @ cache["x"]
    grads["trunk.b"] = dz.sum(axis=0)
    return total, grads


def _head_weights(loss_kind: str, obj_freqs, rel_freqs) -> dict[str, np.ndarray | None]:
    if loss_kind == "ce":
        return {head: None for head in HEADS}
    if loss_kind == "wce":
        obj_w = wce_weights(obj_freqs)
        return {"subject": obj_w, "relation": wce_weights(rel_freqs), "object": obj_w}
    raise ValueError(f"loss_kind must be 'ce' or 'wce', got {loss_kind!r}")


def train_baseline(
    x: np.ndarray,
    labels: np.ndarray,
    num_obj_classes: int,
    num_rel_classes: int,
    loss_kind: str,
    config: VRRTrainConfig,
    obj_freqs: np.ndarray | None = None,
    rel_freqs: np.ndarray | None = None,
) -> VRRClassifier:
    """Train from scratch with CE or WCE (summed over the three heads)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set must be a non-empty (n, width) matrix")
    if labels.shape != (x.shape[0], 3):
        raise ValueError("labels must be (n, 3): subject, relation, object ids")
    if labels[:, 0].max() >= num_obj_classes or labels[:, 2].max() >= num_obj_classes:
        raise ValueError("subject/object label outside vocabulary")
    if labels[:, 1].max() >= num_rel_classes:
        raise ValueError("relation label outside vocabulary")
    if loss_kind == "wce" and (obj_freqs is None or rel_freqs is None):
        raise ValueError("wce requires class frequency tables")

    head_weights = _head_weights(loss_kind, obj_freqs, rel_freqs)
    model = VRRClassifier(x.shape[1], num_obj_classes, num_rel_classes,
                          hidden=config.hidden, rng_seed=config.seed)
    optimizer = Adam(lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    for _ in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch, n))
        _, grads = _loss_and_grads(model, x[idx], labels[idx], head_weights)
        optimizer.step(model.params, grads)
    return model


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batch: int = 256
    lr: float = 1e-4
    seed: int = 0
    loss_kind: str = "ce"
    clip_norm: float = 1.0


def finetune(
    model: VRRClassifier,
    x: np.ndarray,
    labels: np.ndarray,
    config: FinetuneConfig,
    curriculum: tuple[np.ndarray, np.ndarray] | None = None,
    obj_freqs: np.ndarray | None = None,
    rel_freqs: np.ndarray | None = None,
) -> VRRClassifier:
    """Continue training on generated samples only; the input model is not mutated.

    With ``curriculum`` = (easy, hard) index arrays, every epoch presents all
    easy batches before any hard batch; within each group the order is
    reshuffled per epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("empty fine-tuning set")
    if labels.shape != (x.shape[0], 3):
        raise ValueError("labels must be (n, 3)")
    if labels[:, 0].max() >= model.num_obj_classes or labels[:, 2].max() >= model.num_obj_classes:
        raise ValueError("subject/object label outside model vocabulary")
    if labels[:, 1].max() >= model.num_rel_classes:
        raise ValueError("relation label outside model vocabulary")

    head_weights = _head_weights(config.loss_kind, obj_freqs, rel_freqs)
    tuned = model.copy()
    optimizer = Adam(lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed)
    groups: list[np.ndarray]
    if curriculum is not None and len(curriculum[0]) and len(curriculum[1]):
        groups = [np.asarray(curriculum[0]), np.asarray(curriculum[1])]
    else:
        groups = [np.arange(x.shape[0])]
    for _ in range(config.epochs):
        for group in groups:
            order = rng.permutation(group)
            for start in range(0, order.size, config.batch):
                idx = order[start : start + config.batch]
                _, grads = _loss_and_grads(tuned, x[idx], labels[idx], head_weights)
                optimizer.step(tuned.params, grads)
    return tuned


# -- evaluation ---------------------------------------------------------------


def round_half_up(value: float, places: int = 2) -> Decimal:
    if np.isnan(value):
        return Decimal("NaN")
    quantum = Decimal(1).scaleb(-places)
    return Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP)


def display_combined(so_all: float, r_all: float) -> Decimal:
    """Half-up mean of the two displayed (2 dp) all-scores."""
    if np.isnan(so_all) or np.isnan(r_all):
        return Decimal("NaN")
    total = round_half_up(so_all) + round_half_up(r_all)
    return (total / 2).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


@dataclass
class SplitScores:
    many: float
    medium: float
    few: float
    all: float


@dataclass
class EvalReport:
    """Average per-class accuracies (percent) by frequency split.

    ``all`` averages over every class with test coverage; ``combined`` is the
    mean of the subject/object and relation all-scores.  Classes without test
    samples are excluded from every average.
    """

    so: SplitScores
    relation: SplitScores
    combined: float
    covered_so_classes: int
    covered_rel_classes: int
    meta: dict = field(default_factory=dict)

    def to_kv_lines(self) -> list[str]:
        lines = []
        for prefix, scores in (("so", self.so), ("relation", self.relation)):
            for split in ("many", "medium", "few", "all"):
                lines.append(f"{prefix}.{split}={round_half_up(getattr(scores, split))}")
        lines.append(f"combined.all={display_combined(self.so.all, self.relation.all)}")
        lines.append(f"covered.so={self.covered_so_classes}")
        lines.append(f"covered.relation={self.covered_rel_classes}")
        for key in sorted(self.meta):
            lines.append(f"meta.{key}={self.meta[key]}")
        return lines

    def to_text(self) -> str:
        header = f"{'':14s}{'many':>8s}{'medium':>8s}{'few':>8s}{'all':>8s}"
        rows = [header]
        for name, scores in (("subject/object", self.so), ("relation", self.relation)):
            rows.append(
                f"{name:14s}"
                + "".join(f"{round_half_up(getattr(scores, split)):>8}" for split in
                          ("many", "medium", "few", "all"))
            )
        rows.append(f"{'combined':14s}{'':24s}{display_combined(self.so.all, self.relation.all):>8}")
        return "\n".join(rows) + "\n"


def parse_kv_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key] = value
    return out


def _per_class_accuracy(correct: np.ndarray, total: np.ndarray, ids: np.ndarray) -> float:
    covered = ids[total[ids] > 0]
    if covered.size == 0:
        return float("nan")
    acc = correct[covered] / total[covered]
    return float(acc.mean() * 100.0)


def evaluate(
    model: VRRClassifier,
    x: np.ndarray,
    labels: np.ndarray,
    obj_splits: SplitAssignment,
    rel_splits: SplitAssignment,
    meta: dict | None = None,
) -> EvalReport:
    """Average per-class accuracy; subject and object slots pool into one S/O table."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("empty test set")
    if obj_splits.tags.size != model.num_obj_classes:
        raise ValueError(
            f"object splits cover {obj_splits.tags.size} classes, model has {model.num_obj_classes}"
        )
    if rel_splits.tags.size != model.num_rel_classes:
        raise ValueError(
            f"relation splits cover {rel_splits.tags.size} classes, model has {model.num_rel_classes}"
        )
    preds = model.predict(x)

    obj_total = np.zeros(model.num_obj_classes, dtype=np.int64)
    obj_correct = np.zeros(model.num_obj_classes, dtype=np.int64)
    rel_total = np.zeros(model.num_rel_classes, dtype=np.int64)
    rel_correct = np.zeros(model.num_rel_classes, dtype=np.int64)
    for col, (total, correct) in ((0, (obj_total, obj_correct)),
                                  (1, (rel_total, rel_correct)),
                                  (2, (obj_total, obj_correct))):
        np.add.at(total, labels[:, col], 1)
        hit = preds[:, col] == labels[:, col]
        np.add.at(correct, labels[:, col][hit], 1)

    def split_scores(correct, total, splits):
        return SplitScores(
            many=_per_class_accuracy(correct, total, splits.ids(MANY)),
            medium=_per_class_accuracy(correct, total, splits.ids(MEDIUM)),
            few=_per_class_accuracy(correct, total, splits.ids(FEW)),
            all=_per_class_accuracy(correct, total, np.arange(total.size)),
        )

    so = split_scores(obj_correct, obj_total, obj_splits)
    rel = split_scores(rel_correct, rel_total, rel_splits)
    return EvalReport(
        so=so,
        relation=rel,
        combined=(so.all + rel.all) / 2.0,
        covered_so_classes=int((obj_total > 0).sum()),
        covered_rel_classes=int((rel_total > 0).sum()),
        meta=dict(meta or {}),
    )


# -- checkpointing --------------------------------------------------------------


def save_classifier(model: VRRClassifier, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(VRR_MAGIC)
        fh.write(struct.pack("<H", VRR_VERSION))
        fh.write(struct.pack("<IIII", model.input_width, model.num_obj_classes,
                             model.num_rel_classes, model.hidden))
        write_tensor_block(fh, model.params)


def load_classifier(path: str | Path) -> VRRClassifier:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != VRR_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = reader.unpack("<H")
    if version != VRR_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    input_width, n_obj, n_rel, hidden = reader.unpack("<IIII")
    model = VRRClassifier(input_width, n_obj, n_rel, hidden=hidden, rng_seed=0)
    tensors = read_tensor_block(reader)
    if set(tensors) != set(model.params):
        raise CheckpointError(f"{path}: parameter names do not match header dims")
    for name, arr in tensors.items():
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"{path}: tensor {name} shape {arr.shape} unexpected")
        model.params[name] = arr
    return model
