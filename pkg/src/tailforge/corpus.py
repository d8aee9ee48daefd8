"""Triplet datasets, frequency splits, and stage-1 triplet augmentation.

Also provides the synthetic long-tail benchmark: a generated world of class
prototypes whose triplet frequencies follow a power law, standing in for a
full-scale annotated dataset during desk-scale runs and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import EmbeddingStore, synthetic_text_encode
from .taxonomy import Taxonomy, TaxonomyRecord

MANY, MEDIUM, FEW = "many", "medium", "few"

SUBJECT, OBJECT = "subject", "object"


@dataclass(frozen=True)
class Triplet:
    """One <subject, relation, object> instance.

    ``region_key`` points at the relation-region row of a visual embedding
    store; ``image_id`` is provenance only.
    """

    subject_id: int
    relation_id: int
    object_id: int
    image_id: str | None = None
    region_key: str | None = None


class TripletDataset:
    """Immutable list of triplets plus the two label vocabularies."""

    def __init__(
        self,
        triplets: Sequence[Triplet],
        object_vocab: Sequence[str],
        relation_vocab: Sequence[str],
    ):
        self.triplets = tuple(triplets)
        self.object_vocab = tuple(object_vocab)
        self.relation_vocab = tuple(relation_vocab)
        n_obj, n_rel = len(self.object_vocab), len(self.relation_vocab)
        for i, t in enumerate(self.triplets):
            if not (0 <= t.subject_id < n_obj and 0 <= t.object_id < n_obj):
                raise ValueError(f"triplet {i}: subject/object id out of range")
            if not 0 <= t.relation_id < n_rel:
                raise ValueError(f"triplet {i}: relation id out of range")

    def __len__(self) -> int:
        return len(self.triplets)

    def frequencies(self) -> "ClassFrequencyTable":
        obj = np.zeros(len(self.object_vocab), dtype=np.int64)
        rel = np.zeros(len(self.relation_vocab), dtype=np.int64)
        for t in self.triplets:
            obj[t.subject_id] += 1
            obj[t.object_id] += 1
            rel[t.relation_id] += 1
        return ClassFrequencyTable(object_counts=obj, relation_counts=rel)

    # -- io ---------------------------------------------------------------

    def to_files(self, triplet_path: str | Path, object_vocab_path: str | Path,
                 relation_vocab_path: str | Path) -> None:
        with open(triplet_path, "w", encoding="utf-8") as fh:
            for t in self.triplets:
                fh.write("\t".join([
                    self.object_vocab[t.subject_id],
                    self.relation_vocab[t.relation_id],
                    self.object_vocab[t.object_id],
                    t.image_id or "",
                    t.region_key or "",
                ]) + "\n")
        write_vocab(object_vocab_path, self.object_vocab)
        write_vocab(relation_vocab_path, self.relation_vocab)

    @classmethod
    def from_files(cls, triplet_path: str | Path, object_vocab_path: str | Path,
                   relation_vocab_path: str | Path) -> "TripletDataset":
        object_vocab = read_vocab(object_vocab_path)
        relation_vocab = read_vocab(relation_vocab_path)
        obj_ids = {lab: i for i, lab in enumerate(object_vocab)}
        rel_ids = {lab: i for i, lab in enumerate(relation_vocab)}
        triplets = []
        with open(triplet_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 5:
                    raise ValueError(f"{triplet_path}: line {lineno}: expected 5 fields")
                s, r, o, image_id, region_key = parts
                try:
                    triplets.append(Triplet(
                        subject_id=obj_ids[s], relation_id=rel_ids[r], object_id=obj_ids[o],
                        image_id=image_id or None, region_key=region_key or None,
                    ))
                except KeyError as exc:
                    raise ValueError(f"{triplet_path}: line {lineno}: unknown label {exc}") from None
        return cls(triplets, object_vocab, relation_vocab)


def write_vocab(path: str | Path, vocab: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in vocab:
            fh.write(label + "\n")


def read_vocab(path: str | Path) -> tuple[str, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        return tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))


@dataclass(frozen=True)
class ClassFrequencyTable:
    """Per-class occurrence counts; object counts pool subject and object slots."""

    object_counts: np.ndarray
    relation_counts: np.ndarray


class SplitAssignment:
    """Frequency-ranked many/medium/few partition of one vocabulary.

    Classes are sorted by descending frequency (ties by ascending id);
    many = first ceil(5% N), many+medium = first ceil(20% N), few = rest.
    """

    def __init__(self, counts: np.ndarray | Sequence[int]):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size == 0:
            raise ValueError("empty frequency table")
        if counts.size < 3:
            raise ValueError(f"need >= 3 classes to split, got {counts.size}")
        if np.any(counts < 0):
            raise ValueError("negative class frequency")
        n = counts.size
        order = np.lexsort((np.arange(n), -counts))
        n_many = math.ceil(0.05 * n)
        n_head = math.ceil(0.20 * n)
        self.tags = np.empty(n, dtype=object)
        self.tags[order[:n_many]] = MANY
        self.tags[order[n_many:n_head]] = MEDIUM
        self.tags[order[n_head:]] = FEW
        self.counts = counts

    def tag(self, class_id: int) -> str:
        return self.tags[class_id]

    def ids(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.ids(MANY)), len(self.ids(MEDIUM)), len(self.ids(FEW)))


def compute_splits(counts: np.ndarray | Sequence[int]) -> SplitAssignment:
    return SplitAssignment(counts)


# -- stage-1 augmentation ---------------------------------------------------


@dataclass(frozen=True)
class AugmentedTriplet:
    """A source triplet with exactly one slot replaced by a similar class."""

    base_index: int
    base: Triplet
    replaced_slot: str  # SUBJECT or OBJECT
    replacement_id: int
    score: float
    origin: str  # FEW or MEDIUM: split of the tail class that triggered this variant
    triplet: Triplet = field(compare=False, default=None)  # type: ignore[assignment]

    @property
    def key(self) -> str:
        slot = "s" if self.replaced_slot == SUBJECT else "o"
        return f"aug-{self.base_index:06d}-{slot}{self.replacement_id:05d}"


@dataclass
class AugmentationResult:
    triplets: list[AugmentedTriplet]
    warnings: list[str]


def _replaced(base: Triplet, slot: str, new_id: int) -> Triplet:
    if slot == SUBJECT:
        return Triplet(new_id, base.relation_id, base.object_id)
    return Triplet(base.subject_id, base.relation_id, new_id)


def augment_triplets(
    dataset: TripletDataset,
    taxonomy: Taxonomy,
    threshold: float,
    budget_few: int,
    budget_medium: int,
    rng_seed: int,
) -> AugmentationResult:
    """Stage-1 augmentation: one-slot class replacement guided by LCH similarity.

    Eligibility rules, applied per source triplet in fixed order:
      1. relation in few/medium  -> replace subject AND replace object
      2. subject  in few/medium  -> replace object
      3. object   in few/medium  -> replace subject
    Each variant's origin is the split of the class that triggered its rule;
    duplicate (source, slot, replacement) variants keep the first rule's origin.
    The pool is then uniformly subsampled per origin down to the budgets.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    freqs = dataset.frequencies()
    obj_splits = compute_splits(freqs.object_counts)
    rel_splits = compute_splits(freqs.relation_counts)

    vocab = dataset.object_vocab
    similar_cache: dict[int, list[tuple[int, float]]] = {}

    def similar_ids(class_id: int) -> list[tuple[int, float]]:
        if class_id not in similar_cache:
            pairs = taxonomy.similar_classes(vocab[class_id], threshold, vocab=vocab)
            label_ids = {lab: i for i, lab in enumerate(vocab)}
            similar_cache[class_id] = [(label_ids[lab], score) for lab, score in pairs]
        return similar_cache[class_id]

    variants: list[AugmentedTriplet] = []
    seen: set[tuple[int, str, int]] = set()

    def emit(idx: int, base: Triplet, slot: str, origin: str) -> None:
        current = base.subject_id if slot == SUBJECT else base.object_id
        for repl_id, score in similar_ids(current):
            dedupe_key = (idx, slot, repl_id)
            if dedupe_key in seen:
                continue
            seen.add(dedupe_key)
            variants.append(AugmentedTriplet(
                base_index=idx, base=base, replaced_slot=slot,
                replacement_id=repl_id, score=score, origin=origin,
                triplet=_replaced(base, slot, repl_id),
            ))

    for idx, t in enumerate(dataset.triplets):
        rel_tag = rel_splits.tag(t.relation_id)
        if rel_tag in (FEW, MEDIUM):
            emit(idx, t, SUBJECT, rel_tag)
            emit(idx, t, OBJECT, rel_tag)
        subj_tag = obj_splits.tag(t.subject_id)
        if subj_tag in (FEW, MEDIUM):
            emit(idx, t, OBJECT, subj_tag)
        obj_tag = obj_splits.tag(t.object_id)
        if obj_tag in (FEW, MEDIUM):
            emit(idx, t, SUBJECT, obj_tag)

    rng = np.random.default_rng(rng_seed)
    warnings: list[str] = []
    selected: list[AugmentedTriplet] = []
    for origin, budget in ((FEW, budget_few), (MEDIUM, budget_medium)):
        pool = [v for v in variants if v.origin == origin]
        if budget >= len(pool):
            if budget > len(pool):
                warnings.append(
                    f"budget {budget} exceeds {len(pool)} available {origin}-origin variants; "
                    f"returning all of them"
                )
            selected.extend(pool)
        else:
            picked = rng.choice(len(pool), size=budget, replace=False)
            picked.sort()
            selected.extend(pool[i] for i in picked)
    return AugmentationResult(triplets=selected, warnings=warnings)


def write_augmented(path: str | Path, result: AugmentationResult, dataset: TripletDataset) -> None:
    obj, rel = dataset.object_vocab, dataset.relation_vocab
    with open(path, "w", encoding="utf-8") as fh:
        for w in result.warnings:
            fh.write(f"# warning: {w}\n")
        for a in result.triplets:
            t = a.triplet
            fh.write("\t".join([
                a.key, obj[t.subject_id], rel[t.relation_id], obj[t.object_id],
                a.replaced_slot, f"{a.score:.6f}", a.origin, str(a.base_index),
            ]) + "\n")


def read_augmented(path: str | Path, dataset: TripletDataset) -> AugmentationResult:
    obj_ids = {lab: i for i, lab in enumerate(dataset.object_vocab)}
    rel_ids = {lab: i for i, lab in enumerate(dataset.relation_vocab)}
    triplets: list[AugmentedTriplet] = []
    warnings: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# warning: "):
                warnings.append(line[len("# warning: "):].rstrip("\n"))
                continue
            if not line.strip() or line.startswith("#"):
                continue
            key, s, r, o, slot, score, origin, base_index = line.rstrip("\n").split("\t")
            idx = int(base_index)
            base = dataset.triplets[idx]
            new = Triplet(obj_ids[s], rel_ids[r], obj_ids[o])
            repl = new.subject_id if slot == SUBJECT else new.object_id
            triplets.append(AugmentedTriplet(
                base_index=idx, base=base, replaced_slot=slot,
                replacement_id=repl, score=float(score), origin=origin, triplet=new,
            ))
    return AugmentationResult(triplets=triplets, warnings=warnings)


# -- synthetic long-tail benchmark -------------------------------------------


@dataclass
class SyntheticWorld:
    """Ground-truth generator state for the synthetic benchmark.

    Each class owns a unit-norm visual prototype (width ``dim_visual``) and a
    unit-norm text prototype of width ``dim_text // 3``; a triplet's text
    embedding concatenates its three text prototypes.
    """

    object_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]
    obj_visual: np.ndarray  # (n_obj, dim_visual)
    rel_visual: np.ndarray  # (n_rel, dim_visual)
    obj_text: np.ndarray  # (n_obj, dim_text // 3)
    rel_text: np.ndarray  # (n_rel, dim_text // 3)
    zipf_exponent: float
    object_slot_counts: np.ndarray  # apportioned count per object class, per slot
    relation_counts: np.ndarray
    seed: int
    noise_sigma: float
    text_sigma: float

    @property
    def dim_visual(self) -> int:
        return self.obj_visual.shape[1]

    @property
    def dim_text(self) -> int:
        return 3 * self.obj_text.shape[1]

    def region_mean(self, t: Triplet) -> np.ndarray:
        v = self.obj_visual[t.subject_id] + self.rel_visual[t.relation_id] + self.obj_visual[t.object_id]
        return v / np.linalg.norm(v)

    def to_json_dict(self) -> dict:
        return {
            "object_labels": list(self.object_labels),
            "relation_labels": list(self.relation_labels),
            "obj_visual": self.obj_visual.tolist(),
            "rel_visual": self.rel_visual.tolist(),
            "obj_text": self.obj_text.tolist(),
            "rel_text": self.rel_text.tolist(),
            "zipf_exponent": self.zipf_exponent,
            "object_slot_counts": self.object_slot_counts.tolist(),
            "relation_counts": self.relation_counts.tolist(),
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "text_sigma": self.text_sigma,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SyntheticWorld":
        return cls(
            object_labels=tuple(d["object_labels"]),
            relation_labels=tuple(d["relation_labels"]),
            obj_visual=np.asarray(d["obj_visual"], dtype=np.float64),
            rel_visual=np.asarray(d["rel_visual"], dtype=np.float64),
            obj_text=np.asarray(d["obj_text"], dtype=np.float64),
            rel_text=np.asarray(d["rel_text"], dtype=np.float64),
            zipf_exponent=float(d["zipf_exponent"]),
            object_slot_counts=np.asarray(d["object_slot_counts"], dtype=np.int64),
            relation_counts=np.asarray(d["relation_counts"], dtype=np.int64),
            seed=int(d["seed"]),
            noise_sigma=float(d["noise_sigma"]),
            text_sigma=float(d["text_sigma"]),
        )


def zipf_counts(num_classes: int, exponent: float, total: int) -> np.ndarray:
    """Apportion ``total`` samples over classes with weights rank^(-exponent).

    Largest-remainder apportionment: exact floor shares first, then remaining
    samples to the largest fractional remainders (ties to lower rank).
    """
    if exponent < 0:
        raise ValueError("zipf exponent must be >= 0")
    ranks = np.arange(1, num_classes + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    shares = total * weights / weights.sum()
    counts = np.floor(shares).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        frac = shares - counts
        order = np.lexsort((ranks, -frac))
        counts[order[:remainder]] += 1
    return counts


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@dataclass
class SyntheticStores:
    regions: EmbeddingStore  # relation-region embedding per triplet, keyed by region_key
    boxes: EmbeddingStore  # per-class subject/object box embeddings, keyed "slot:class:i"
    text: EmbeddingStore  # triplet text embedding, keyed by region_key


def generate_synthetic_world(
    num_obj_classes: int,
    num_rel_classes: int,
    dim_visual: int,
    dim_text: int,
    zipf_exponent: float,
    total_triplets: int,
    rng_seed: int,
    noise_sigma: float = 0.1,
    text_sigma: float = 0.02,
    boxes_per_class: int = 5,
) -> tuple[SyntheticWorld, TripletDataset, SyntheticStores]:
    """Build a deterministic long-tail benchmark world.

    Class frequencies follow rank^(-zipf_exponent), apportioned exactly; each
    triplet's region embedding is the normalized sum of its three visual
    prototypes plus sigma-scaled Gaussian noise.
    """
    if num_obj_classes < 6 or num_rel_classes < 6:
        raise ValueError("need >= 6 object and relation classes")
    if dim_visual < 8 or dim_text < 8:
        raise ValueError("embedding dims must be >= 8")
    if dim_text % 3 != 0:
        raise ValueError("dim_text must be divisible by 3 (per-slot text prototypes)")
    if zipf_exponent < 0:
        raise ValueError("zipf exponent must be >= 0")

    rng = np.random.default_rng(rng_seed)
    object_labels = tuple(f"obj{c:03d}" for c in range(num_obj_classes))
    relation_labels = tuple(f"rel{c:03d}" for c in range(num_rel_classes))
    world = SyntheticWorld(
        object_labels=object_labels,
        relation_labels=relation_labels,
        obj_visual=_unit_rows(rng, num_obj_classes, dim_visual),
        rel_visual=_unit_rows(rng, num_rel_classes, dim_visual),
        obj_text=_unit_rows(rng, num_obj_classes, dim_text // 3),
        rel_text=_unit_rows(rng, num_rel_classes, dim_text // 3),
        zipf_exponent=zipf_exponent,
        object_slot_counts=zipf_counts(num_obj_classes, zipf_exponent, total_triplets),
        relation_counts=zipf_counts(num_rel_classes, zipf_exponent, total_triplets),
        seed=rng_seed,
        noise_sigma=noise_sigma,
        text_sigma=text_sigma,
    )

    subjects = np.repeat(np.arange(num_obj_classes), world.object_slot_counts)
    objects = subjects.copy()
    relations = np.repeat(np.arange(num_rel_classes), world.relation_counts)
    rng.shuffle(subjects)
    rng.shuffle(objects)
    rng.shuffle(relations)

    triplets = [
        Triplet(int(s), int(r), int(o), image_id=None, region_key=f"r{i:06d}")
        for i, (s, r, o) in enumerate(zip(subjects, relations, objects))
    ]
    dataset = TripletDataset(triplets, object_labels, relation_labels)

    regions = EmbeddingStore(width=dim_visual, kind="visual")
    for t in triplets:
        emb = world.region_mean(t) + noise_sigma * rng.standard_normal(dim_visual)
        regions.add(t.region_key, emb)

    boxes = EmbeddingStore(width=dim_visual, kind="visual")
    for slot in (SUBJECT, OBJECT):
        for c in range(num_obj_classes):
            for j in range(boxes_per_class):
                emb = world.obj_visual[c] + noise_sigma * rng.standard_normal(dim_visual)
                boxes.add(f"{slot}:{c}:{j}", emb)

    text = EmbeddingStore(width=dim_text, kind="text")
    for t in triplets:
        text.add(t.region_key, synthetic_text_encode(t, world))

    return world, dataset, SyntheticStores(regions=regions, boxes=boxes, text=text)


def make_eval_set(
    world: SyntheticWorld, num_samples: int, rng_seed: int
) -> tuple[TripletDataset, EmbeddingStore]:
    """Balanced held-out set: class slots assigned round-robin then shuffled,
    so every class is covered when num_samples >= vocabulary size."""
    rng = np.random.default_rng(rng_seed)
    n_obj = len(world.object_labels)
    n_rel = len(world.relation_labels)
    subjects = np.resize(np.arange(n_obj), num_samples)
    objects = np.resize(np.arange(n_obj), num_samples)
    relations = np.resize(np.arange(n_rel), num_samples)
    rng.shuffle(subjects)
    rng.shuffle(objects)
    rng.shuffle(relations)
    triplets = [
        Triplet(int(s), int(r), int(o), image_id=None, region_key=f"e{i:06d}")
        for i, (s, r, o) in enumerate(zip(subjects, relations, objects))
    ]
    dataset = TripletDataset(triplets, world.object_labels, world.relation_labels)
    regions = EmbeddingStore(width=world.dim_visual, kind="visual")
    for t in triplets:
        emb = world.region_mean(t) + world.noise_sigma * rng.standard_normal(world.dim_visual)
        regions.add(t.region_key, emb)
    return dataset, regions


def synthetic_taxonomy(
    object_labels: Sequence[str], group_size: int = 4, rng_seed: int = 0
) -> Taxonomy:
    """Tree over the synthetic object labels: root -> genus groups -> leaves.

    Siblings within a group are 2 hypernym edges apart; classes in different
    groups are 4 apart.  With depth 3 the sibling LCH score is -ln(3/6).
    Group membership is a seeded permutation: class ids encode frequency rank
    in the synthetic world, and real taxonomies do not group by frequency.
    """
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    order = np.random.default_rng(rng_seed).permutation(len(object_labels))
    records = [TaxonomyRecord("n_root", (), ())]
    n_groups = math.ceil(len(object_labels) / group_size)
    for g in range(n_groups):
        records.append(TaxonomyRecord(f"n_grp{g:03d}", ("n_root",), ()))
    for pos, idx in enumerate(order):
        g = pos // group_size
        records.append(
            TaxonomyRecord(f"n_{object_labels[idx]}", (f"n_grp{g:03d}",), (object_labels[idx],))
        )
    return Taxonomy(records)
