"""Is-a taxonomy over class lemmas with Leacock-Chodorow similarity.

The taxonomy is a rooted DAG of synsets loaded from a tab-separated file:

    synset_id <TAB> parent_id_csv <TAB> lemma_csv

One record per line, ``#`` starts a comment, the root leaves the parent
field empty.  Multiple parents are comma-separated (the hierarchy is a DAG,
not necessarily a tree).  Lemmas are surface class labels; a lemma may map
to several synsets and a synset may carry several lemmas.

Exporting real WordNet into this format is out of scope here, but is a
five-line affair with nltk::

    from nltk.corpus import wordnet as wn
    for s in wn.all_synsets("n"):
        parents = ",".join(p.name() for p in s.hypernyms() + s.instance_hypernyms())
        lemmas = ",".join(l.name() for l in s.lemmas())
        print(f"{s.name()}\t{parents}\t{lemmas}")

(Noun and verb hierarchies should be exported to separate files.)
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


class TaxonomyError(Exception):
    """Malformed taxonomy data (cycles, unreachable nodes, bad records)."""


class UnknownSynsetError(KeyError):
    """A queried synset id is not present in the taxonomy."""

    def __init__(self, synset_id: str):
        super().__init__(synset_id)
        self.synset_id = synset_id

    def __str__(self) -> str:
        return f"unknown synset id: {self.synset_id!r}"


class NoPathError(Exception):
    """Two synsets share no common ancestor (disconnected components)."""


@dataclass(frozen=True)
class TaxonomyRecord:
    synset_id: str
    parent_ids: tuple[str, ...]
    lemmas: tuple[str, ...]


def _parse_line(line: str, lineno: int) -> TaxonomyRecord | None:
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise TaxonomyError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
    synset_id, parent_csv, lemma_csv = parts
    if not synset_id:
        raise TaxonomyError(f"line {lineno}: empty synset id")
    parents = tuple(p for p in parent_csv.split(",") if p)
    lemmas = tuple(l for l in lemma_csv.split(",") if l)
    return TaxonomyRecord(synset_id, parents, lemmas)


class Taxonomy:
    """Immutable hypernym DAG; all queries are pure and thread-safe.

    ``depth`` is the maximum over nodes of (shortest root-to-node edge
    count + 1), i.e. the node count of the longest root-to-leaf path when
    each node is placed at its shallowest position.
    """

    def __init__(self, records: Iterable[TaxonomyRecord]):
        self._parents: dict[str, tuple[str, ...]] = {}
        self._lemma_index: dict[str, list[str]] = {}
        self._labels: list[str] = []
        for rec in records:
            if rec.synset_id in self._parents:
                raise TaxonomyError(f"duplicate synset id: {rec.synset_id!r}")
            self._parents[rec.synset_id] = rec.parent_ids
            for lemma in rec.lemmas:
                if lemma not in self._lemma_index:
                    self._lemma_index[lemma] = []
                    self._labels.append(lemma)
                self._lemma_index[lemma].append(rec.synset_id)
        if not self._parents:
            raise TaxonomyError("taxonomy is empty")
        for node, parents in self._parents.items():
            for p in parents:
                if p not in self._parents:
                    raise TaxonomyError(f"node {node!r} references unknown parent {p!r}")
        self._roots = tuple(n for n, ps in self._parents.items() if not ps)
        if not self._roots:
            raise TaxonomyError("no root node (every node has a parent; cycle?)")
        self._children: dict[str, list[str]] = {n: [] for n in self._parents}
        for node, parents in self._parents.items():
            for p in parents:
                self._children[p].append(node)
        self._root_distance = self._distances_from_roots()
        if len(self._root_distance) != len(self._parents):
            orphans = sorted(set(self._parents) - set(self._root_distance))
            raise TaxonomyError(f"nodes unreachable from any root: {orphans[:5]}")
        self._check_acyclic()
        self._depth = 1 + max(self._root_distance.values())
        # lazy per-node ancestor-distance maps; benign to race (worst case recompute)
        self._ancestor_cache: dict[str, dict[str, int]] = {}

    def _distances_from_roots(self) -> dict[str, int]:
        dist = {r: 0 for r in self._roots}
        queue = deque(self._roots)
        while queue:
            node = queue.popleft()
            for child in self._children[node]:
                if child not in dist:
                    dist[child] = dist[node] + 1
                    queue.append(child)
        return dist

    def _check_acyclic(self) -> None:
        # Kahn's algorithm over child->parent edges.
        indeg = {n: len(ps) for n, ps in self._parents.items()}
        queue = deque(n for n, d in indeg.items() if d == 0)
        seen = 0
        while queue:
            node = queue.popleft()
            seen += 1
            for child in self._children[node]:
                indeg[child] -= 1
                if indeg[child] == 0:
                    queue.append(child)
        if seen != len(self._parents):
            raise TaxonomyError("hypernym graph contains a cycle")

    # -- basic accessors ---------------------------------------------------

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self._parents)

    @property
    def roots(self) -> tuple[str, ...]:
        return self._roots

    @property
    def depth(self) -> int:
        return self._depth

    @property
    def labels(self) -> tuple[str, ...]:
        """Lemma labels in first-seen file order (position = default label id)."""
        return tuple(self._labels)

    def synsets_for(self, label: str) -> tuple[str, ...]:
        return tuple(self._lemma_index.get(label, ()))

    def unresolved_labels(self, vocab: Sequence[str]) -> list[str]:
        """Vocabulary labels that resolve to zero synsets (recorded, not dropped)."""
        return [lab for lab in vocab if not self._lemma_index.get(lab)]

    def parents_of(self, synset_id: str) -> tuple[str, ...]:
        try:
            return self._parents[synset_id]
        except KeyError:
            raise UnknownSynsetError(synset_id) from None

    # -- similarity --------------------------------------------------------

    def _ancestor_distances(self, synset_id: str) -> dict[str, int]:
        """Shortest edge count from ``synset_id`` to each of its ancestors (incl. itself)."""
        cached = self._ancestor_cache.get(synset_id)
        if cached is not None:
            return cached
        dist = {synset_id: 0}
        queue = deque([synset_id])
        while queue:
            node = queue.popleft()
            for p in self._parents[node]:
                if p not in dist:
                    dist[p] = dist[node] + 1
                    queue.append(p)
        self._ancestor_cache[synset_id] = dist
        return dist

    def shortest_path_edges(self, a: str, b: str) -> int:
        """Minimum hypernym-path length between two synsets, in edges.

        The path runs upward from both synsets to a common ancestor; the
        result is minimized over all common ancestors.
        """
        if a not in self._parents:
            raise UnknownSynsetError(a)
        if b not in self._parents:
            raise UnknownSynsetError(b)
        if a == b:
            return 0
        da = self._ancestor_distances(a)
        db = self._ancestor_distances(b)
        best = None
        for node, d in db.items():
            if node in da:
                total = da[node] + d
                if best is None or total < best:
                    best = total
        if best is None:
            raise NoPathError(f"no common ancestor for {a!r} and {b!r}")
        return best

    def lch_similarity(self, a: str, b: str) -> float:
        """-ln((path_edges + 1) / (2 * depth)); symmetric, maximal at a == b."""
        p = self.shortest_path_edges(a, b)
        return -math.log((p + 1) / (2.0 * self._depth))

    def label_similarity(self, label_a: str, label_b: str) -> float | None:
        """Max LCH over all synset pairs of two labels; None if either is unresolvable
        or no synset pair is connected."""
        syns_a = self._lemma_index.get(label_a, ())
        syns_b = self._lemma_index.get(label_b, ())
        best = None
        for sa in syns_a:
            for sb in syns_b:
                try:
                    score = self.lch_similarity(sa, sb)
                except NoPathError:
                    continue
                if best is None or score > best:
                    best = score
        return best

    def similar_classes(
        self,
        label: str,
        threshold: float,
        vocab: Sequence[str] | None = None,
    ) -> list[tuple[str, float]]:
        """All vocabulary labels within LCH ``threshold`` of ``label``.

        Scores take the max over synset pairs of the two labels.  The query
        label itself is excluded.  Results are sorted by descending score,
        ties broken by ascending label id (= position in ``vocab``, which
        defaults to the taxonomy's own lemma order).
        """
        if threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {threshold}")
        if vocab is None:
            vocab = self._labels
        if not self._lemma_index.get(label):
            logger.warning("label %r resolves to no synset; no similar classes", label)
            return []
        scored: list[tuple[float, int, str]] = []
        for idx, cand in enumerate(vocab):
            if cand == label:
                continue
            score = self.label_similarity(label, cand)
            if score is not None and score >= threshold:
                scored.append((-score, idx, cand))
        scored.sort()
        return [(cand, -neg) for neg, _idx, cand in scored]

    # -- io ------------------------------------------------------------------

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                rec = _parse_line(line, lineno)
                if rec is not None:
                    records.append(rec)
        return cls(records)

    @classmethod
    def from_records(
        cls, records: Iterable[tuple[str, Sequence[str], Sequence[str]]]
    ) -> "Taxonomy":
        return cls(TaxonomyRecord(s, tuple(p), tuple(l)) for s, p, l in records)

    def to_file(self, path: str | Path) -> None:
        synset_lemmas: dict[str, list[str]] = {n: [] for n in self._parents}
        for lemma in self._labels:
            for syn in self._lemma_index[lemma]:
                synset_lemmas[syn].append(lemma)
        with open(path, "w", encoding="utf-8") as fh:
            for node in self._parents:
                parents = ",".join(self._parents[node])
                lemmas = ",".join(synset_lemmas[node])
                fh.write(f"{node}\t{parents}\t{lemmas}\n")
