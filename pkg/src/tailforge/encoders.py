"""Embedding stores and encoder stand-ins.

Real CLIP / Faster-RCNN features enter the pipeline as precomputed files in
the binary store format below; the synthetic encoder pair generates
deterministic embeddings for tests and the synthetic benchmark.

Store file layout (little-endian):
    magic ``EMB1`` (4 bytes) | u32 count | u32 width | u8 kind | float32 rows
Kind byte: 0 = text, 1 = visual.  A sidecar ``<path>.idx`` lists the row keys,
newline-delimited, in row order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"EMB1"
_KIND_CODES = {"text": 0, "visual": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class StoreFormatError(Exception):
    """Base class for embedding-store file problems."""


class StoreMagicError(StoreFormatError):
    """File does not start with the EMB1 magic."""


class StoreTruncatedError(StoreFormatError):
    """File or key sidecar is shorter than the header promises."""


class StoreWidthError(StoreFormatError):
    """Store width differs from what the caller requires."""


class StoreKindError(StoreFormatError):
    """Store kind (text/visual) differs from what the caller requires."""


class EmbeddingStore:
    """Keyed float32 matrix; immutable by convention once written or loaded."""

    def __init__(self, width: int, kind: str):
        if width <= 0:
            raise ValueError("width must be positive")
        if kind not in _KIND_CODES:
            raise ValueError(f"kind must be one of {sorted(_KIND_CODES)}")
        self.width = int(width)
        self.kind = kind
        self._keys: list[str] = []
        self._index: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    def add(self, key: str, vector: np.ndarray | Iterable[float]) -> None:
        if key in self._index:
            raise ValueError(f"duplicate store key: {key!r}")
        row = np.asarray(vector, dtype=np.float32).reshape(-1)
        if row.shape[0] != self.width:
            raise StoreWidthError(f"row width {row.shape[0]} != store width {self.width}")
        if not np.all(np.isfinite(row)):
            raise ValueError(f"non-finite values in row for key {key!r}")
        self._index[key] = len(self._keys)
        self._keys.append(key)
        self._rows.append(row)
        self._matrix = None

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def keys(self) -> tuple[str, ...]:
        return tuple(self._keys)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self._rows:
                self._matrix = np.vstack(self._rows)
            else:
                self._matrix = np.zeros((0, self.width), dtype=np.float32)
        return self._matrix

    def row_index(self, key: str) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise KeyError(f"no embedding stored under key {key!r}") from None

    def get(self, key: str) -> np.ndarray:
        return self.matrix[self.row_index(key)].copy()

    # grouping for "slot:class_id:n" keyed region stores
    def slot_class_rows(self) -> dict[tuple[str, int], list[int]]:
        cached = getattr(self, "_slot_class_rows", None)
        if cached is None:
            cached = {}
            for i, key in enumerate(self._keys):
                parts = key.split(":")
                if len(parts) >= 2:
                    try:
                        cls = int(parts[1])
                    except ValueError:
                        continue
                    cached.setdefault((parts[0], cls), []).append(i)
            self._slot_class_rows = cached
        return cached


def store_write(store: EmbeddingStore, path: str | Path) -> None:
    path = Path(path)
    header = MAGIC + struct.pack("<IIB", len(store), store.width, _KIND_CODES[store.kind])
    data = np.ascontiguousarray(store.matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)
    with open(str(path) + ".idx", "w", encoding="utf-8") as fh:
        for key in store.keys():
            fh.write(key + "\n")


def store_read(
    path: str | Path,
    expect_width: int | None = None,
    expect_kind: str | None = None,
) -> EmbeddingStore:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise StoreMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 13:
        raise StoreTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    count, width, kind_code = struct.unpack("<IIB", raw[4:13])
    if kind_code not in _KIND_NAMES:
        raise StoreFormatError(f"{path}: unknown kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    expected_bytes = 13 + 4 * count * width
    if len(raw) < expected_bytes:
        raise StoreTruncatedError(
            f"{path}: expected {expected_bytes} bytes for {count}x{width} rows, got {len(raw)}"
        )
    if expect_width is not None and width != expect_width:
        raise StoreWidthError(f"{path}: store width {width}, caller requires {expect_width}")
    if expect_kind is not None and kind != expect_kind:
        raise StoreKindError(f"{path}: store kind {kind!r}, caller requires {expect_kind!r}")
    idx_path = Path(str(path) + ".idx")
    if not idx_path.exists():
        raise StoreTruncatedError(f"{idx_path}: key sidecar missing")
    keys = [line.rstrip("\n") for line in idx_path.read_text(encoding="utf-8").splitlines()]
    if len(keys) != count:
        raise StoreTruncatedError(f"{idx_path}: {len(keys)} keys for {count} rows")
    if width == 0:
        raise StoreFormatError(f"{path}: zero width")
    matrix = np.frombuffer(raw, dtype="<f4", count=count * width, offset=13)
    store = EmbeddingStore(width=width, kind=kind)
    rows = matrix.reshape(count, width)
    for key, row in zip(keys, rows):
        store.add(key, row)
    return store


# -- condition vectors --------------------------------------------------------


@dataclass(frozen=True)
class ConditionVector:
    """Ordered token list for cross-attention conditioning.

    Token 1 is the triplet text embedding; token 2, when present, is the
    hardness vector.  Concatenation happens at the token-sequence level, so
    numeric values are never touched.
    """

    tokens: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not 1 <= len(self.tokens) <= 2:
            raise ValueError("condition must hold 1 or 2 tokens")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.tokens)


def build_condition(
    text: np.ndarray,
    hardness: np.ndarray | None = None,
    expect_text_width: int | None = None,
    expect_hardness_width: int | None = None,
) -> ConditionVector:
    text = np.asarray(text, dtype=np.float64).reshape(-1)
    if expect_text_width is not None and text.shape[0] != expect_text_width:
        raise ValueError(f"text token width {text.shape[0]} != expected {expect_text_width}")
    if hardness is None:
        return ConditionVector(tokens=(text,))
    hardness = np.asarray(hardness, dtype=np.float64).reshape(-1)
    if expect_hardness_width is not None and hardness.shape[0] != expect_hardness_width:
        raise ValueError(
            f"hardness token width {hardness.shape[0]} != expected {expect_hardness_width}"
        )
    return ConditionVector(tokens=(text, hardness))


# -- synthetic encoders --------------------------------------------------------

_TEXT_STREAM = 0x7E57  # stream tag separating text-encoder rngs from other consumers


def synthetic_text_encode(triplet, world) -> np.ndarray:
    """Deterministic text-encoder stand-in.

    Concatenates the three class text prototypes, adds a small perturbation
    seeded by (world seed, class ids), and renormalizes to unit length.
    Identical triplets therefore always encode identically, wherever they
    appear in a dataset.
    """
    n_obj = world.obj_text.shape[0]
    n_rel = world.rel_text.shape[0]
    s, r, o = triplet.subject_id, triplet.relation_id, triplet.object_id
    if not (0 <= s < n_obj and 0 <= o < n_obj):
        raise ValueError(f"unknown object class id in triplet ({s}, {r}, {o})")
    if not 0 <= r < n_rel:
        raise ValueError(f"unknown relation class id in triplet ({s}, {r}, {o})")
    base = np.concatenate([world.obj_text[s], world.rel_text[r], world.obj_text[o]])
    rng = np.random.default_rng(np.random.SeedSequence([world.seed, _TEXT_STREAM, s, r, o]))
    vec = base + world.text_sigma * rng.standard_normal(base.shape[0])
    return vec / np.linalg.norm(vec)


def sample_region_embedding(
    store: EmbeddingStore, class_id: int, slot: str, rng: np.random.Generator
) -> np.ndarray:
    """Uniformly pick one stored box embedding of ``class_id`` for ``slot``.

    Rows are keyed ``slot:class_id:n``; drawing is deterministic given the
    generator state.
    """
    if slot not in ("subject", "object"):
        raise ValueError(f"slot must be 'subject' or 'object', got {slot!r}")
    rows = store.slot_class_rows().get((slot, class_id))
    if not rows:
        raise KeyError(f"no stored {slot} region for class {class_id}")
    pick = rows[int(rng.integers(len(rows)))]
    return store.matrix[pick].astype(np.float64)
