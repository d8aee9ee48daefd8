from pathlib import Path

import numpy as np
import pytest

from tailforge.taxonomy import Taxonomy

DATA_DIR = Path(__file__).parent / "data"

TOY_RECORDS = [
    ("food.n.01", [], ["food"]),
    ("dessert.n.01", ["food.n.01"], ["dessert"]),
    ("cake.n.01", ["dessert.n.01"], ["cake"]),
    ("cookie.n.01", ["dessert.n.01"], ["cookie"]),
    ("vegetable.n.01", ["food.n.01"], ["vegetable"]),
    ("carrot.n.01", ["vegetable.n.01"], ["carrot"]),
]


@pytest.fixture
def toy_taxonomy() -> Taxonomy:
    return Taxonomy.from_records(TOY_RECORDS)


@pytest.fixture
def toy_taxonomy_file() -> Path:
    return DATA_DIR / "toy_taxonomy.tsv"


def random_taxonomy(rng: np.random.Generator, max_nodes: int = 200,
                    extra_parent_prob: float = 0.15) -> Taxonomy:
    """Random rooted DAG with lemmas on every node; node 0 is the root."""
    n = int(rng.integers(5, max_nodes + 1))
    records = []
    for i in range(n):
        if i == 0:
            parents = []
        else:
            parents = [f"s{int(rng.integers(0, i)):04d}"]
            if i >= 2 and rng.random() < extra_parent_prob:
                extra = f"s{int(rng.integers(0, i)):04d}"
                if extra not in parents:
                    parents.append(extra)
        records.append((f"s{i:04d}", parents, [f"w{i:04d}"]))
    return Taxonomy.from_records(records)
