import random

import pytest

from styleqa.styles import (
    Dimension,
    StandardsRegistry,
    StyleLabelVector,
    StyleProfile,
    StyleStandard,
    load_registry,
)
from styleqa.tree import build_tree


@pytest.fixture(scope="session")
def registry():
    return load_registry()


@pytest.fixture
def binary_registry():
    return StandardsRegistry(
        [
            StyleStandard("s1", Dimension.SEMANTIC, "first axis", ("a", "b")),
            StyleStandard("s2", Dimension.LEXICAL, "second axis", ("x", "y")),
        ]
    )


def make_vector(registry, **overrides):
    labels = {s.id: s.labels[0] for s in registry}
    labels.update(overrides)
    return StyleLabelVector.from_dict(labels, registry)


def make_profile(registry, author_id, support=1, **overrides):
    return StyleProfile(author_id, make_vector(registry, **overrides), support)


def random_registry(rng: random.Random, n_standards: int, max_labels: int = 4):
    dims = list(Dimension)
    return StandardsRegistry(
        [
            StyleStandard(
                f"s{i}",
                dims[i % len(dims)],
                f"axis {i}",
                tuple(f"l{i}_{j}" for j in range(rng.randint(2, max_labels))),
            )
            for i in range(n_standards)
        ]
    )


@pytest.fixture
def four_leaf_setup(binary_registry):
    """Four authors on two binary standards, 200 pairs each, k=100: every
    split is legal and each author lands in a singleton leaf."""
    combos = [("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")]
    profiles = [
        StyleProfile(
            f"author{i}",
            StyleLabelVector.from_dict({"s1": s1, "s2": s2}, binary_registry),
            200,
        )
        for i, (s1, s2) in enumerate(combos)
    ]
    sizes = {p.author_id: 200 for p in profiles}
    tree = build_tree(profiles, sizes, ["s1", "s2"], 100, binary_registry)
    return binary_registry, profiles, sizes, tree
