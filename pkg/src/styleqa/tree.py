"""Hierarchical style tree: divisive clustering over categorical profiles.

Authors are partitioned by splitting on one style standard at a time, in a
configured order. A leaf splits on standard ``s`` only when every resulting
child would keep a corpus larger than the threshold ``k``; leaves that stay
intact remain eligible for later standards. Leaves are the style clusters
that share trained adapter parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import CorruptDocument, RegistryMismatch, SchemaVersionMismatch, UnknownCluster
from .styles import StandardsRegistry, StyleLabelVector, StyleProfile

logger = logging.getLogger(__name__)

TREE_FORMAT = "style-tree"
TREE_VERSION = 1


@dataclass
class StyleNode:
    node_id: int
    members: tuple[str, ...]  # sorted author ids
    split_standard: str | None = None
    edge_label: str | None = None  # parent's split value leading here; None at root
    children: list["StyleNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ClusterId:
    """A leaf identity: node id plus the (standard, label) path from the root."""

    node_id: int
    path: tuple[tuple[str, str], ...]

    @property
    def key(self) -> str:
        constraints = "/".join(f"{s}={v}" for s, v in self.path) or "root"
        return f"n{self.node_id}:{constraints}"

    def constraints(self) -> dict[str, str]:
        return dict(self.path)


class StyleTree:
    def __init__(
        self,
        root: StyleNode,
        registry_hash: str,
        standard_order: Sequence[str],
        k: int,
        count_unit: str = "pairs",
    ):
        self.root = root
        self.registry_hash = registry_hash
        self.standard_order = tuple(standard_order)
        self.k = k
        self.count_unit = count_unit
        self._parents: dict[int, StyleNode] | None = None
        self._paths: dict[int, tuple[tuple[str, str], ...]] | None = None

    # --- structure queries ---

    def nodes(self) -> Iterable[StyleNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list[StyleNode]:
        return [n for n in self.nodes() if n.is_leaf]

    def _index(self) -> None:
        if self._parents is not None:
            return
        parents: dict[int, StyleNode] = {}
        paths: dict[int, tuple[tuple[str, str], ...]] = {self.root.node_id: ()}
        stack = [self.root]
        while stack:
            node = stack.pop()
            base = paths[node.node_id]
            for child in node.children:
                parents[child.node_id] = node
                paths[child.node_id] = base + ((node.split_standard, child.edge_label),)
                stack.append(child)
        self._parents = parents
        self._paths = paths

    def node_by_id(self, node_id: int) -> StyleNode:
        for node in self.nodes():
            if node.node_id == node_id:
                return node
        raise UnknownCluster(f"no node {node_id}")

    def cluster_id(self, leaf: StyleNode) -> ClusterId:
        self._index()
        assert self._paths is not None
        if leaf.node_id not in self._paths:
            raise UnknownCluster(f"node {leaf.node_id} not in tree")
        return ClusterId(leaf.node_id, self._paths[leaf.node_id])

    def cluster_ids(self) -> list[ClusterId]:
        return [self.cluster_id(leaf) for leaf in self.leaves()]

    def parent_of(self, node_id: int) -> StyleNode | None:
        self._index()
        assert self._parents is not None
        return self._parents.get(node_id)


def largest_leaf(node: StyleNode) -> StyleNode:
    leaves = [n for n in _subtree(node) if n.is_leaf]
    return max(leaves, key=lambda n: (len(n.members), -n.node_id))


def _subtree(node: StyleNode) -> Iterable[StyleNode]:
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def build_tree(
    profiles: Sequence[StyleProfile],
    sizes: Mapping[str, int],
    order: Sequence[str],
    k: int,
    registry: StandardsRegistry,
    count_unit: str = "pairs",
) -> StyleTree:
    """One full pass per standard over all current leaves, in order.

    A leaf splits on a standard iff its members carry at least two distinct
    labels and every resulting child's corpus size exceeds ``k``. Corpus
    size is the summed QA-pair count of the members (``count_unit="pairs"``,
    the default) or the member count (``count_unit="authors"``).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if count_unit not in ("pairs", "authors"):
        raise ValueError(f"bad count_unit {count_unit!r}")
    unknown = [s for s in order if s not in registry]
    if unknown:
        raise RegistryMismatch(f"order references unknown standards: {unknown}")
    missing = [p.author_id for p in profiles if p.author_id not in sizes]
    if missing:
        raise RegistryMismatch(f"sizes missing for authors: {missing[:5]}")

    by_author = {p.author_id: p.labels for p in profiles}
    members = tuple(sorted(by_author))

    def weight(author_ids: Iterable[str]) -> int:
        if count_unit == "authors":
            return sum(1 for _ in author_ids)
        return sum(sizes[a] for a in author_ids)

    root = StyleNode(node_id=0, members=members)
    next_id = 1
    leaves = [root]

    for standard_id in order:
        vocabulary = registry[standard_id].labels
        new_leaves: list[StyleNode] = []
        for leaf in leaves:
            groups: dict[str, list[str]] = {}
            for author in leaf.members:
                groups.setdefault(by_author[author][standard_id], []).append(author)
            splittable = len(groups) >= 2 and all(
                weight(g) > k for g in groups.values()
            )
            if not splittable:
                new_leaves.append(leaf)
                continue
            leaf.split_standard = standard_id
            for label in vocabulary:
                if label not in groups:
                    continue
                child = StyleNode(
                    node_id=next_id,
                    members=tuple(sorted(groups[label])),
                    edge_label=label,
                )
                next_id += 1
                leaf.children.append(child)
                new_leaves.append(child)
        leaves = new_leaves

    return StyleTree(root, registry.digest(), order, k, count_unit)


def assign_cluster(profile: StyleLabelVector, tree: StyleTree) -> ClusterId:
    """Descend by the profile's labels; on a missing edge, fall back to the
    largest-membership leaf of the deepest matched subtree."""
    node = tree.root
    while not node.is_leaf:
        try:
            label = profile[node.split_standard]
        except KeyError as exc:
            raise RegistryMismatch(f"profile lacks standard {node.split_standard!r}") from exc
        matched = next((c for c in node.children if c.edge_label == label), None)
        if matched is None:
            return tree.cluster_id(largest_leaf(node))
        node = matched
    return tree.cluster_id(node)


def sibling_clusters(cluster: ClusterId, tree: StyleTree) -> list[tuple[ClusterId, str]]:
    """Leaves under the cluster's parent's other children, annotated with the
    parent's split standard (the one label guaranteed to differ)."""
    leaf = tree.node_by_id(cluster.node_id)
    if not leaf.is_leaf:
        raise UnknownCluster(f"node {cluster.node_id} is not a leaf")
    parent = tree.parent_of(cluster.node_id)
    if parent is None:
        return []
    result: list[tuple[ClusterId, str]] = []
    for child in parent.children:
        if child.node_id == cluster.node_id:
            continue
        for node in _subtree(child):
            if node.is_leaf:
                result.append((tree.cluster_id(node), parent.split_standard))
    return result


# --- serialization ---


def _node_doc(node: StyleNode) -> dict:
    doc: dict = {"node_id": node.node_id}
    if node.is_leaf:
        doc["members"] = list(node.members)
    else:
        doc["split_standard"] = node.split_standard
        doc["children"] = [_node_doc(c) for c in node.children]
        doc["edge_labels"] = [c.edge_label for c in node.children]
    return doc


def serialize_tree(tree: StyleTree) -> dict:
    return {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "registry_hash": tree.registry_hash,
        "standard_order": list(tree.standard_order),
        "k": tree.k,
        "count_unit": tree.count_unit,
        "root": _node_doc(tree.root),
    }


def _node_from_doc(doc: dict, edge_label: str | None) -> StyleNode:
    try:
        node_id = int(doc["node_id"])
        if "children" in doc:
            children = [
                _node_from_doc(child_doc, label)
                for child_doc, label in zip(doc["children"], doc["edge_labels"], strict=True)
            ]
            members = tuple(sorted(a for c in children for a in c.members))
            return StyleNode(
                node_id=node_id,
                members=members,
                split_standard=doc["split_standard"],
                edge_label=edge_label,
                children=children,
            )
        return StyleNode(node_id=node_id, members=tuple(doc["members"]), edge_label=edge_label)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptDocument(f"bad tree node: {exc}") from exc


def deserialize_tree(doc: dict) -> StyleTree:
    if not isinstance(doc, dict) or doc.get("format") != TREE_FORMAT:
        raise CorruptDocument("not a style-tree document")
    if doc.get("version") != TREE_VERSION:
        raise SchemaVersionMismatch(f"unsupported tree version {doc.get('version')!r}")
    try:
        return StyleTree(
            root=_node_from_doc(doc["root"], None),
            registry_hash=doc["registry_hash"],
            standard_order=doc["standard_order"],
            k=int(doc["k"]),
            count_unit=doc.get("count_unit", "pairs"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptDocument(f"bad tree document: {exc}") from exc


def trees_equal(a: StyleTree, b: StyleTree) -> bool:
    if (a.registry_hash, a.standard_order, a.k, a.count_unit) != (
        b.registry_hash,
        b.standard_order,
        b.k,
        b.count_unit,
    ):
        return False

    def node_eq(x: StyleNode, y: StyleNode) -> bool:
        if (x.node_id, x.members, x.split_standard, x.edge_label) != (
            y.node_id,
            y.members,
            y.split_standard,
            y.edge_label,
        ):
            return False
        if len(x.children) != len(y.children):
            return False
        return all(node_eq(cx, cy) for cx, cy in zip(x.children, y.children))

    return node_eq(a.root, b.root)
