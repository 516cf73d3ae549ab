"""Taxonomy trees over categorical quasi-identifier domains.

A tree is immutable once built. Nodes are kept in breadth-first order from the
root so that dense lookup tables (LCA, ancestor-or-equal, distortion) can be
indexed by small integers.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np


class TaxonomyError(ValueError):
    """Malformed tree or unknown node."""


class TaxonomyTree:
    """Rooted tree given by a child -> parent map (the root maps to ``None``)."""

    def __init__(self, parent: Mapping[str, str | None], name: str = ""):
        self.name = name
        roots = [n for n, p in parent.items() if p is None]
        if len(roots) != 1:
            raise TaxonomyError(f"taxonomy {name!r} must have exactly one root, found {len(roots)}")
        for node, p in parent.items():
            if p is not None and p not in parent:
                raise TaxonomyError(f"taxonomy {name!r}: parent {p!r} of {node!r} is not a node")
        self.root = roots[0]
        children: dict[str, list[str]] = {n: [] for n in parent}
        for node, p in parent.items():
            if p is not None:
                children[p].append(node)
        order = []
        seen = set()
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            seen.add(node)
            order.append(node)
            queue.extend(children[node])
        if len(order) != len(parent):
            raise TaxonomyError(f"taxonomy {name!r} contains a cycle or detached nodes")
        self.nodes: tuple[str, ...] = tuple(order)
        self.index: dict[str, int] = {n: i for i, n in enumerate(order)}
        self._parent = dict(parent)
        self._children = {n: tuple(c) for n, c in children.items()}
        self.depth = {self.root: 0}
        for node in order[1:]:
            self.depth[node] = self.depth[self._parent[node]] + 1

    # -- construction -------------------------------------------------
    @classmethod
    def from_nested(cls, nested: Mapping, name: str = "") -> "TaxonomyTree":
        """Build from ``{"Any": {"Male": {}, "Female": {}}}``-style nesting."""
        if len(nested) != 1:
            raise TaxonomyError(f"taxonomy {name!r} must have exactly one root, found {len(nested)}")
        parent: dict[str, str | None] = {}

        def walk(node: str, up: str | None, sub: Mapping) -> None:
            if node in parent:
                raise TaxonomyError(f"taxonomy {name!r}: duplicate node name {node!r}")
            parent[node] = up
            for child, grand in (sub or {}).items():
                walk(child, node, grand)

        (root, sub), = nested.items()
        walk(root, None, sub)
        return cls(parent, name=name)

    def to_nested(self) -> dict:
        def build(node: str) -> dict:
            return {c: build(c) for c in self._children[node]}

        return {self.root: build(self.root)}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TaxonomyTree) and self._parent == other._parent

    def __hash__(self) -> int:
        return hash(tuple(sorted(self._parent.items(), key=lambda kv: kv[0])))

    def __contains__(self, node: object) -> bool:
        return node in self.index

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"TaxonomyTree({self.name!r}, root={self.root!r}, nodes={len(self.nodes)})"

    # -- structure ----------------------------------------------------
    def _check(self, node: str) -> None:
        if node not in self.index:
            raise TaxonomyError(f"unknown node {node!r} in taxonomy {self.name!r}")

    def parent(self, node: str) -> str | None:
        self._check(node)
        return self._parent[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._children[node]

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if not self._children[n])

    def ancestors(self, node: str) -> list[str]:
        """Strict ancestors of ``node`` from its parent up to the root."""
        self._check(node)
        out = []
        p = self._parent[node]
        while p is not None:
            out.append(p)
            p = self._parent[p]
        return out

    def phi(self, node: str) -> frozenset[str]:
        """``node`` together with all of its ancestors."""
        return frozenset(self.ancestors(node)) | {node}

    def is_ancestor_or_equal(self, anc: str, node: str) -> bool:
        self._check(anc)
        return anc == node or anc in self.ancestors(node)

    def lca(self, a: str, b: str) -> str:
        self._check(a)
        self._check(b)
        while self.depth[a] > self.depth[b]:
            a = self._parent[a]
        while self.depth[b] > self.depth[a]:
            b = self._parent[b]
        while a != b:
            a, b = self._parent[a], self._parent[b]
        return a

    def subtree(self, root: str, keep: Iterable[str] | None = None) -> "TaxonomyTree":
        """Tree rooted at ``root``; restricted to ``keep`` when given."""
        self._check(root)
        if keep is None:
            keep = [n for n in self.nodes if self.is_ancestor_or_equal(root, n)]
        keep = set(keep) | {root}
        # iterate in this tree's order so node order never depends on set hashing
        parent = {n: (None if n == root else self._parent[n]) for n in self.nodes if n in keep}
        return TaxonomyTree(parent, name=self.name)

    # -- dense tables (used by the vectorised grouping/attack code) ---
    @cached_property
    def parent_index(self) -> np.ndarray:
        return np.array([-1 if self._parent[n] is None else self.index[self._parent[n]] for n in self.nodes])

    @cached_property
    def covers_table(self) -> np.ndarray:
        """``covers_table[a, v]`` is True when node a is an ancestor-or-equal of node v."""
        n = len(self.nodes)
        table = np.zeros((n, n), dtype=bool)
        for v, node in enumerate(self.nodes):
            table[v, v] = True
            for a in self.ancestors(node):
                table[self.index[a], v] = True
        return table

    @cached_property
    def lca_table(self) -> np.ndarray:
        n = len(self.nodes)
        table = np.empty((n, n), dtype=np.int64)
        for i, a in enumerate(self.nodes):
            for j in range(i, n):
                table[i, j] = table[j, i] = self.index[self.lca(a, self.nodes[j])]
        return table

    @cached_property
    def distortion_table(self) -> np.ndarray:
        n = len(self.nodes)
        table = np.zeros((n, n))
        phis = [self.phi(node) for node in self.nodes]
        for i in range(n):
            for j in range(i + 1, n):
                table[i, j] = table[j, i] = _phi_distortion(phis[i], phis[j])
        return table


def _phi_distortion(pu: frozenset, pv: frozenset, exact: bool = False):
    union = len(pu | pv)
    inter = len(pu & pv)
    if exact:
        return Fraction(union - inter, union)
    return (union - inter) / union


def ancestors(node: str, tree: TaxonomyTree) -> list[str]:
    return tree.ancestors(node)


def minimal_cover_subtree(values: Iterable[str], tree: TaxonomyTree) -> TaxonomyTree:
    """Smallest subtree of ``tree`` containing every value: paths from each value to their LCA."""
    values = list(dict.fromkeys(values))
    if not values:
        raise ValueError("minimal_cover_subtree needs at least one value")
    top = generalize_lca(values, tree)
    keep = {top}
    for v in values:
        node = v
        while node != top:
            keep.add(node)
            node = tree.parent(node)
    return tree.subtree(top, keep)


def generalize_lca(values: Iterable[str], tree: TaxonomyTree) -> str:
    values = list(values)
    if not values:
        raise ValueError("generalize_lca needs at least one value")
    out = values[0]
    tree._check(out)
    for v in values[1:]:
        out = tree.lca(out, v)
    return out


def categorical_distortion(u: str, v: str, tree: TaxonomyTree, exact: bool = False):
    """Share of the combined ancestor chains of ``u`` and ``v`` that they do not have in common.

    Ancestor chains are taken in ``tree``, which may be a covering subtree.
    With ``exact=True`` a :class:`fractions.Fraction` is returned.
    """
    return _phi_distortion(tree.phi(u), tree.phi(v), exact=exact)
