"""
Ordered rooted trees with disjoint leaf sets.

A subtree is addressed by the path of child indices from the root;
the root itself has the empty address ``()``.
"""

import ast
from dataclasses import dataclass
from typing import Iterator, Union


@dataclass(frozen=True)
class Leaf:
    label: int
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"leaf {self.label}: physical dimension must be positive")


@dataclass(frozen=True)
class Node:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("an internal node needs at least two children")
        seen = set()
        for c in self.children:
            labels = set(leaf_labels(c))
            if labels & seen:
                raise ValueError(f"leaf labels {sorted(labels & seen)} occur in more than one subtree")
            seen |= labels


Tree = Union[Leaf, Node]


def is_leaf(t: Tree) -> bool:
    return isinstance(t, Leaf)


def leaves(t: Tree) -> list:
    """
    Leaves of `t` in left-to-right order.
    """
    if is_leaf(t):
        return [t]
    return [l for c in t.children for l in leaves(c)]


def leaf_labels(t: Tree) -> list:
    return [l.label for l in leaves(t)]


def height(t: Tree) -> int:
    if is_leaf(t):
        return 0
    return 1 + max(height(c) for c in t.children)


def vertex_count(t: Tree) -> int:
    if is_leaf(t):
        return 1
    return 1 + sum(vertex_count(c) for c in t.children)


def physical_dim(t: Tree) -> int:
    """
    Product of the physical dimensions of all leaves of `t`.
    """
    n = 1
    for l in leaves(t):
        n *= l.dim
    return n


def subtree(t: Tree, address: tuple) -> Tree:
    for k in address:
        if is_leaf(t) or not 0 <= k < len(t.children):
            raise KeyError(f"invalid subtree address {address}")
        t = t.children[k]
    return t


def addresses(t: Tree, prefix: tuple = ()) -> Iterator[tuple]:
    """
    Iterate over all subtree addresses in pre-order.
    """
    yield prefix
    if not is_leaf(t):
        for k, c in enumerate(t.children):
            yield from addresses(c, prefix + (k,))


def build_balanced_binary(n_per_leaf: int, d: int) -> Tree:
    """
    Binary tree of minimal height over leaves ``1..d``; the first ``ceil(k/2)``
    leaves of every block go to the left child.
    """
    if d < 2:
        raise ValueError("need at least two leaves")

    def build(lo, hi):
        if hi - lo == 1:
            return Leaf(lo + 1, n_per_leaf)
        mid = lo + (hi - lo + 1) // 2
        return Node((build(lo, mid), build(mid, hi)))

    return build(0, d)


def build_tt_tree(n_per_leaf: int, d: int) -> Tree:
    """
    Right-leaning binary comb of maximal height (tensor train / MPS ordering).
    """
    if d < 2:
        raise ValueError("need at least two leaves")
    t = Leaf(d, n_per_leaf)
    for k in range(d - 1, 0, -1):
        t = Node((Leaf(k, n_per_leaf), t))
    return t


def parse_tree(literal: str, n_per_leaf) -> Tree:
    """
    Build a tree from a nested-tuple literal such as ``"((1,2),(3,4))"``.

    `n_per_leaf` is either a single dimension or a mapping from leaf label to dimension.
    """
    try:
        spec = ast.literal_eval(literal)
    except (ValueError, SyntaxError) as exc:
        raise ValueError(f"malformed tree literal {literal!r}") from exc

    def dim(label):
        return n_per_leaf[label] if isinstance(n_per_leaf, dict) else n_per_leaf

    def build(s):
        if isinstance(s, int):
            return Leaf(s, dim(s))
        if isinstance(s, (tuple, list)):
            return Node(tuple(build(c) for c in s))
        raise ValueError(f"unexpected element {s!r} in tree literal")

    t = build(spec)
    if is_leaf(t):
        raise ValueError("tree literal must describe at least one internal node")
    return t


def format_tree(t: Tree) -> str:
    """
    Nested-tuple literal of `t`; inverse of `parse_tree` for the topology.
    """
    if is_leaf(t):
        return str(t.label)
    return "(" + ",".join(format_tree(c) for c in t.children) + ")"


def check_rank_compatibility(t: Tree, ranks: dict):
    """
    Validate a tree rank (mapping address -> rank) against the tree.
    """
    if ranks.get((), 1) != 1:
        raise ValueError("the root rank must be 1")
    for a in addresses(t):
        s = subtree(t, a)
        r = ranks.get(a, 1)
        if r < 1:
            raise ValueError(f"rank at {a} must be positive")
        if is_leaf(s):
            if r > s.dim:
                raise ValueError(f"leaf rank {r} at {a} exceeds physical dimension {s.dim}")
            continue
        dims = [r] + [ranks.get(a + (k,), 1) for k in range(len(s.children))]
        for i, ri in enumerate(dims):
            rest = 1
            for j, rj in enumerate(dims):
                if j != i:
                    rest *= rj
            if ri > rest:
                raise ValueError(f"incompatible ranks {dims} at node {a}")
