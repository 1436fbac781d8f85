"""
Dichotomic tree label codec.

Builds the balanced binary tree over an ordered category range and performs
every label transformation the model needs: category -> binary path,
category -> multi-hot sequence, shifted decoder target, and the inverse map.

Categories are 0-indexed internally. A node covering k categories gives its
left child ceil(k/2) of them. A singleton node above the tree depth gets one
padding child covering the same singleton, so every leaf sits at depth d; the
padding edge emits bit 0 and decoding ignores the bit on it.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import (
    InvalidCategoryCountError,
    InvalidCategoryError,
    InvalidPathError,
    InvalidPrefixError,
)

START_TOKEN = -1

PathCode = Tuple[int, ...]
ShiftedTarget = Tuple[int, ...]
Range = Tuple[int, int]
IndexLike = Union[int, np.ndarray]


@dataclass(frozen=True)
class TreeNode:
    lo: int
    hi: int
    left: Optional[int]
    right: Optional[int]
    depth: int

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None

    @property
    def is_padding(self) -> bool:
        """Singleton node above the tree depth with a single same-range child."""
        return self.left is not None and self.right is None


def tree_depth(n: int) -> int:
    """ceil(log2 n) for n >= 2."""
    return (n - 1).bit_length()


class DichotomicTree:
    """
    Immutable left-heavy dichotomic tree over categories 0..n-1.

    Node 0 is the root; nodes are stored in pre-order. Lookup tables used by
    batched training and decoding are computed once at construction.
    """

    def __init__(self, n: int):
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise InvalidCategoryCountError(f"category count must be an integer, got {n!r}")
        if n < 2:
            raise InvalidCategoryCountError(f"category count must be >= 2, got {n}")

        self.n = int(n)
        self.depth = tree_depth(self.n)

        nodes: List[Optional[TreeNode]] = []

        def grow(lo: int, hi: int, depth: int) -> int:
            idx = len(nodes)
            nodes.append(None)
            if depth == self.depth:
                nodes[idx] = TreeNode(lo, hi, None, None, depth)
            elif lo == hi:
                child = grow(lo, hi, depth + 1)
                nodes[idx] = TreeNode(lo, hi, child, None, depth)
            else:
                mid = lo + (hi - lo + 2) // 2 - 1
                left = grow(lo, mid, depth + 1)
                right = grow(mid + 1, hi, depth + 1)
                nodes[idx] = TreeNode(lo, hi, left, right, depth)
            return idx

        grow(0, self.n - 1, 0)
        self.nodes: Tuple[TreeNode, ...] = tuple(nodes)

        self._paths = np.zeros((self.n, self.depth), dtype=np.int64)
        self._node_paths = np.zeros((self.n, self.depth + 1), dtype=np.int64)
        for c in range(self.n):
            idx = 0
            self._node_paths[c, 0] = idx
            for t in range(self.depth):
                node = self.nodes[idx]
                bit = self._bit_towards(node, c)
                self._paths[c, t] = bit
                idx = self._child(node, bit)
                self._node_paths[c, t + 1] = idx
        self._paths.setflags(write=False)
        self._node_paths.setflags(write=False)

    # ------------------------------------------------------------------
    # Navigation helpers
    # ------------------------------------------------------------------
    def _bit_towards(self, node: TreeNode, c: int) -> int:
        if node.is_padding:
            return 0
        return 0 if c <= self.nodes[node.left].hi else 1

    @staticmethod
    def _child(node: TreeNode, bit: int) -> int:
        if node.is_padding:
            return node.left
        return node.left if bit == 0 else node.right

    def _check_category(self, c) -> int:
        if isinstance(c, bool) or not isinstance(c, (int, np.integer)):
            raise InvalidCategoryError(f"category must be an integer, got {c!r}")
        if not 0 <= c < self.n:
            raise InvalidCategoryError(f"category {c} outside [0, {self.n - 1}]")
        return int(c)

    @staticmethod
    def _check_bits(bits: Sequence[int], error_cls) -> Tuple[int, ...]:
        out = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in out):
            raise error_cls(f"path bits must be 0 or 1, got {list(out)}")
        return out

    def _walk(self, bits: Sequence[int]) -> int:
        idx = 0
        for bit in bits:
            idx = self._child(self.nodes[idx], bit)
        return idx

    # ------------------------------------------------------------------
    # Label transformations
    # ------------------------------------------------------------------
    def encode_path(self, c: int) -> PathCode:
        """Binary option path from the root to category c (0 = left, 1 = right)."""
        c = self._check_category(c)
        return tuple(int(b) for b in self._paths[c])

    def decode_path(self, bits: Sequence[int]) -> int:
        """Inverse of encode_path. Total: padding edges accept either bit."""
        bits = self._check_bits(bits, InvalidPathError)
        if len(bits) != self.depth:
            raise InvalidPathError(
                f"path must have length {self.depth}, got {len(bits)}"
            )
        leaf = self.nodes[self._walk(bits)]
        return leaf.lo

    def encode_multihot(self, c: int) -> np.ndarray:
        """d x n indicator rows; row t marks the range of the depth-(t+1) node on c's path."""
        c = self._check_category(c)
        out = np.zeros((self.depth, self.n), dtype=np.float64)
        for t in range(self.depth):
            node = self.nodes[self._node_paths[c, t + 1]]
            out[t, node.lo : node.hi + 1] = 1.0
        return out

    def node_ranges_at(self, prefix: Sequence[int]) -> Tuple[Range, Range]:
        """
        Child ranges ([l, m], [m+1, r]) of the node reached by a path prefix.

        On a padding node both ranges equal the singleton.
        """
        prefix = self._check_bits(prefix, InvalidPrefixError)
        if len(prefix) > self.depth - 1:
            raise InvalidPrefixError(
                f"prefix length {len(prefix)} exceeds {self.depth - 1} for depth-{self.depth} tree"
            )
        node = self.nodes[self._walk(prefix)]
        if node.is_padding:
            return (node.lo, node.hi), (node.lo, node.hi)
        left, right = self.nodes[node.left], self.nodes[node.right]
        return (left.lo, left.hi), (right.lo, right.hi)

    def node_path(self, c: int) -> Tuple[int, ...]:
        """Node indices from the root (inclusive) to c's leaf."""
        c = self._check_category(c)
        return tuple(int(i) for i in self._node_paths[c])

    # ------------------------------------------------------------------
    # Vectorised tables
    # ------------------------------------------------------------------
    def path_table(self) -> np.ndarray:
        """(n, d) int64 array of path codes."""
        return self._paths.copy()

    def multihot_table(self) -> np.ndarray:
        """(n, d, n) float64 array; entry [c] is encode_multihot(c)."""
        return np.stack([self.encode_multihot(c) for c in range(self.n)])

    def range_masks(self) -> np.ndarray:
        """(num_nodes, n) indicator of each node's range."""
        masks = np.zeros((len(self.nodes), self.n), dtype=np.float64)
        for i, node in enumerate(self.nodes):
            masks[i, node.lo : node.hi + 1] = 1.0
        return masks

    def node_child_masks(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Per-node decision tables for batched decoding.

        Returns (left_masks, right_masks, children) where the masks are
        (num_nodes, n) indicators of the left and right child ranges and
        children is (num_nodes, 2) with the node index reached by bit 0 / 1.
        Leaves have empty masks and children -1.
        """
        num = len(self.nodes)
        left_masks = np.zeros((num, self.n), dtype=np.float64)
        right_masks = np.zeros((num, self.n), dtype=np.float64)
        children = np.full((num, 2), -1, dtype=np.int64)
        for i, node in enumerate(self.nodes):
            if node.is_leaf:
                continue
            if node.is_padding:
                left_masks[i, node.lo : node.hi + 1] = 1.0
                right_masks[i, node.lo : node.hi + 1] = 1.0
                children[i] = (node.left, node.left)
            else:
                left, right = self.nodes[node.left], self.nodes[node.right]
                left_masks[i, left.lo : left.hi + 1] = 1.0
                right_masks[i, right.lo : right.hi + 1] = 1.0
                children[i] = (node.left, node.right)
        return left_masks, right_masks, children

    # ------------------------------------------------------------------
    # Serialisation
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict:
        return {
            "n": self.n,
            "depth": self.depth,
            "nodes": [
                {"lo": nd.lo, "hi": nd.hi, "left": nd.left, "right": nd.right}
                for nd in self.nodes
            ],
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: Dict) -> "DichotomicTree":
        tree = cls(doc["n"])
        expected = tree.to_dict()
        if doc.get("depth") != expected["depth"] or doc.get("nodes") != expected["nodes"]:
            raise ValueError(
                f"tree document does not describe the dichotomic tree for n={tree.n}"
            )
        return tree

    def __repr__(self) -> str:
        return f"DichotomicTree(n={self.n}, depth={self.depth}, nodes={len(self.nodes)})"


def build_tree(n: int) -> DichotomicTree:
    return DichotomicTree(n)


def shift_right(bits: Sequence[int]) -> ShiftedTarget:
    """[c1, ..., cd] -> [s, c1, ..., c(d-1)], the decoder input of teacher forcing."""
    bits = tuple(int(b) for b in bits)
    return (START_TOKEN,) + bits[:-1]


def to_external(c: IndexLike, index_base: int = 0) -> IndexLike:
    """Internal 0-based category (scalar or integer array) to the external label."""
    if np.ndim(c) == 0:
        return int(c) + index_base
    return np.asarray(c, dtype=np.int64) + index_base


def from_external(label: IndexLike, index_base: int = 0) -> IndexLike:
    """External label (scalar or integer array) to the internal 0-based category."""
    if np.ndim(label) == 0:
        return int(label) - index_base
    return np.asarray(label, dtype=np.int64) - index_base
