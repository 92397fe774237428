"""Random binary sum trees driving the phase recursion.

The root carries the target power k.  Each node of value v >= 2 draws a
split fraction x uniformly from [x_min, 1/2], sets y = 1 - x, and gets
children ceil(x * v) and floor(y * v) = v - ceil(x * v), so child values sum
to the parent exactly.  Recursion stops at values <= leaf_cutoff (default 1,
leaf alphabet {0, 1}); a value-1 root is the one node that still splits,
into the forced pair (1, 0).

Because the shrink factor per step is at least y_max = 1 - x_min, the height
is Theta(log k); levels are stored as flat integer arrays, which keeps trees
with k up to 10^6 cheap to build and to validate.  Node positions follow the
usual binary indexing: the root is position 1 at height 0 and a node at
position p spawns children at positions 2p - 1 and 2p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measurement import RngStream
from .spectral import SpectralModel, amplitude_series


@dataclass(frozen=True)
class SplitPolicy:
    """Split-fraction distribution: x uniform on [x_min, 1/2].

    x_min = 1/2 forces exact halving, which is occasionally useful for
    constructing trees whose node values are predictable.
    """

    stream: RngStream
    x_min: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.x_min <= 0.5:
            raise ValueError("x_min must lie in (0, 1/2]")

    @property
    def y_max(self) -> float:
        return 1.0 - self.x_min


@dataclass(frozen=True)
class TreeNode:
    """Immutable view of one node; children are given by value."""

    height: int
    position: int
    value: int
    left_value: int | None = None
    right_value: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left_value is None

    @property
    def trivial(self) -> bool:
        """True iff the node needs no sandwich measurement."""
        if self.is_leaf:
            return True
        return self.left_value == 0 or self.right_value == 0


class SumTree:
    """Level-array representation of a binary sum tree.

    ``levels[h]`` holds the values of the nodes materialized at height h in
    position order; ``split_masks[h]`` marks which of them have children.
    Children of the j-th splitting node at height h sit at indices 2j and
    2j + 1 of ``levels[h + 1]``.  Instances are immutable after construction.
    """

    __slots__ = ("levels", "split_masks", "leaf_cutoff", "x_min", "source", "_positions")

    def __init__(self, levels, split_masks, leaf_cutoff=1, x_min=None, source="random"):
        self.levels = [np.asarray(v, dtype=np.int64) for v in levels]
        self.split_masks = [np.asarray(m, dtype=bool) for m in split_masks]
        self.leaf_cutoff = int(leaf_cutoff)
        self.x_min = x_min
        self.source = source
        self._positions = None
        if len(self.levels) != len(self.split_masks):
            raise ValueError("levels and split masks must align")
        for vals, mask in zip(self.levels, self.split_masks):
            if vals.size != mask.size:
                raise ValueError("level and mask sizes must align")

    @property
    def k(self) -> int:
        return int(self.levels[0][0])

    @property
    def h_max(self) -> int:
        return len(self.levels) - 1

    @property
    def node_count(self) -> int:
        return int(sum(v.size for v in self.levels))

    def positions(self, height: int) -> np.ndarray:
        """Positions of the materialized nodes at a height (1-based)."""
        if self._positions is None:
            self._compute_positions()
        return self._positions[height]

    def _compute_positions(self):
        # Positions double per level; beyond int64 range fall back to
        # Python integers in an object array.
        use_object = self.h_max > 61
        dtype = object if use_object else np.int64
        positions = [np.array([1], dtype=dtype)]
        for h in range(self.h_max):
            parents = positions[h][self.split_masks[h]]
            child = np.empty(2 * parents.size, dtype=dtype)
            child[0::2] = 2 * parents - 1
            child[1::2] = 2 * parents
            positions.append(child)
        self._positions = positions

    def children_values(self, height: int):
        """(left, right) child-value arrays aligned with the splitting nodes."""
        nxt = self.levels[height + 1]
        return nxt[0::2], nxt[1::2]

    def nodes(self):
        """All nodes as TreeNode records, height then position order."""
        out = []
        for h, (vals, mask) in enumerate(zip(self.levels, self.split_masks)):
            pos = self.positions(h)
            if h < self.h_max:
                left, right = self.children_values(h)
            rank = -1
            for j in range(vals.size):
                if mask[j]:
                    rank += 1
                    out.append(
                        TreeNode(h, int(pos[j]), int(vals[j]), int(left[rank]), int(right[rank]))
                    )
                else:
                    out.append(TreeNode(h, int(pos[j]), int(vals[j])))
        return out

    def nontrivial_nodes(self) -> list[TreeNode]:
        """Internal nodes with both children >= 1, in (height, position) order."""
        out = []
        for h in range(self.h_max):
            mask = self.split_masks[h]
            if not mask.any():
                continue
            vals = self.levels[h][mask]
            left, right = self.children_values(h)
            keep = (left >= 1) & (right >= 1)
            if not keep.any():
                continue
            pos = self.positions(h)[mask]
            for j in np.flatnonzero(keep):
                out.append(
                    TreeNode(h, int(pos[j]), int(vals[j]), int(left[j]), int(right[j]))
                )
        return out

    def all_values(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def leaf_value_counts(self) -> dict[int, int]:
        """Histogram of leaf values over the whole tree."""
        counts: dict[int, int] = {}
        for vals, mask in zip(self.levels, self.split_masks):
            leaves = vals[~mask]
            if leaves.size:
                uniq, cnt = np.unique(leaves, return_counts=True)
                for v, c in zip(uniq, cnt):
                    counts[int(v)] = counts.get(int(v), 0) + int(c)
        return counts

    def validate(self):
        """Check structural invariants; raises ValueError on violation."""
        if self.k < 1:
            raise ValueError("root value must be >= 1")
        for h in range(self.h_max):
            parents = self.levels[h][self.split_masks[h]]
            nxt = self.levels[h + 1]
            if nxt.size != 2 * parents.size:
                raise ValueError(f"level {h + 1} size mismatch")
            if not np.array_equal(nxt[0::2] + nxt[1::2], parents):
                raise ValueError(f"child-sum violated below height {h}")
        if self.split_masks[-1].any():
            raise ValueError("bottom level must be all leaves")
        for vals, mask in zip(self.levels, self.split_masks):
            leaves = vals[~mask]
            if leaves.size and (leaves.min() < 0 or leaves.max() > self.leaf_cutoff):
                raise ValueError("leaf values outside [0, leaf_cutoff]")
            if (vals < 0).any():
                raise ValueError("negative node value")

    def padded(self) -> "SumTree":
        """Uniform-depth view: leaves of value >= 1 above the bottom height
        get forced (value, 0) child pairs down to h_max.  The padding adds
        only trivial nodes, so the non-trivial node set is unchanged."""
        h_max = self.h_max
        new_levels = [self.levels[0].tolist()]
        new_masks = []
        # orig[j] = index of node j in the original level, or -1 for padding.
        orig = [0]
        for h in range(h_max):
            vals = new_levels[h]
            mask_h = self.split_masks[h]
            left_orig, right_orig = self.children_values(h)
            child_vals = []
            child_orig = []
            new_mask = []
            # Children of original index o sit at 2*rank, 2*rank + 1 of the
            # original next level, rank counting splitting nodes.
            orig_next_base = {}
            r = 0
            for o in np.flatnonzero(mask_h):
                orig_next_base[int(o)] = 2 * r
                r += 1
            for v, o in zip(vals, orig):
                splits_orig = o >= 0 and mask_h[o]
                pads = not splits_orig and v >= 1
                new_mask.append(bool(splits_orig or pads))
                if splits_orig:
                    base = orig_next_base[o]
                    child_vals.extend([int(left_orig[base // 2]), int(right_orig[base // 2])])
                    child_orig.extend([base, base + 1])
                elif pads:
                    child_vals.extend([int(v), 0])
                    child_orig.extend([-1, -1])
            new_masks.append(new_mask)
            new_levels.append(child_vals)
            orig = child_orig
        new_masks.append([False] * len(new_levels[-1]))
        return SumTree(
            new_levels,
            new_masks,
            leaf_cutoff=self.leaf_cutoff,
            x_min=self.x_min,
            source=self.source + "+padded",
        )


def build_tree(
    k: int, policy: SplitPolicy, leaf_cutoff: int = 1, uniform_depth: bool = False
) -> SumTree:
    """Build a random sum tree with root value k.

    Deterministic for a fixed policy stream: split fractions at height h are
    drawn in one vectorized batch from the stream child(h), so the tree is a
    pure function of (k, x_min, stream, leaf_cutoff).
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    leaf_cutoff = int(leaf_cutoff)
    if leaf_cutoff < 1:
        raise ValueError("leaf_cutoff must be >= 1")
    if k == 1:
        # A unit root still splits, into the forced (1, 0) pair.
        return SumTree(
            [[1], [1, 0]],
            [[True], [False, False]],
            leaf_cutoff=leaf_cutoff,
            x_min=policy.x_min,
        )
    levels = [np.array([k], dtype=np.int64)]
    masks = []
    h = 0
    while True:
        vals = levels[-1]
        split = vals > leaf_cutoff
        masks.append(split)
        if not split.any():
            break
        parents = vals[split]
        x = policy.stream.child(h).generator().uniform(policy.x_min, 0.5, parents.size)
        left = np.ceil(x * parents).astype(np.int64)
        right = parents - left
        children = np.empty(2 * parents.size, dtype=np.int64)
        children[0::2] = left
        children[1::2] = right
        levels.append(children)
        h += 1
    tree = SumTree(levels, masks, leaf_cutoff=leaf_cutoff, x_min=policy.x_min)
    return tree.padded() if uniform_depth else tree


def degenerate_chain_tree(k: int) -> SumTree:
    """Fully sequential proxy tree: every split is (value - 1, 1).

    The non-trivial nodes are exactly the values {2, ..., k}, and the spine
    terminates in a forced (1, 0) split so that h_max = k.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    levels = [[k]]
    masks = [[True]]
    for h in range(1, k):
        levels.append([k - h, 1])
        masks.append([True, False])
    levels.append([1, 0])
    masks.append([False, False])
    return SumTree(levels, masks, leaf_cutoff=1, x_min=None, source="chain")


def nontrivial_nodes(tree: SumTree) -> list[TreeNode]:
    """Nodes that consume a sandwich measurement, in (height, position) order."""
    return tree.nontrivial_nodes()


def count_ones_leaves(tree: SumTree) -> int:
    """Number of value-1 leaves; equals k for standard (cutoff 1) trees."""
    return tree.leaf_value_counts().get(1, 0)


def height_bound(k: int, y_max: float) -> int:
    """Upper bound ceil(ln k / ln(1 / y_max)) + 1 on the tree height."""
    if k <= 1:
        return 1
    return math.ceil(math.log(k) / math.log(1.0 / y_max)) + 1


def tree_smin(tree: SumTree, model: SpectralModel, exclude_root: bool = False) -> float:
    """Minimum exact overlap magnitude over the tree's node values >= 1.

    With exclude_root=True the root node itself is skipped (its magnitude
    being small only disqualifies the target power, not the recursion).
    """
    values = tree.all_values()
    if exclude_root:
        values = values[1:]
    values = np.unique(values[values >= 1])
    if values.size == 0:
        raise ValueError("tree has no node values >= 1")
    return float(np.min(np.abs(amplitude_series(model, values))))


def dump_tree(tree: SumTree) -> str:
    """Stable text listing: one 'height,position,value,trivial' row per node."""
    lines = ["height,position,value,trivial"]
    for node in tree.nodes():
        lines.append(
            f"{node.height},{node.position},{node.value},{int(node.trivial)}"
        )
    return "\n".join(lines) + "\n"


def parse_tree_dump(text: str, leaf_cutoff: int = 1) -> SumTree:
    """Rebuild a tree from its dump; the inverse of :func:`dump_tree`."""
    rows = []
    for line in text.strip().splitlines():
        if line.startswith("height") or not line.strip():
            continue
        h_s, p_s, v_s, t_s = line.split(",")
        rows.append((int(h_s), int(p_s), int(v_s), int(t_s)))
    if not rows:
        raise ValueError("empty tree dump")
    by_height: dict[int, list[tuple[int, int]]] = {}
    for h, p, v, _ in rows:
        by_height.setdefault(h, []).append((p, v))
    h_max = max(by_height)
    levels = []
    masks = []
    for h in range(h_max + 1):
        entries = sorted(by_height.get(h, []))
        positions = {p for p, _ in entries}
        levels.append([v for _, v in entries])
        if h < h_max:
            child_positions = {p for p, _ in by_height.get(h + 1, [])}
            masks.append([(2 * p - 1) in child_positions for p in sorted(positions)])
        else:
            masks.append([False] * len(entries))
    tree = SumTree(levels, masks, leaf_cutoff=leaf_cutoff)
    tree.validate()
    return tree
