"""Tree storage and the bucket partition of its nodes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TreeNode:
    __slots__ = ("id", "pose", "covs", "q", "cost", "parent", "t", "control", "label", "bucket")

    def __init__(self, id, pose, covs, q, cost, parent, t, control):
        self.id = id
        self.pose = pose  # (N, 3)
        self.covs = covs  # (M, 2, 2)
        self.q = q  # automaton state
        self.cost = cost
        self.parent = parent
        self.t = t
        self.control = control  # primitive indices that produced this node
        self.label = None  # cached label, filled on first use
        self.bucket = -1

    def __repr__(self) -> str:
        return f"TreeNode(id={self.id}, q={self.q}, cost={self.cost:.3f}, t={self.t})"


@dataclass
class BucketIndex:
    """Partition of nodes by quantized poses and automaton state."""

    quantum: float = 0.1
    angle_bins: int = 8
    keys: dict = field(default_factory=dict)
    members: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def key(self, pose: np.ndarray, q: int) -> tuple:
        cells = []
        width = 2.0 * math.pi / self.angle_bins
        for x, y, th in pose:
            cells.append((
                math.floor(x / self.quantum + 1e-9),
                math.floor(y / self.quantum + 1e-9),
                int(math.floor((th + math.pi) / width + 1e-9)) % self.angle_bins,
            ))
        return (tuple(cells), q)

    def add(self, node: TreeNode) -> tuple[int, bool]:
        """Insert ``node``; returns its bucket index and whether the bucket is new."""
        k = self.key(node.pose, node.q)
        idx = self.keys.get(k)
        created = idx is None
        if created:
            idx = len(self.members)
            self.keys[k] = idx
            self.members.append([])
            self.states.append(node.q)
        self.members[idx].append(node.id)
        node.bucket = idx
        return idx, created

    def __len__(self) -> int:
        return len(self.members)


class Tree:
    def __init__(self):
        self.nodes: list[TreeNode] = []
        self.children: list[list[int]] = []

    def add(self, node: TreeNode) -> int:
        node.id = len(self.nodes)
        self.nodes.append(node)
        self.children.append([])
        if node.parent is not None:
            self.children[node.parent].append(node.id)
        return node.id

    def path(self, node_id: int) -> list[int]:
        out = []
        k = node_id
        while k is not None:
            out.append(k)
            k = self.nodes[k].parent
        return out[::-1]

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, k: int) -> TreeNode:
        return self.nodes[k]
