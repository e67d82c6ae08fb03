"""Immutable node-classification graphs and structural edit operations.

A :class:`Graph` bundles topology (undirected, simple), a dense feature
matrix, integer labels, and train/test masks.  All arrays are frozen at
construction so graphs can be shared freely across threads; every operation
in this module is a pure function returning new values.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import InputError

NODE = "node"
EDGE = "edge"
FEATURE = "feature"
REQUEST_KINDS = (NODE, EDGE, FEATURE)

#: Region policies.  "exact" covers every node whose k-step propagated
#: features can change: node removals reach k+1 hops because deleting a node
#: also changes its neighbors' degrees, which the normalized propagation of
#: any node within k hops of those neighbors consumes.  "tight" stops at k
#: hops of the removed nodes (the feature-only receptive-field reading) and
#: understates that degree ripple.
REGION_POLICIES = ("exact", "tight")


def normalize_edge(u: int, v: int) -> tuple[int, int]:
    """Return the canonical (low, high) form of an undirected edge."""
    u, v = int(u), int(v)
    return (u, v) if u < v else (v, u)


class Graph:
    """Undirected graph with node features, labels and a train/test split.

    Parameters
    ----------
    edges
        Iterable of node pairs.  Pairs are stored unordered; duplicates are
        rejected, self-loops are rejected.
    features
        Dense ``(num_nodes, F)`` real matrix.
    labels
        Integer class index per node, values in ``[0, C)``.
    train_mask, test_mask
        Disjoint boolean vectors of length ``num_nodes``.  Their union may
        leave some nodes unused.
    """

    def __init__(self, num_nodes, edges, features, labels, train_mask, test_mask):
        self.num_nodes = int(num_nodes)
        if self.num_nodes < 0:
            raise InputError("num_nodes must be nonnegative")

        edge_set = set()
        for u, v in edges:
            if u == v:
                raise InputError(f"self-loop ({u},{v}) not allowed")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise InputError(f"edge ({u},{v}) references a node outside [0,{self.num_nodes})")
            e = normalize_edge(u, v)
            if e in edge_set:
                raise InputError(f"duplicate edge ({u},{v})")
            edge_set.add(e)
        self.edges = frozenset(edge_set)

        self.features = np.ascontiguousarray(features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise InputError(
                f"features must be ({self.num_nodes}, F), got {self.features.shape}"
            )
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.shape != (self.num_nodes,):
            raise InputError("labels must be a vector of length num_nodes")
        if self.num_nodes and self.labels.min() < 0:
            raise InputError("labels must be nonnegative class indices")
        self.train_mask = np.asarray(train_mask, dtype=bool)
        self.test_mask = np.asarray(test_mask, dtype=bool)
        for name, mask in (("train_mask", self.train_mask), ("test_mask", self.test_mask)):
            if mask.shape != (self.num_nodes,):
                raise InputError(f"{name} must be a boolean vector of length num_nodes")
        if np.any(self.train_mask & self.test_mask):
            raise InputError("train_mask and test_mask must be disjoint")

        for arr in (self.features, self.labels, self.train_mask, self.test_mask):
            arr.setflags(write=False)

    # -- derived views -------------------------------------------------

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as a sorted ``(E, 2)`` int array (canonical order)."""
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.edges), dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.num_nodes else 0

    @cached_property
    def train_nodes(self) -> np.ndarray:
        idx = np.flatnonzero(self.train_mask)
        idx.setflags(write=False)
        return idx

    @cached_property
    def test_nodes(self) -> np.ndarray:
        idx = np.flatnonzero(self.test_mask)
        idx.setflags(write=False)
        return idx

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Adjacency lists, neighbor ids ascending."""
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edge_array:
            adj[u].append(int(v))
            adj[v].append(int(u))
        return tuple(tuple(sorted(a)) for a in adj)

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbors], dtype=np.int64)

    def with_masks(self, train_mask, test_mask) -> "Graph":
        """Same graph with a different train/test split."""
        return Graph(self.num_nodes, self.edges, self.features, self.labels, train_mask, test_mask)

    def has_edge(self, u: int, v: int) -> bool:
        return normalize_edge(u, v) in self.edges

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_mask, other.train_mask)
            and np.array_equal(self.test_mask, other.test_mask)
        )

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return (
            f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
            f"num_features={self.num_features}, num_classes={self.num_classes})"
        )


@dataclass(frozen=True)
class UnlearnRequest:
    """A deletion request: a node set, an edge set, or a feature-owner set.

    Exactly the payload matching ``kind`` may be non-empty; an empty payload
    denotes the no-op request of that kind.
    """

    kind: str
    node_ids: frozenset = frozenset()
    edge_ids: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise InputError(f"unknown request kind {self.kind!r}")
        object.__setattr__(self, "node_ids", frozenset(int(v) for v in self.node_ids))
        object.__setattr__(
            self, "edge_ids", frozenset(normalize_edge(u, v) for u, v in self.edge_ids)
        )
        if self.kind == EDGE:
            if self.node_ids:
                raise InputError("edge request must not carry node ids")
        elif self.edge_ids:
            raise InputError(f"{self.kind} request must not carry edge ids")

    @classmethod
    def nodes(cls, node_ids: Iterable[int]) -> "UnlearnRequest":
        return cls(NODE, node_ids=frozenset(node_ids))

    @classmethod
    def edges(cls, edge_ids: Iterable[tuple[int, int]]) -> "UnlearnRequest":
        return cls(EDGE, edge_ids=frozenset(tuple(e) for e in edge_ids))

    @classmethod
    def features(cls, node_ids: Iterable[int]) -> "UnlearnRequest":
        return cls(FEATURE, node_ids=frozenset(node_ids))

    @property
    def is_empty(self) -> bool:
        return not (self.node_ids or self.edge_ids)

    def validate(self, graph: Graph) -> None:
        """Raise :class:`InputError` unless every referenced element exists."""
        for v in self.node_ids:
            if not 0 <= v < graph.num_nodes:
                raise InputError(f"request references unknown node {v}")
        for e in self.edge_ids:
            if e not in graph.edges:
                raise InputError(f"request references missing edge {e}")


@dataclass(frozen=True)
class InfluencedRegion:
    """Nodes touched by a request: removed outright vs. structurally influenced.

    ``directly_removed`` holds training nodes whose loss terms vanish;
    ``influenced`` holds nodes that stay in the graph but whose prediction
    may change.  The two sets are disjoint by construction.
    """

    directly_removed: frozenset
    influenced: frozenset

    def __post_init__(self):
        if self.directly_removed & self.influenced:
            raise InputError("directly_removed and influenced must be disjoint")

    @property
    def all_nodes(self) -> frozenset:
        return self.directly_removed | self.influenced


def normalized_adjacency(graph: Graph, add_self_loops: bool = False) -> sp.csr_matrix:
    """Degree-normalized adjacency ``D^(-1/2) A D^(-1/2)`` as sparse CSR.

    Entries are ``1/sqrt(d_i d_j)`` on edges (and the diagonal when
    ``add_self_loops``, with the loop counted in the degree).  Rows and
    columns of zero-degree nodes are all zero.
    """
    n = graph.num_nodes
    ea = graph.edge_array
    rows = np.concatenate([ea[:, 0], ea[:, 1]])
    cols = np.concatenate([ea[:, 1], ea[:, 0]])
    if add_self_loops:
        diag = np.arange(n)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
    data = np.ones(rows.shape[0], dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = 1.0 / np.sqrt(deg)
    inv_sqrt[~np.isfinite(inv_sqrt)] = 0.0
    d_half = sp.diags(inv_sqrt)
    out = (d_half @ adj @ d_half).tocsr()
    out.sort_indices()
    return out


def k_hop_neighbors(graph: Graph, node: int, k: int) -> frozenset:
    """Nodes at shortest-path distance 1..k from ``node`` (seed excluded)."""
    if not 0 <= node < graph.num_nodes:
        raise InputError(f"unknown node id {node}")
    if k < 0:
        raise InputError("k must be nonnegative")
    if k == 0:
        return frozenset()
    seen = {int(node)}
    frontier = deque([(int(node), 0)])
    out = set()
    adj = graph.neighbors
    while frontier:
        u, d = frontier.popleft()
        if d == k:
            continue
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                out.add(w)
                frontier.append((w, d + 1))
    return frozenset(out)


def _multi_source_ball(graph: Graph, sources, k: int) -> set:
    """Nodes within distance ``k`` of any source, sources included.

    Equals the union of the per-source k-hop balls, in one BFS pass.
    """
    seen = {int(v) for v in sources}
    frontier = deque((v, 0) for v in seen)
    adj = graph.neighbors
    while frontier:
        u, d = frontier.popleft()
        if d == k:
            continue
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                frontier.append((w, d + 1))
    return seen


def influenced_region(
    graph: Graph, request: UnlearnRequest, k: int, policy: str = "exact"
) -> InfluencedRegion:
    """Compute the influenced region of a request for a depth-``k`` model.

    All hop distances are measured on the original graph, which covers every
    node whose receptive field contained a deleted element.  The default
    ``"exact"`` policy guarantees that nodes outside the region keep
    identical k-step propagated features after the deletion; ``"tight"``
    limits node requests to ``k`` hops, which ignores the one-hop degree
    ripple of a node removal.
    """
    request.validate(graph)
    if policy not in REGION_POLICIES:
        raise InputError(f"unknown region policy {policy!r}")
    if k < 0:
        raise InputError("k must be nonnegative")

    if request.kind == NODE:
        hops = k if policy == "tight" else k + 1
        influenced = _multi_source_ball(graph, request.node_ids, hops)
        influenced -= request.node_ids
        removed_training = frozenset(
            v for v in request.node_ids if graph.train_mask[v]
        )
        return InfluencedRegion(removed_training, frozenset(influenced))

    if request.kind == EDGE:
        endpoints = {v for e in request.edge_ids for v in e}
        influenced = _multi_source_ball(graph, endpoints, k)
        return InfluencedRegion(frozenset(), frozenset(influenced))

    # feature revocation: owners stay in the graph and count as influenced
    influenced = _multi_source_ball(graph, request.node_ids, k)
    return InfluencedRegion(frozenset(), frozenset(influenced))


def apply_request_with_map(graph: Graph, request: UnlearnRequest) -> tuple[Graph, np.ndarray]:
    """Apply a request and return ``(remaining_graph, node_map)``.

    ``node_map[old_id]`` is the node's id in the remaining graph, or ``-1``
    for deleted nodes.  Only node requests re-index; for edge and feature
    requests the map is the identity.
    """
    request.validate(graph)
    identity = np.arange(graph.num_nodes, dtype=np.int64)

    if request.kind == NODE:
        keep = np.setdiff1d(identity, np.fromiter(request.node_ids, dtype=np.int64, count=len(request.node_ids)))
        node_map = np.full(graph.num_nodes, -1, dtype=np.int64)
        node_map[keep] = np.arange(keep.size)
        new_edges = [
            (node_map[u], node_map[v])
            for u, v in graph.edge_array
            if node_map[u] >= 0 and node_map[v] >= 0
        ]
        remaining = Graph(
            keep.size,
            new_edges,
            graph.features[keep],
            graph.labels[keep],
            graph.train_mask[keep],
            graph.test_mask[keep],
        )
        return remaining, node_map

    if request.kind == EDGE:
        remaining = Graph(
            graph.num_nodes,
            graph.edges - request.edge_ids,
            graph.features,
            graph.labels,
            graph.train_mask,
            graph.test_mask,
        )
        return remaining, identity

    features = graph.features.copy()
    if request.node_ids:
        rows = np.fromiter(request.node_ids, dtype=np.int64, count=len(request.node_ids))
        features[rows] = 0.0
    remaining = Graph(
        graph.num_nodes,
        graph.edges,
        features,
        graph.labels,
        graph.train_mask,
        graph.test_mask,
    )
    return remaining, identity


def apply_request(graph: Graph, request: UnlearnRequest) -> Graph:
    """The remaining graph after deleting the requested elements."""
    return apply_request_with_map(graph, request)[0]
