"""Dataset ingestion, synthetic graph generation, and request files.

Citation datasets use the classic two-file text layout: ``<name>.content``
with ``<node_id> <f_1 ... f_F> <label>`` rows (binary feature tokens) and
``<name>.cites`` with ``<id_a> <id_b>`` rows.  Graphs with non-binary
features (e.g. generated ones) round-trip through a JSON container instead.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .graph import EDGE, FEATURE, NODE, Graph, UnlearnRequest, normalize_edge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetDescriptor:
    """Where a graph comes from: citation files, a JSON graph, or a generator.

    Exactly one source must be given.  ``split_fraction`` and ``split_seed``
    determine the train/test masks for citation files and generated graphs;
    JSON graphs carry their own masks.
    """

    name: str = "dataset"
    content_path: str | None = None
    cites_path: str | None = None
    graph_path: str | None = None
    blocks: int | None = None
    nodes_per_block: int | None = None
    p_intra: float | None = None
    p_inter: float | None = None
    feature_dim: int | None = None
    seed: int = 0
    split_fraction: float = 0.9
    split_seed: int = 0

    def __post_init__(self):
        sources = sum(
            [
                self.content_path is not None or self.cites_path is not None,
                self.graph_path is not None,
                self.blocks is not None,
            ]
        )
        if sources != 1:
            raise InputError(
                "descriptor needs exactly one of citation paths, a graph_path, "
                "or a generator spec"
            )
        if self.content_path is not None or self.cites_path is not None:
            if self.content_path is None or self.cites_path is None:
                raise InputError("both content_path and cites_path are required")
        if not 0.0 < self.split_fraction < 1.0:
            raise InputError("split_fraction must lie strictly between 0 and 1")

    @property
    def is_generated(self) -> bool:
        return self.blocks is not None


def split_masks(num_nodes: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test masks: a seeded permutation cut at ``fraction``.

    Both sides are kept nonempty whenever ``num_nodes >= 2``.
    """
    if not 0.0 < fraction < 1.0:
        raise InputError("split fraction must lie strictly between 0 and 1")
    if num_nodes < 2:
        raise InputError("need at least two nodes to split")
    n_train = int(round(fraction * num_nodes))
    n_train = min(max(n_train, 1), num_nodes - 1)
    perm = np.random.default_rng(seed).permutation(num_nodes)
    train = np.zeros(num_nodes, dtype=bool)
    test = np.zeros(num_nodes, dtype=bool)
    train[perm[:n_train]] = True
    test[perm[n_train:]] = True
    return train, test


def random_split(graph: Graph, fraction: float, seed: int) -> Graph:
    """Same graph with freshly drawn train/test masks."""
    train, test = split_masks(graph.num_nodes, fraction, seed)
    return graph.with_masks(train, test)


def load_citation_dataset(descriptor: DatasetDescriptor) -> Graph:
    """Load a content/cites file pair into a :class:`Graph`.

    Nodes are indexed by first appearance in the content file; label strings
    map to class indices in sorted order, so indices are stable across runs.
    Citation pairs are deduplicated as undirected edges; self-citations and
    pairs naming unknown ids are dropped (the drop count is logged).
    """
    if descriptor.content_path is None:
        raise InputError("descriptor has no citation files")
    content_path = Path(descriptor.content_path)
    cites_path = Path(descriptor.cites_path)

    ids: dict[str, int] = {}
    feature_rows: list[list[float]] = []
    label_strings: list[str] = []
    width = None
    with open(content_path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ParseError("expected <id> <features...> <label>", content_path, lineno)
            node_id, label = tokens[0], tokens[-1]
            if node_id in ids:
                raise ParseError(f"duplicate node id {node_id!r}", content_path, lineno)
            row = []
            for token in tokens[1:-1]:
                if token == "0":
                    row.append(0.0)
                elif token == "1":
                    row.append(1.0)
                else:
                    raise ParseError(
                        f"feature token {token!r} is not 0 or 1", content_path, lineno
                    )
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(
                    f"expected {width} feature tokens, found {len(row)}", content_path, lineno
                )
            ids[node_id] = len(ids)
            feature_rows.append(row)
            label_strings.append(label)
    if not ids:
        raise ParseError("content file is empty", content_path, None)

    classes = {label: idx for idx, label in enumerate(sorted(set(label_strings)))}
    labels = np.array([classes[s] for s in label_strings], dtype=np.int64)

    edges = set()
    dropped = 0
    with open(cites_path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise ParseError("expected <id_a> <id_b>", cites_path, lineno)
            a, b = tokens
            if a not in ids or b not in ids:
                dropped += 1
                continue
            u, v = ids[a], ids[b]
            if u == v:
                dropped += 1
                continue
            edges.add(normalize_edge(u, v))
    if dropped:
        logger.warning("%s: dropped %d self- or unknown-id citations", cites_path, dropped)

    num_nodes = len(ids)
    train, test = split_masks(num_nodes, descriptor.split_fraction, descriptor.split_seed)
    return Graph(num_nodes, edges, np.array(feature_rows), labels, train, test)


def save_citation_dataset(graph: Graph, content_path, cites_path) -> None:
    """Write a graph back to the content/cites text layout.

    Requires binary features.  Node ids are written as dense indices and
    labels as zero-padded strings whose sorted order matches class order, so
    reloading with the same split settings reproduces the graph exactly.
    """
    if not np.isin(graph.features, (0.0, 1.0)).all():
        raise InputError("citation format requires binary features")
    with open(content_path, "w") as handle:
        for i in range(graph.num_nodes):
            feats = " ".join(str(int(x)) for x in graph.features[i])
            handle.write(f"{i} {feats} L{graph.labels[i]:04d}\n")
    with open(cites_path, "w") as handle:
        for u, v in graph.edge_array:
            handle.write(f"{u} {v}\n")


def gen_sbm(
    blocks: int,
    nodes_per_block: int,
    p_intra: float,
    p_inter: float,
    feature_dim: int,
    seed: int = 0,
    split_fraction: float = 0.9,
    split_seed: int = 0,
) -> Graph:
    """Stochastic-block-model graph with block labels as classes.

    Each unordered pair is an edge independently with probability ``p_intra``
    inside a block and ``p_inter`` across blocks.  Features carry a one-hot
    block signal of width ``feature_dim // blocks`` plus uniform noise in
    ``[-0.1, 0.1]``.  Fully deterministic per seed.
    """
    if blocks < 2:
        raise InputError("need at least two blocks")
    if nodes_per_block < 1:
        raise InputError("nodes_per_block must be positive")
    if not 0.0 <= p_inter <= p_intra <= 1.0:
        raise InputError("need 0 <= p_inter <= p_intra <= 1")
    if feature_dim < blocks:
        raise InputError("feature_dim must be at least the number of blocks")

    num_nodes = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks, dtype=np.int64), nodes_per_block)
    rng = np.random.default_rng(seed)

    iu, ju = np.triu_indices(num_nodes, k=1)
    intra = labels[iu] == labels[ju]
    thresholds = np.where(intra, p_intra, p_inter)
    chosen = rng.random(iu.size) < thresholds
    edges = list(zip(iu[chosen].tolist(), ju[chosen].tolist()))

    width = feature_dim // blocks
    features = rng.uniform(-0.1, 0.1, size=(num_nodes, feature_dim))
    for c in range(blocks):
        rows = slice(c * nodes_per_block, (c + 1) * nodes_per_block)
        features[rows, c * width : (c + 1) * width] += 1.0

    train, test = split_masks(num_nodes, split_fraction, split_seed)
    return Graph(num_nodes, edges, features, labels, train, test)


def load_dataset(descriptor: DatasetDescriptor) -> Graph:
    """Materialize a descriptor: load files or generate an SBM."""
    if descriptor.graph_path is not None:
        return load_graph_json(descriptor.graph_path)
    if descriptor.is_generated:
        return gen_sbm(
            blocks=descriptor.blocks,
            nodes_per_block=descriptor.nodes_per_block,
            p_intra=descriptor.p_intra,
            p_inter=descriptor.p_inter,
            feature_dim=descriptor.feature_dim,
            seed=descriptor.seed,
            split_fraction=descriptor.split_fraction,
            split_seed=descriptor.split_seed,
        )
    return load_citation_dataset(descriptor)


def save_graph_json(graph: Graph, path) -> None:
    """Lossless JSON container for graphs of any feature dtype."""
    payload = {
        "num_nodes": graph.num_nodes,
        "edges": graph.edge_array.tolist(),
        "features": graph.features.tolist(),
        "labels": graph.labels.tolist(),
        "train_mask": graph.train_mask.astype(int).tolist(),
        "test_mask": graph.test_mask.astype(int).tolist(),
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, separators=(",", ":"), sort_keys=True)
        handle.write("\n")


def load_graph_json(path) -> Graph:
    with open(path) as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON graph: {exc}", path, exc.lineno) from exc
    try:
        return Graph(
            payload["num_nodes"],
            [tuple(e) for e in payload["edges"]],
            np.array(payload["features"], dtype=np.float64),
            np.array(payload["labels"], dtype=np.int64),
            np.array(payload["train_mask"], dtype=bool),
            np.array(payload["test_mask"], dtype=bool),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", path, None) from exc


def save_request(request: UnlearnRequest, path) -> None:
    """Write a request file: a kind header, then one element per line."""
    with open(path, "w") as handle:
        handle.write(f"{request.kind}\n")
        if request.kind == EDGE:
            for u, v in sorted(request.edge_ids):
                handle.write(f"{u} {v}\n")
        else:
            for v in sorted(request.node_ids):
                handle.write(f"{v}\n")


def load_request(path) -> UnlearnRequest:
    """Parse a request file written by :func:`save_request`."""
    with open(path) as handle:
        lines = [line.strip() for line in handle]
    lines = [(i + 1, line) for i, line in enumerate(lines) if line]
    if not lines:
        raise ParseError("request file is empty", path, None)
    _, kind = lines[0]
    if kind not in (NODE, EDGE, FEATURE):
        raise ParseError(f"header must be node|edge|feature, got {kind!r}", path, lines[0][0])
    nodes = set()
    edges = set()
    for lineno, line in lines[1:]:
        tokens = line.split()
        try:
            if kind == EDGE:
                if len(tokens) != 2:
                    raise ValueError("expected two node ids")
                edges.add((int(tokens[0]), int(tokens[1])))
            else:
                if len(tokens) != 1:
                    raise ValueError("expected one node id")
                nodes.add(int(tokens[0]))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from exc
    if kind == EDGE:
        return UnlearnRequest.edges(edges)
    return UnlearnRequest(kind, node_ids=frozenset(nodes))


def convert_tabular(edges_path, features_path, content_out, cites_out) -> None:
    """Convert an edge list plus feature CSV into the citation layout.

    The CSV rows are ``node_id,f_1,...,f_F,label`` with binary feature
    entries; the edge list has one ``<id_a> <id_b>`` pair per line.
    """
    rows = []
    with open(features_path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) < 3:
                raise ParseError("expected node_id,features...,label", features_path, lineno)
            for token in parts[1:-1]:
                if token.strip() not in ("0", "1"):
                    raise ParseError(
                        f"feature value {token!r} is not 0 or 1", features_path, lineno
                    )
            rows.append((parts[0].strip(), [t.strip() for t in parts[1:-1]], parts[-1].strip()))
    known = {node_id for node_id, _, _ in rows}
    with open(content_out, "w") as handle:
        for node_id, feats, label in rows:
            handle.write(f"{node_id} {' '.join(feats)} {label}\n")
    written = 0
    with open(edges_path) as in_handle, open(cites_out, "w") as out_handle:
        for lineno, raw in enumerate(in_handle, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise ParseError("expected <id_a> <id_b>", edges_path, lineno)
            if tokens[0] not in known or tokens[1] not in known:
                raise ParseError("edge references unknown node", edges_path, lineno)
            out_handle.write(f"{tokens[0]} {tokens[1]}\n")
            written += 1
    logger.info("converted %d nodes and %d edges", len(rows), written)
