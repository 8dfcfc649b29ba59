"""Immutable attributed transaction graph, TSV loading and neighbor sampling.

Nodes are dense integers ``0..N-1``. Each undirected edge owns exactly one row of
edge features and appears in the adjacency of both endpoints with the same edge
index. Neighbor lists are kept sorted by neighbor id so every traversal and
reduction happens in a fixed order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DanglingEndpointError,
    DimMismatchError,
    DuplicateEdgeError,
    GraphError,
    NonFiniteError,
    OutOfRangeError,
    SelfLoopError,
)

ROLES = ("M", "C", "B")
_MISSING_REGION = "-"

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TransactionGraph:
    """Undirected payment graph with node features ``X`` and edge features ``Z``.

    Build instances with :meth:`from_edges` (or :func:`load_graph`); the raw
    constructor performs no validation.
    """

    node_features: np.ndarray  # (N, P)
    edges: np.ndarray  # (E, 2), one row per undirected edge
    edge_features: np.ndarray  # (E, D)
    indptr: np.ndarray  # (N + 1,)
    indices: np.ndarray  # neighbor ids, ascending within each node
    edge_ids: np.ndarray  # edge row for each adjacency entry
    roles: tuple[str, ...]
    regions: tuple[str | None, ...]
    external_ids: tuple[str, ...]
    edge_feature_sums: np.ndarray = field(repr=False)  # (N, D): sum of Z over incident edges

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, i: int) -> int:
        self._check_node(i)
        return int(self.indptr[i + 1] - self.indptr[i])

    def merchants(self) -> np.ndarray:
        """Dense ids of nodes acting as merchants (role ``M`` or ``B``)."""
        return np.array([i for i, r in enumerate(self.roles) if r != "C"], dtype=np.int64)

    def id_index(self) -> dict[str, int]:
        return {ext: i for i, ext in enumerate(self.external_ids)}

    def _check_node(self, i) -> None:
        if not (0 <= int(i) < self.node_count):
            raise OutOfRangeError(f"node {i} out of range for graph with {self.node_count} nodes")

    @classmethod
    def from_edges(
        cls,
        node_features,
        edges,
        edge_features=None,
        roles: Sequence[str] | None = None,
        regions: Sequence[str | None] | None = None,
        external_ids: Sequence[str] | None = None,
    ) -> "TransactionGraph":
        x = np.asarray(node_features, dtype=np.float64)
        if x.ndim != 2:
            raise DimMismatchError(f"node features must be 2-D, got shape {x.shape}")
        n = x.shape[0]
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        m = e.shape[0]
        if edge_features is None:
            z = np.zeros((m, 0))
        else:
            z = np.asarray(edge_features, dtype=np.float64)
            if z.ndim == 1 and m == 0:
                z = z.reshape(0, 0)
            if z.ndim != 2 or z.shape[0] != m:
                raise DimMismatchError(f"edge features shape {z.shape} does not match {m} edges")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("node features contain NaN or Inf")
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("edge features contain NaN or Inf")
        if m:
            bad = (e < 0) | (e >= n)
            if bad.any():
                row = int(np.argmax(bad.any(axis=1)))
                raise DanglingEndpointError(f"edge {row} ({e[row, 0]}, {e[row, 1]}) references unknown node")
            loops = e[:, 0] == e[:, 1]
            if loops.any():
                raise SelfLoopError(f"self-loop at node {e[np.argmax(loops), 0]}")
            lo = np.minimum(e[:, 0], e[:, 1])
            hi = np.maximum(e[:, 0], e[:, 1])
            key = lo * n + hi
            uniq, counts = np.unique(key, return_counts=True)
            if (counts > 1).any():
                k = int(uniq[np.argmax(counts > 1)])
                raise DuplicateEdgeError(f"duplicate undirected edge ({k // n}, {k % n})")

        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        eids = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((cols, rows))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])

        zsum = np.zeros((n, z.shape[1]))
        if m:
            np.add.at(zsum, e[:, 0], z)
            np.add.at(zsum, e[:, 1], z)

        roles = tuple(roles) if roles is not None else ("M",) * n
        regions = tuple(regions) if regions is not None else (None,) * n
        external_ids = tuple(external_ids) if external_ids is not None else tuple(str(i) for i in range(n))
        if not (len(roles) == len(regions) == len(external_ids) == n):
            raise DimMismatchError("roles, regions and external ids must have one entry per node")
        unknown = set(roles) - set(ROLES)
        if unknown:
            raise GraphError(f"unknown node roles {sorted(unknown)}")

        return cls(
            node_features=_frozen(x),
            edges=_frozen(e),
            edge_features=_frozen(z),
            indptr=_frozen(indptr),
            indices=_frozen(cols[order]),
            edge_ids=_frozen(eids[order]),
            roles=roles,
            regions=regions,
            external_ids=external_ids,
            edge_feature_sums=_frozen(zsum),
        )


def neighbors(graph: TransactionGraph, i: int) -> list[tuple[int, int]]:
    """All ``(neighbor, edge index)`` pairs of ``i`` in ascending neighbor order."""
    graph._check_node(i)
    lo, hi = graph.indptr[i], graph.indptr[i + 1]
    return [(int(j), int(k)) for j, k in zip(graph.indices[lo:hi], graph.edge_ids[lo:hi])]


# --- deterministic sampling -------------------------------------------------

def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    x = x ^ (x >> _U64(30))
    x = x * _U64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> _U64(27))
    x = x * _U64(0x94D049BB133111EB)
    return x ^ (x >> _U64(31))


def derive_seed(seed: int, *salt: int) -> int:
    """Stable 63-bit child seed from ``seed`` and integer salts."""
    x = np.array([seed & _MASK64], dtype=_U64)
    for s in salt:
        x = _mix64(x ^ _mix64(np.array([(s + 0x9E3779B97F4A7C15) & _MASK64], dtype=_U64)))
    return int(_mix64(x)[0] >> _U64(1))


def _sample_keys(seed: int, nodes: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    s = _mix64(np.array([seed & _MASK64], dtype=_U64))
    k = _mix64(s ^ (nodes.astype(_U64) * _U64(0x9E3779B97F4A7C15)))
    return _mix64(k ^ (nbrs.astype(_U64) + _U64(0xD1B54A32D192ED03)))


def sample_rows(graph: TransactionGraph, nodes: np.ndarray, fanout: int, seed: int):
    """Vectorized :func:`sample_neighbors` for many nodes.

    Each neighbor gets a pseudo-random key hashed from ``(seed, node, neighbor)``
    and the ``fanout`` smallest keys are kept, which is a uniform subset without
    replacement. Returns ``(counts, neighbor_ids, edge_ids)`` with each node's
    picks contiguous and ascending by neighbor id.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= graph.node_count):
        raise OutOfRangeError("sampled node out of range")
    starts = graph.indptr[nodes]
    deg = graph.indptr[nodes + 1] - starts
    total = int(deg.sum())
    seg = np.repeat(np.arange(nodes.size), deg)
    offsets = np.zeros(nodes.size + 1, dtype=np.int64)
    np.cumsum(deg, out=offsets[1:])
    pos = starts[seg] + (np.arange(total) - offsets[seg])
    nbr = graph.indices[pos]
    eid = graph.edge_ids[pos]
    if total == 0 or deg.max() <= fanout:
        return deg, nbr, eid

    keys = _sample_keys(seed, nodes[seg], nbr)
    order = np.lexsort((keys, seg))
    rank = np.empty(total, dtype=np.int64)
    rank[order] = np.arange(total) - offsets[seg[order]]
    keep = rank < fanout
    return np.minimum(deg, fanout), nbr[keep], eid[keep]


def sample_neighbors(graph: TransactionGraph, i: int, fanout: int, seed: int) -> list[tuple[int, int]]:
    """Up to ``fanout`` neighbors of ``i``, uniform without replacement.

    Pure function of ``(graph, i, fanout, seed)``; returns every neighbor when
    ``degree(i) <= fanout``.
    """
    graph._check_node(i)
    _, nbr, eid = sample_rows(graph, np.array([i]), fanout, seed)
    return [(int(j), int(k)) for j, k in zip(nbr, eid)]


# --- TSV persistence --------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def _parse_floats(cells: list[str], where: str) -> list[float]:
    try:
        vals = [float(c) for c in cells]
    except ValueError as exc:
        raise GraphError(f"{where}: {exc}") from None
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteError(f"{where}: non-finite feature value")
    return vals


def load_graph(node_path, edge_path) -> TransactionGraph:
    """Read ``nodes.tsv`` / ``edges.tsv``.

    Node rows are ``id role region f_1..f_P``; edge rows are ``src dst z_1..z_D``
    using external ids. Dense ids follow node-file order. Lines starting with
    ``#`` are comments.
    """
    node_path, edge_path = Path(node_path), Path(edge_path)
    ext_ids: list[str] = []
    roles: list[str] = []
    regions: list[str | None] = []
    feats: list[list[float]] = []
    index: dict[str, int] = {}
    width = None
    for lineno, cells in _data_lines(node_path):
        where = f"{node_path.name}:{lineno}"
        if len(cells) < 3:
            raise DimMismatchError(f"{where}: expected id, role, region columns")
        ext, role, region = cells[0], cells[1], cells[2]
        if role not in ROLES:
            raise GraphError(f"{where}: role must be one of {ROLES}, got {role!r}")
        if ext in index:
            raise GraphError(f"{where}: duplicate node id {ext!r}")
        row = _parse_floats(cells[3:], where)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DimMismatchError(f"{where}: {len(row)} features, expected {width}")
        index[ext] = len(ext_ids)
        ext_ids.append(ext)
        roles.append(role)
        regions.append(None if region == _MISSING_REGION else region)
        feats.append(row)

    pairs: list[tuple[int, int]] = []
    zrows: list[list[float]] = []
    zwidth = None
    for lineno, cells in _data_lines(edge_path):
        where = f"{edge_path.name}:{lineno}"
        if len(cells) < 2:
            raise DimMismatchError(f"{where}: expected src, dst columns")
        try:
            a, b = index[cells[0]], index[cells[1]]
        except KeyError as exc:
            raise DanglingEndpointError(f"{where}: unknown node {exc.args[0]!r}") from None
        row = _parse_floats(cells[2:], where)
        if zwidth is None:
            zwidth = len(row)
        elif len(row) != zwidth:
            raise DimMismatchError(f"{where}: {len(row)} edge features, expected {zwidth}")
        pairs.append((a, b))
        zrows.append(row)

    x = np.array(feats, dtype=np.float64).reshape(len(feats), width or 0)
    z = np.array(zrows, dtype=np.float64).reshape(len(zrows), zwidth or 0)
    return TransactionGraph.from_edges(x, pairs, z, roles, regions, ext_ids)


def save_graph(graph: TransactionGraph, directory) -> dict[str, Path]:
    """Write ``nodes.tsv``, ``edges.tsv`` and the ``idmap.tsv`` sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"nodes": d / "nodes.tsv", "edges": d / "edges.tsv", "idmap": d / "idmap.tsv"}
    with open(paths["nodes"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#id\trole\tregion" + "".join(f"\tf_{k + 1}" for k in range(graph.node_dim)) + "\n")
        for i in range(graph.node_count):
            region = graph.regions[i] if graph.regions[i] is not None else _MISSING_REGION
            cells = [graph.external_ids[i], graph.roles[i], region]
            cells += [_fmt(v) for v in graph.node_features[i]]
            fh.write("\t".join(cells) + "\n")
    with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#src\tdst" + "".join(f"\tz_{k + 1}" for k in range(graph.edge_dim)) + "\n")
        ext = graph.external_ids
        for (a, b), z in zip(graph.edges, graph.edge_features):
            fh.write("\t".join([ext[a], ext[b]] + [_fmt(v) for v in z]) + "\n")
    write_idmap(graph, paths["idmap"])
    return paths


def write_idmap(graph: TransactionGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#external_id\tdense_id\n")
        for i, ext in enumerate(graph.external_ids):
            fh.write(f"{ext}\t{i}\n")


def read_idmap(path) -> dict[str, int]:
    out = {}
    for lineno, cells in _data_lines(Path(path)):
        if len(cells) != 2:
            raise DimMismatchError(f"{os.fspath(path)}:{lineno}: expected 2 columns")
        out[cells[0]] = int(cells[1])
    return out
