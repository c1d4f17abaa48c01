"""Robot bodies as graphs, and the attention masks they induce.

A body is an ordered list of named nodes (one per limb segment, each owning a
few observation and action scalars) plus undirected edges following the
physical structure. The mask consumed by the attention layers is the
adjacency matrix with ones added on the diagonal, so every token attends to
itself and its direct neighbours. Node declaration order fixes token order.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import yaml

__all__ = [
    "NodeSpec",
    "EmbodimentGraph",
    "AttentionMask",
    "Allocation",
    "parse_graph",
    "load_graph",
    "a1_quadruped",
    "adjacency_matrix",
    "build_mask",
    "shortest_path_matrix",
    "diameter",
    "zero_fraction",
    "random_mask",
    "allocate",
    "default_layout",
    "mask_to_text",
    "mask_from_text",
    "graph_fingerprint",
]


@dataclass(frozen=True)
class NodeSpec:
    """One body part: a named token with local observation/action widths."""

    id: int
    name: str
    obs_dim: int
    action_dim: int
    is_root: bool = False


@dataclass(frozen=True)
class EmbodimentGraph:
    """Undirected, connected, simple graph over body nodes.

    ``nodes`` keeps document order (token order); ``edges`` hold 0-based
    index pairs normalised to (low, high). Instances are immutable and
    validated on construction, so every downstream consumer can assume the
    invariants hold.
    """

    nodes: tuple[NodeSpec, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        n = len(nodes)
        if n < 1:
            raise ValueError("graph needs at least one node")
        for i, node in enumerate(nodes):
            if node.id != i:
                raise ValueError(f"node {node.name!r} has id {node.id}, expected {i}")
            if node.obs_dim < 0 or node.action_dim < 0:
                raise ValueError(f"node {node.name!r} has negative dims")
        roots = [node.id for node in nodes if node.is_root]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root node, got {len(roots)}")

        norm = []
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) references a missing node")
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate edge")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(norm))

        if n > 1 and not self._connected():
            raise ValueError("graph is disconnected")

    def _connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        nbrs = self.neighbors()
        while queue:
            for k in nbrs[queue.popleft()]:
                if k not in seen:
                    seen.add(k)
                    queue.append(k)
        return len(seen) == self.n

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> NodeSpec:
        return next(node for node in self.nodes if node.is_root)

    @property
    def obs_width(self) -> int:
        return sum(node.obs_dim for node in self.nodes)

    @property
    def action_width(self) -> int:
        return sum(node.action_dim for node in self.nodes)

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists in node order."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(j)
            out[j].append(i)
        return out


@dataclass(frozen=True)
class AttentionMask:
    """Symmetric n x n binary matrix with unit diagonal."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"mask must be square, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        m = m.astype(np.uint8)
        if (np.diagonal(m) != 1).any():
            raise ValueError("mask diagonal must be all ones")
        if (m != m.T).any():
            raise ValueError("mask must be symmetric")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def nonzeros(self) -> int:
        return int(self.entries.sum())


def parse_graph(document: str) -> EmbodimentGraph:
    """Parse a graph spec document (YAML or JSON) into a validated graph.

    Expected shape::

        nodes:
          - {name: base, obs_dim: 6, action_dim: 0, root: true}
          - {name: hip, obs_dim: 3, action_dim: 1}
        edges:
          - [0, 1]

    Raises ValueError on malformed documents and on graphs violating the
    structural invariants (disconnected, multiple roots, duplicate edges...).
    """
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ValueError(f"unparseable graph spec: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("graph spec must be a mapping with 'nodes' and 'edges'")
    unknown = set(doc) - {"nodes", "edges"}
    if unknown:
        raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
    if "nodes" not in doc or "edges" not in doc:
        raise ValueError("graph spec must define both 'nodes' and 'edges'")
    raw_nodes = doc["nodes"]
    raw_edges = doc["edges"]
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ValueError("'nodes' must be a non-empty array")
    if not isinstance(raw_edges, list):
        raise ValueError("'edges' must be an array of [int, int] pairs")

    nodes = []
    for i, item in enumerate(raw_nodes):
        if not isinstance(item, dict):
            raise ValueError(f"node {i} must be a mapping")
        extra = set(item) - {"name", "obs_dim", "action_dim", "root"}
        if extra:
            raise ValueError(f"node {i} has unknown keys: {sorted(extra)}")
        try:
            name = item["name"]
            obs_dim = item["obs_dim"]
            action_dim = item["action_dim"]
        except KeyError as exc:
            raise ValueError(f"node {i} is missing key {exc}") from exc
        root = item.get("root", False)
        if not isinstance(name, str):
            raise ValueError(f"node {i}: 'name' must be a string")
        if not isinstance(obs_dim, int) or not isinstance(action_dim, int):
            raise ValueError(f"node {i}: dims must be integers")
        if not isinstance(root, bool):
            raise ValueError(f"node {i}: 'root' must be a boolean")
        nodes.append(NodeSpec(i, name, obs_dim, action_dim, root))

    edges = []
    for k, pair in enumerate(raw_edges):
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or not all(isinstance(x, int) for x in pair)
        ):
            raise ValueError(f"edge {k} must be a pair of integers")
        edges.append((pair[0], pair[1]))

    return EmbodimentGraph(tuple(nodes), tuple(edges))


def load_graph(path) -> EmbodimentGraph:
    """Read a graph spec file from disk."""
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def a1_quadruped() -> EmbodimentGraph:
    """Bundled 13-node quadruped fixture: base plus four hip-thigh-calf legs."""
    from importlib import resources

    text = resources.files("bodyattn.data").joinpath("a1_quadruped.json").read_text()
    return parse_graph(text)


def adjacency_matrix(g: EmbodimentGraph) -> np.ndarray:
    """Symmetric 0/1 matrix with zero diagonal; A[i, j] = 1 iff {i, j} is an edge."""
    a = np.zeros((g.n, g.n), dtype=np.uint8)
    for i, j in g.edges:
        a[i, j] = 1
        a[j, i] = 1
    return a


def build_mask(g: EmbodimentGraph) -> AttentionMask:
    """Body-induced mask: adjacency plus unit diagonal."""
    m = adjacency_matrix(g)
    np.fill_diagonal(m, 1)
    return AttentionMask(m)


def shortest_path_matrix(g: EmbodimentGraph) -> np.ndarray:
    """Hop-count distance between every node pair (breadth-first from each node)."""
    n = g.n
    nbrs = g.neighbors()
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    return dist


def diameter(g: EmbodimentGraph) -> int:
    return int(shortest_path_matrix(g).max())


def zero_fraction(m: AttentionMask) -> float:
    """Fraction of zero entries, in [0, 1 - 1/n]."""
    return 1.0 - m.nonzeros / (m.n * m.n)


def random_mask(n: int, zero_fraction: float, seed: int) -> AttentionMask:
    """Random symmetric unit-diagonal mask with roughly the requested sparsity.

    Off-diagonal zeros come in symmetric pairs, so the achievable zero counts
    are the even numbers up to n(n-1); the target zero_fraction * n^2 is
    rounded down to the nearest achievable count. Deterministic given seed.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 <= zero_fraction <= 1.0 - 1.0 / n:
        raise ValueError(f"zero_fraction {zero_fraction} outside [0, 1 - 1/n] for n={n}")
    pairs = math.floor(zero_fraction * (n * n) / 2.0)
    iu = np.triu_indices(n, k=1)
    pairs = min(pairs, iu[0].size)
    rng = np.random.default_rng(seed)
    sel = rng.choice(iu[0].size, size=pairs, replace=False)
    m = np.ones((n, n), dtype=np.uint8)
    r, c = iu[0][sel], iu[1][sel]
    m[r, c] = 0
    m[c, r] = 0
    return AttentionMask(m)


@dataclass(frozen=True)
class Allocation:
    """Where each slice of the flat observation/action vectors lives.

    ``obs_ranges[i]`` is a tuple of (start, stop) half-open index ranges into
    the flat observation vector owned by node i, in layout order; likewise
    ``action_ranges``. Quantities keep their layout order in the flat vector,
    so a node assigned several quantities may own non-contiguous ranges.
    """

    obs_ranges: tuple[tuple[tuple[int, int], ...], ...]
    action_ranges: tuple[tuple[tuple[int, int], ...], ...]
    obs_width: int
    action_width: int

    def node_obs(self, flat: np.ndarray, node: int) -> np.ndarray:
        """Gather node ``node``'s observation slice(s) from a flat vector."""
        parts = [flat[..., a:b] for a, b in self.obs_ranges[node]]
        if len(parts) == 1:
            return parts[0]
        return np.concatenate(parts, axis=-1)

    def place_actions(self, per_node: list[np.ndarray]) -> np.ndarray:
        """Scatter per-node action vectors back into flat layout order."""
        lead = per_node[0].shape[:-1] if per_node else ()
        flat = np.zeros(lead + (self.action_width,))
        for node, ranges in enumerate(self.action_ranges):
            off = 0
            for a, b in ranges:
                flat[..., a:b] = per_node[node][..., off : off + (b - a)]
                off += b - a
        return flat


def _collect(layout, dims, kind: str):
    n = len(dims)
    ranges: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    offset = 0
    for name, width, node in layout:
        if not 0 <= node < n:
            raise ValueError(f"{kind} quantity {name!r} assigned to missing node {node}")
        if width < 0:
            raise ValueError(f"{kind} quantity {name!r} has negative width")
        ranges[node].append((offset, offset + width))
        offset += width
    for node in range(n):
        got = sum(b - a for a, b in ranges[node])
        if got != dims[node]:
            raise ValueError(
                f"{kind} widths for node {node} sum to {got}, expected {dims[node]}"
            )
    return tuple(tuple(r) for r in ranges), offset


def allocate(g: EmbodimentGraph, observation_layout, action_layout) -> Allocation:
    """Map named quantities onto nodes and flat-vector index ranges.

    Each layout entry is (quantity name, width, node id). Entry order defines
    the flat vector order; per-node widths must sum exactly to the node's
    declared obs_dim / action_dim.
    """
    obs_ranges, obs_width = _collect(
        observation_layout, [node.obs_dim for node in g.nodes], "observation"
    )
    act_ranges, act_width = _collect(
        action_layout, [node.action_dim for node in g.nodes], "action"
    )
    return Allocation(obs_ranges, act_ranges, obs_width, act_width)


def default_layout(g: EmbodimentGraph) -> Allocation:
    """Contiguous allocation in node order: one quantity per node per kind."""
    obs = [(f"{node.name}/obs", node.obs_dim, node.id) for node in g.nodes]
    act = [(f"{node.name}/action", node.action_dim, node.id) for node in g.nodes]
    return allocate(g, obs, act)


def mask_to_text(m: AttentionMask) -> str:
    """Serialise a mask: first line ``n=<int>``, then one 0/1 row per line."""
    lines = [f"n={m.n}"]
    lines.extend(" ".join(str(int(x)) for x in row) for row in m.entries)
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> AttentionMask:
    """Inverse of mask_to_text; validates shape and mask invariants."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("mask text must start with an 'n=<int>' line")
    try:
        n = int(lines[0][2:])
    except ValueError as exc:
        raise ValueError(f"bad mask header {lines[0]!r}") from exc
    if len(lines) - 1 != n:
        raise ValueError(f"expected {n} mask rows, got {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        row = ln.split()
        if len(row) != n or any(x not in ("0", "1") for x in row):
            raise ValueError(f"bad mask row {ln!r}")
        rows.append([int(x) for x in row])
    return AttentionMask(np.array(rows, dtype=np.uint8))


def graph_fingerprint(g: EmbodimentGraph) -> str:
    """Stable content hash of a graph, used to pair checkpoints with bodies."""
    doc = {
        "nodes": [
            [node.name, node.obs_dim, node.action_dim, node.is_root]
            for node in g.nodes
        ],
        "edges": sorted(g.edges),
    }
    blob = json.dumps(doc, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
