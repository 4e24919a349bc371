"""Directed-graph model of the flow side of a district heating network.

Pipes carry a fixed reference orientation (the file's from/to); reversed
flux is encoded as negative velocity, so direction changes never rewrite
the graph. A breadth-first spanning tree rooted at the source fixes a
deterministic loop basis and source-to-consumer paths.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError, ValidationError


@dataclass(frozen=True)
class Node:
    id: str
    z: float = 0.0  # elevation [m]


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float  # [m]
    diameter: float  # [m]
    roughness: float = 0.0  # absolute wall roughness [m]

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0

    @property
    def volume(self) -> float:
        return self.area * self.length


@dataclass(frozen=True)
class Consumer:
    id: str
    node: str
    class_id: int = 0
    daily_energy: float = 0.0  # demand scale [J/day]


@dataclass(frozen=True)
class SourceEdge:
    node: str


class NetworkTopology:
    """Validated heating network: nodes, pipes, consumers, one source.

    Construction validates ids, geometry, and connectivity, and builds the
    breadth-first spanning tree used for loops and paths. Instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, nodes, pipes, consumers, source):
        self.nodes = list(nodes)
        self.pipes = list(pipes)
        self.consumers = list(consumers)
        self.source = source
        self._validate()
        self.node_index = {n.id: i for i, n in enumerate(self.nodes)}
        self.pipe_index = {p.id: i for i, p in enumerate(self.pipes)}
        self.consumer_index = {c.id: i for i, c in enumerate(self.consumers)}
        self._build_adjacency()
        self._build_spanning_tree()

    # -- structural queries -------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_pipes(self):
        return len(self.pipes)

    @property
    def n_consumers(self):
        return len(self.consumers)

    @property
    def loop_count(self):
        return self.n_pipes - self.n_nodes + 1

    def node(self, node_id) -> Node:
        return self.nodes[self.node_index[node_id]]

    def fundamental_loops(self):
        """One oriented cycle per chord of the spanning tree.

        Returns a list of cycles, each a list of ``(pipe_id, sign)`` pairs:
        the chord traversed forward followed by the tree path closing the
        loop. The count equals the cycle rank ``|pipes| - |nodes| + 1``.
        """
        loops = []
        for chord in self.chords:
            pipe = self.pipes[chord]
            cycle = [(pipe.id, +1)]
            # tree path from the chord head back to its tail
            down = self._tree_path_to(self.node_index[pipe.to_node])
            up = self._tree_path_to(self.node_index[pipe.from_node])
            # strip the common prefix so the cycle stays simple
            k = 0
            while k < len(down) and k < len(up) and down[k] == up[k]:
                k += 1
            for pidx, sign in reversed(down[k:]):
                cycle.append((self.pipes[pidx].id, -sign))
            for pidx, sign in up[k:]:
                cycle.append((self.pipes[pidx].id, sign))
            loops.append(cycle)
        return loops

    def path_to_consumer(self, consumer_id):
        """Oriented pipe path from the source node to a consumer's node.

        Signs are +1 when a pipe is traversed along its reference
        orientation. A consumer sitting at the source node yields an empty
        path.
        """
        c = self.consumers[self.consumer_index[consumer_id]]
        return [
            (self.pipes[pidx].id, sign)
            for pidx, sign in self._tree_path_to(self.node_index[c.node])
        ]

    def tree_path_indices(self, node_id):
        """Tree path to ``node_id`` as ``(pipe_index, sign)`` pairs."""
        return list(self._tree_path_to(self.node_index[node_id]))

    def adjacent_pipes(self, node_idx):
        """Pipes touching a node as ``(pipe_index, arrival_sign)`` pairs.

        ``arrival_sign`` is the velocity sign under which the pipe carries
        flow *into* the node: +1 if the pipe ends there, -1 if it starts
        there.
        """
        return self._adjacency[node_idx]

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        return {
            "nodes": [{"id": n.id, "z_m": n.z} for n in self.nodes],
            "pipes": [
                {
                    "id": p.id,
                    "from": p.from_node,
                    "to": p.to_node,
                    "length_m": p.length,
                    "diameter_m": p.diameter,
                    "roughness_m": p.roughness,
                }
                for p in self.pipes
            ],
            "consumers": [
                {
                    "id": c.id,
                    "node": c.node,
                    "class": c.class_id,
                    "daily_energy_J": c.daily_energy,
                }
                for c in self.consumers
            ],
            "source": {"node": self.source.node},
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    # -- internals ----------------------------------------------------------

    def _validate(self):
        node_ids = [n.id for n in self.nodes]
        if len(set(node_ids)) != len(node_ids):
            raise ValidationError("duplicate node ids")
        pipe_ids = [p.id for p in self.pipes]
        if len(set(pipe_ids)) != len(pipe_ids):
            raise ValidationError("duplicate pipe ids")
        cons_ids = [c.id for c in self.consumers]
        if len(set(cons_ids)) != len(cons_ids):
            raise ValidationError("duplicate consumer ids")
        known = set(node_ids)
        for p in self.pipes:
            if p.from_node not in known or p.to_node not in known:
                raise ValidationError(f"pipe {p.id} references unknown node")
            if p.from_node == p.to_node:
                raise ValidationError(f"pipe {p.id} is a self-loop")
            if not p.length > 0:
                raise ValidationError(f"pipe {p.id} has nonpositive length")
            if not p.diameter > 0:
                raise ValidationError(f"pipe {p.id} has nonpositive diameter")
            if p.roughness < 0:
                raise ValidationError(f"pipe {p.id} has negative roughness")
        for c in self.consumers:
            if c.node not in known:
                raise ValidationError(f"consumer {c.id} references unknown node")
            if not c.daily_energy > 0:
                raise ValidationError(f"consumer {c.id} has nonpositive demand scale")
        if self.source.node not in known:
            raise ValidationError("source references unknown node")

    def _build_adjacency(self):
        adj = [[] for _ in self.nodes]
        for pidx, p in enumerate(self.pipes):
            adj[self.node_index[p.from_node]].append((pidx, -1))
            adj[self.node_index[p.to_node]].append((pidx, +1))
        self._adjacency = adj

    def _build_spanning_tree(self):
        # BFS from the source in file order: deterministic loop basis.
        root = self.node_index[self.source.node]
        parent_edge = [None] * self.n_nodes  # (pipe_idx, sign parent->node)
        visited = [False] * self.n_nodes
        visited[root] = True
        order = deque([root])
        tree = set()
        while order:
            u = order.popleft()
            for pidx, arrival in self._adjacency[u]:
                p = self.pipes[pidx]
                w = self.node_index[p.to_node if arrival == -1 else p.from_node]
                if not visited[w]:
                    visited[w] = True
                    # arrival == -1 means the pipe leaves u, so parent->child
                    # traverses it forward.
                    parent_edge[w] = (pidx, +1 if arrival == -1 else -1)
                    tree.add(pidx)
                    order.append(w)
        if not all(visited):
            missing = [self.nodes[i].id for i, v in enumerate(visited) if not v]
            raise ValidationError(f"network disconnected from source: {missing}")
        self.tree_root = root
        self._parent_edge = parent_edge
        self.tree_pipes = tree
        self.chords = [i for i in range(self.n_pipes) if i not in tree]
        self._paths = self._compute_paths()

    def _compute_paths(self):
        paths = [None] * self.n_nodes
        paths[self.tree_root] = []
        for target in range(self.n_nodes):
            if paths[target] is not None:
                continue
            rev = []
            u = target
            while paths[u] is None:
                pidx, sign = self._parent_edge[u]
                rev.append((pidx, sign))
                p = self.pipes[pidx]
                u = self.node_index[p.from_node if sign == +1 else p.to_node]
            paths[target] = paths[u] + list(reversed(rev))
        return paths

    def _tree_path_to(self, node_idx):
        return self._paths[node_idx]


def network_from_dict(data) -> NetworkTopology:
    try:
        nodes = [Node(id=str(n["id"]), z=float(n.get("z_m", 0.0))) for n in data["nodes"]]
        pipes = [
            Pipe(
                id=str(p["id"]),
                from_node=str(p["from"]),
                to_node=str(p["to"]),
                length=float(p["length_m"]),
                diameter=float(p["diameter_m"]),
                roughness=float(p.get("roughness_m", 0.0)),
            )
            for p in data["pipes"]
        ]
        consumers = [
            Consumer(
                id=str(c["id"]),
                node=str(c["node"]),
                class_id=int(c.get("class", 0)),
                daily_energy=float(c["daily_energy_J"]),
            )
            for c in data["consumers"]
        ]
        src = data["source"]
        if isinstance(src, list):
            raise ValidationError("exactly one source is required")
        source = SourceEdge(node=str(src["node"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed network description: {exc}") from exc
    return NetworkTopology(nodes, pipes, consumers, source)


def load_network(path) -> NetworkTopology:
    """Load and validate a network JSON file."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"network file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    return network_from_dict(data)
