"""Deterministic desk-scale networks and scenarios for tests and demos.

All builders are pure functions of their arguments; the randomized
builders draw from a generator seeded via the ``HEATNET_SEED``
environment variable so fixture generation is reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .network import Consumer, NetworkTopology, Node, Pipe, SourceEdge


def fixture_seed() -> int:
    return int(os.environ.get("HEATNET_SEED", "20260810"))


def fixture_rng(offset: int = 0) -> np.random.Generator:
    return np.random.default_rng(fixture_seed() + offset)


def _pipe(i, a, b, length, diameter, roughness=1.0e-4):
    return Pipe(
        id=f"p{i}", from_node=a, to_node=b, length=length, diameter=diameter, roughness=roughness
    )


def single_pipe(length=1000.0, diameter=0.1, daily_energy=2.0e10, z_drop=0.0):
    """One pipe from source to a single consumer."""
    nodes = [Node("n0", 0.0), Node("n1", -z_drop)]
    pipes = [_pipe(0, "n0", "n1", length, diameter)]
    consumers = [Consumer("c0", "n1", 0, daily_energy)]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def tree_net():
    """Small branching tree: a trunk splitting into two consumer branches."""
    nodes = [Node("n0"), Node("n1"), Node("n2", -2.0), Node("n3", 3.0)]
    pipes = [
        _pipe(0, "n0", "n1", 300.0, 0.12),
        _pipe(1, "n1", "n2", 200.0, 0.08),
        _pipe(2, "n1", "n3", 250.0, 0.08),
    ]
    consumers = [Consumer("c0", "n2", 0, 1.2e10), Consumer("c1", "n3", 0, 0.8e10)]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def diamond_net(symmetric=True):
    """Feed pipe, two parallel branches (one loop), collector to a consumer."""
    nodes = [Node("n0"), Node("n1"), Node("n2"), Node("n3", -1.0)]
    branch2_len = 400.0 if symmetric else 620.0
    branch2_dia = 0.08 if symmetric else 0.06
    pipes = [
        _pipe(0, "n0", "n1", 250.0, 0.12),
        _pipe(1, "n1", "n2", 400.0, 0.08),
        _pipe(2, "n1", "n2", branch2_len, branch2_dia),
        _pipe(3, "n2", "n3", 150.0, 0.1),
    ]
    consumers = [Consumer("c0", "n3", 0, 1.5e10)]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def merge_net():
    """Two supply paths of different length joining at a merge node."""
    nodes = [Node("n0"), Node("n1"), Node("n2"), Node("n3"), Node("n4", -2.0)]
    pipes = [
        _pipe(0, "n0", "n1", 200.0, 0.1),
        _pipe(1, "n0", "n2", 350.0, 0.09),
        _pipe(2, "n1", "n3", 220.0, 0.09),
        _pipe(3, "n2", "n3", 180.0, 0.09),
        _pipe(4, "n3", "n4", 160.0, 0.1),
    ]
    consumers = [Consumer("c0", "n4", 0, 1.4e10), Consumer("c1", "n1", 0, 0.5e10)]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def two_loop_net():
    """Two independent loops sharing the trunk, three consumers."""
    nodes = [
        Node("n0", 0.0),
        Node("n1", 1.0),
        Node("n2", -1.0),
        Node("n3", 2.0),
        Node("n4", -3.0),
        Node("n5", 0.5),
    ]
    pipes = [
        _pipe(0, "n0", "n1", 260.0, 0.12),
        _pipe(1, "n1", "n2", 300.0, 0.09),
        _pipe(2, "n1", "n3", 340.0, 0.08),
        _pipe(3, "n2", "n3", 240.0, 0.08),
        _pipe(4, "n2", "n4", 280.0, 0.09),
        _pipe(5, "n3", "n4", 320.0, 0.07),
        _pipe(6, "n4", "n5", 200.0, 0.09),
    ]
    consumers = [
        Consumer("c0", "n5", 0, 1.1e10),
        Consumer("c1", "n3", 0, 0.7e10),
        Consumer("c2", "n2", 0, 0.9e10),
    ]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def chain_net(n_segments=10, segment_length=120.0, diameter=0.1):
    """Straight chain with one consumer at the far end (refinement fixture)."""
    nodes = [Node(f"n{i}", 0.0) for i in range(n_segments + 1)]
    pipes = [
        _pipe(i, f"n{i}", f"n{i+1}", segment_length, diameter) for i in range(n_segments)
    ]
    consumers = [Consumer("c0", f"n{n_segments}", 0, 1.6e10)]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def looped20_net():
    """20-pipe fixture with two loops, eight consumers, mild elevation.

    Sized so nominal velocities stay around 0.3-0.8 m/s and source-to-peak
    transport times reach about an hour, which makes pre-heating visible
    in the optimization tests.
    """
    nodes = [
        Node("n0", 0.0),
        Node("n1", 1.0),
        Node("n2", -2.0),
        Node("n3", 2.5),
        Node("n4", -1.5),
        Node("n5", 3.0),
        Node("n6", -4.0),
        Node("n7", 1.5),
        Node("n8", -2.5),
        Node("n9", 0.5),
        Node("n10", -1.0),
        Node("n11", 2.0),
        Node("n12", -3.0),
    ]
    pipes = [
        _pipe(0, "n0", "n1", 340.0, 0.15),
        _pipe(1, "n1", "n2", 280.0, 0.13),
        _pipe(2, "n2", "n3", 260.0, 0.12),
        _pipe(3, "n1", "n4", 300.0, 0.1),
        _pipe(4, "n4", "n3", 320.0, 0.09),  # loop 1 with p1,p2
        _pipe(5, "n3", "n5", 290.0, 0.11),
        _pipe(6, "n5", "n6", 270.0, 0.1),
        _pipe(7, "n5", "n7", 310.0, 0.09),
        _pipe(8, "n7", "n6", 250.0, 0.08),  # loop 2 with p6,p7
        _pipe(9, "n6", "n8", 280.0, 0.1),
        _pipe(10, "n8", "n9", 240.0, 0.09),
        _pipe(11, "n9", "n10", 220.0, 0.08),
        _pipe(12, "n8", "n11", 260.0, 0.08),
        _pipe(13, "n11", "n12", 230.0, 0.07),
        _pipe(14, "n2", "c_a", 120.0, 0.06),
        _pipe(15, "n4", "c_b", 140.0, 0.06),
        _pipe(16, "n7", "c_c", 130.0, 0.06),
        _pipe(17, "n10", "c_d", 110.0, 0.05),
        _pipe(18, "n12", "c_e", 100.0, 0.05),
        _pipe(19, "n9", "c_f", 150.0, 0.06),
    ]
    nodes += [
        Node("c_a", -1.0),
        Node("c_b", 0.5),
        Node("c_c", 2.0),
        Node("c_d", -2.0),
        Node("c_e", -4.5),
        Node("c_f", 1.0),
    ]
    consumers = [
        Consumer("h0", "c_a", 0, 1.6e10),
        Consumer("h1", "c_b", 0, 1.1e10),
        Consumer("h2", "c_c", 0, 1.3e10),
        Consumer("h3", "c_d", 0, 0.9e10),
        Consumer("h4", "c_e", 0, 1.2e10),
        Consumer("h5", "c_f", 0, 0.8e10),
        Consumer("h6", "n5", 0, 0.7e10),
        Consumer("h7", "n8", 0, 1.0e10),
    ]
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))


def bench_net():
    """Long trunk with consumer stubs; >= 500 cells at a 10 m target."""
    n_trunk = 12
    nodes = [Node("t0", 0.0)]
    pipes = []
    consumers = []
    for i in range(n_trunk):
        nodes.append(Node(f"t{i+1}", ((-1) ** i) * 1.5))
        pipes.append(_pipe(i, f"t{i}", f"t{i+1}", 380.0, 0.14))
    for i in range(n_trunk):
        stub = f"s{i+1}"
        nodes.append(Node(stub, -1.0))
        pipes.append(_pipe(n_trunk + i, f"t{i+1}", stub, 60.0, 0.06))
        consumers.append(Consumer(f"h{i}", stub, 0, 1.0e10))
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("t0"))


def random_loop_net(rng=None, n_extra_nodes=5, n_loops=2):
    """Randomized connected network with the requested cycle rank."""
    rng = rng or fixture_rng()
    n_nodes = 2 + int(n_extra_nodes)
    nodes = [Node(f"n{i}", float(rng.uniform(-5.0, 5.0))) for i in range(n_nodes)]
    pipes = []
    edges = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(0, i))
        pipes.append(
            _pipe(
                len(pipes),
                f"n{j}",
                f"n{i}",
                float(rng.uniform(80.0, 400.0)),
                float(rng.choice([0.06, 0.08, 0.1, 0.12])),
            )
        )
        edges.add((j, i))
    added = 0
    attempts = 0
    while added < n_loops and attempts < 200:
        attempts += 1
        i, j = sorted(rng.integers(0, n_nodes, size=2))
        if i == j or (i, j) in edges:
            continue
        edges.add((i, j))
        pipes.append(
            _pipe(
                len(pipes),
                f"n{i}",
                f"n{j}",
                float(rng.uniform(80.0, 400.0)),
                float(rng.choice([0.06, 0.08, 0.1])),
            )
        )
        added += 1
    k = int(rng.integers(1, n_nodes))
    consumers = [Consumer("c0", f"n{k}", 0, float(rng.uniform(0.5e10, 2.0e10)))]
    extra = int(rng.integers(1, n_nodes))
    if extra != k:
        consumers.append(Consumer("c1", f"n{extra}", 0, float(rng.uniform(0.5e10, 2.0e10))))
    return NetworkTopology(nodes, pipes, consumers, SourceEdge("n0"))
