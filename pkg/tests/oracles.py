"""Independent brute-force references used by the property and acceptance tests.

None of these share code with the package: transport is solved by
enumerating permutations, tree distances by plain recursion in which a
missing child is a childless zero-feature blank, and DTW by enumerating every monotone path.
"""

import itertools

import numpy as np

from scnmine.scene_graph import ComputationTree, TreeNode


def perm_ot(C):
    """``min over permutations P of <C, P> / n``."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    rows = np.arange(n)
    return min(C[rows, list(p)].sum() for p in itertools.permutations(range(n))) / n


def tree_oracle(a, b, weights, L, level=1):
    """Recursive distance of two subtrees rooted at ``level`` of ``L``-level trees.

    ``weights[h]`` weighs the child transport inside a subtree of height ``h``.
    Child lists are padded with blank nodes (zero feature, no children) and
    every pairing, blank ones included, goes through the same recursion.
    """
    d = float(np.linalg.norm(np.asarray(a.feature) - np.asarray(b.feature)))
    ca, cb = list(a.children), list(b.children)
    n = max(len(ca), len(cb))
    if n == 0:
        return d
    ca += [None] * (n - len(ca))
    cb += [None] * (n - len(cb))
    C = np.zeros((n, n))
    for i, u in enumerate(ca):
        for j, v in enumerate(cb):
            if u is None and v is None:
                continue
            u = TreeNode.blank() if u is None else u
            v = TreeNode.blank() if v is None else v
            C[i, j] = tree_oracle(u, v, weights, L, level + 1)
    return d + weights[L - level + 1] * perm_ot(C)


def random_tree(rng, L, branching=4, kind="V2V", scale=3.0):
    """Random tree with ``L`` levels and 0..``branching`` children per node."""

    def grow(level):
        node = TreeNode("x", rng.normal(0.0, scale, 3), [], False, "vehicle")
        if level < L:
            node.children = [grow(level + 1) for _ in range(int(rng.integers(0, branching + 1)))]
        return node

    root = grow(1)
    root.feature = np.zeros(3)
    return ComputationTree(kind, root, L)


def monotone_paths(M, N):
    """Every corner-to-corner path with steps (1,0), (0,1), (1,1)."""

    def walk(x, y):
        if (x, y) == (M - 1, N - 1):
            yield [(x, y)]
            return
        for dx, dy in ((1, 1), (1, 0), (0, 1)):
            if x + dx < M and y + dy < N:
                for rest in walk(x + dx, y + dy):
                    yield [(x, y)] + rest

    return list(walk(0, 0))


def dtw_oracle(D):
    D = np.asarray(D, dtype=float)
    return min(sum(D[x, y] for x, y in p) for p in monotone_paths(*D.shape))


def random_scene(rng, n_vehicles=None, n_nodes=None):
    """Random scene graph around ego "E" with V2V and V2N edges."""
    from scnmine.scene_graph import Edge, RoadNodeState, SceneGraph, VehicleState, nref, vref

    nv = int(rng.integers(0, 5)) if n_vehicles is None else n_vehicles
    nn = int(rng.integers(1, 4)) if n_nodes is None else n_nodes
    ids = ["E"] + [f"V{k}" for k in range(nv)]
    vehicles = {}
    for vid in ids:
        s = float(rng.uniform(0.0, 30.0))
        vehicles[vid] = VehicleState(vid, float(rng.uniform(0, 100)), float(rng.uniform(-5, 5)), s, 0.0, s, "1",
                                     0.0, 4.5)
    nodes = {f"n{k}": RoadNodeState(f"n{k}", float(rng.uniform(0, 100)), 0.0, "1", int(rng.integers(0, 5)))
             for k in range(nn)}
    edges = []
    for vid in ids[1:]:
        edges.append(Edge(vref("E"), vref(vid), "V2V", "following", float(rng.uniform(0.0, 60.0))))
    for i, a in enumerate(ids[1:]):
        for b in ids[i + 2:]:
            if rng.random() < 0.4:
                edges.append(Edge(vref(a), vref(b), "V2V", "adjacent", float(rng.uniform(1.0, 30.0))))
    for vid in ids:
        for nid in nodes:
            if rng.random() < 0.5:
                edges.append(Edge(vref(vid), nref(nid), "V2N", "on", float(rng.uniform(0.0, 30.0))))
    return SceneGraph(0, "E", vehicles, nodes, edges)
