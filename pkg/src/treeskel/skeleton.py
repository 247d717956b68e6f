"""Hierarchical skeleton graph assembly from a segmented tree cloud.

Trunk points (within a fixed distance of the fitted cylinder surface,
connectivity-verified) are sliced vertically into trunk nodes; the
remaining branch points are k-means clustered into branch nodes. Nodes
are linked by an adjacency whose weights are the minimum point-to-point
distances between clusters, pruned above a contact threshold. One
shortest-path tree is grown from every trunk node; a branch node claimed
by several trees keeps the parent from the tree with the smallest
accumulated distance. Chaining the trunk nodes bottom-to-top completes
the graph.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .clustering import cluster_count, kmeans
from .errors import DataError, FitError, ParameterError
from .filters import connected_components
from .fitting import CylinderModel

TRUNK_LINK_RADIUS = 0.02     # connectivity hop for the trunk candidate set


@dataclass(frozen=True)
class ClusterNode:
    """A skeleton node: one trunk slice or one branch cluster."""

    id: int
    kind: str                      # "trunk" | "branch"
    centroid: tuple
    member_rows: np.ndarray        # row indices into the skeletonized cloud
    slice_index: Optional[int] = None

    @property
    def centroid_array(self) -> np.ndarray:
        return np.asarray(self.centroid)

    @property
    def n_points(self) -> int:
        return len(self.member_rows)


class WeightedAdjacency:
    """Symmetric sparse edge weights (meters) between node ids."""

    def __init__(self):
        self._adj = {}

    def add_edge(self, u: int, v: int, w: float) -> None:
        if u == v:
            raise ParameterError("self edges are not allowed")
        if w <= 0:
            raise ParameterError("edge weights must be positive")
        self._adj.setdefault(u, {})[v] = w
        self._adj.setdefault(v, {})[u] = w

    def neighbors(self, u: int):
        """(neighbor, weight) pairs sorted by neighbor id."""
        return sorted(self._adj.get(u, {}).items())

    def weight(self, u: int, v: int) -> Optional[float]:
        return self._adj.get(u, {}).get(v)

    def edges(self):
        """Unique (u, v, w) triples with u < v, sorted."""
        out = []
        for u in sorted(self._adj):
            for v, w in sorted(self._adj[u].items()):
                if u < v:
                    out.append((u, v, w))
        return out

    @property
    def n_edges(self) -> int:
        return sum(len(d) for d in self._adj.values()) // 2


@dataclass
class SkeletonGraph:
    """Rooted tree of cluster nodes; edges point child -> parent."""

    nodes: dict                     # id -> ClusterNode
    parents: dict                   # child id -> parent id (root absent)
    edge_length: dict               # child id -> meters
    root_id: int
    leftover_node_ids: tuple = ()   # clusters unreachable from any trunk node

    def children(self) -> dict:
        out = {nid: [] for nid in self.nodes}
        for child, parent in self.parents.items():
            out[parent].append(child)
        for lst in out.values():
            lst.sort()
        return out

    def subtree_ids(self, start: int) -> list:
        """All node ids in the subtree hanging from ``start`` (inclusive)."""
        kids = self.children()
        out, stack = [], [start]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(kids[nid])
        return out

    def validate(self) -> None:
        """Raise DataError unless this is a proper rooted tree."""
        if self.root_id not in self.nodes:
            raise DataError("root id missing from node set")
        if self.root_id in self.parents:
            raise DataError("root must not have a parent")
        non_root = set(self.nodes) - {self.root_id}
        if set(self.parents) != non_root:
            raise DataError("every non-root node needs exactly one parent")
        if len(self.parents) != len(self.nodes) - 1:
            raise DataError("edge count must be node count - 1")
        # walk up from every node; a cycle would never reach the root
        for nid in self.nodes:
            seen = set()
            while nid != self.root_id:
                if nid in seen:
                    raise DataError("cycle detected in parent chain")
                seen.add(nid)
                nid = self.parents[nid]
        trunk = self.trunk_ids()
        for a, b in zip(trunk[:-1], trunk[1:]):
            if self.parents.get(b) != a:
                raise DataError("trunk nodes must form a single chain")

    def trunk_ids(self) -> list:
        """Trunk node ids ordered by slice index."""
        trunk = [n for n in self.nodes.values() if n.kind == "trunk"]
        trunk.sort(key=lambda n: n.slice_index)
        return [n.id for n in trunk]

    def path_cost(self, nid: int) -> float:
        cost = 0.0
        while nid != self.root_id:
            cost += self.edge_length[nid]
            nid = self.parents[nid]
        return cost

    def to_json_dict(self) -> dict:
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            entry = {"id": n.id, "kind": n.kind,
                     "centroid": [float(c) for c in n.centroid],
                     "n_points": int(n.n_points)}
            if n.slice_index is not None:
                entry["slice_index"] = int(n.slice_index)
            if nid in self.parents:
                entry["parent_id"] = int(self.parents[nid])
            nodes.append(entry)
        edges = [{"child": int(c), "parent": int(p),
                  "length_m": float(self.edge_length[c])}
                 for c, p in sorted(self.parents.items())]
        return {"root_id": int(self.root_id), "nodes": nodes, "edges": edges,
                "leftover_node_ids": [int(i) for i in self.leftover_node_ids]}

    def save_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)

    @classmethod
    def from_json_dict(cls, d) -> "SkeletonGraph":
        nodes, parents, lengths = {}, {}, {}
        for entry in d["nodes"]:
            nodes[entry["id"]] = ClusterNode(
                id=entry["id"], kind=entry["kind"],
                centroid=tuple(entry["centroid"]),
                member_rows=np.empty(0, dtype=np.int64),
                slice_index=entry.get("slice_index"))
        for edge in d["edges"]:
            parents[edge["child"]] = edge["parent"]
            lengths[edge["child"]] = edge["length_m"]
        return cls(nodes, parents, lengths, d["root_id"],
                   tuple(d.get("leftover_node_ids", ())))

    @classmethod
    def load_json(cls, path) -> "SkeletonGraph":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json_dict(json.load(fh))

    def to_dot(self) -> str:
        lines = ["graph skeleton {"]
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            shape = "box" if n.kind == "trunk" else "ellipse"
            lines.append(f'  n{nid} [label="{nid}" shape={shape}];')
        for child, parent in sorted(self.parents.items()):
            w = self.edge_length[child]
            lines.append(f'  n{child} -- n{parent} [label="{w:.3f}"];')
        lines.append("}")
        return "\n".join(lines)


def extract_trunk_points(cloud: PointCloud, cyl: CylinderModel,
                         dist: float = 0.05,
                         link_radius: float = TRUNK_LINK_RADIUS) -> np.ndarray:
    """Rows of the trunk: near the cylinder surface and connected.

    Candidates lie within ``dist`` of the cylinder surface; the result is
    the connectivity component (hops <= link_radius) containing the lowest
    candidate.
    """
    candidates = np.flatnonzero(cyl.surface_distance(cloud.xyz) <= dist)
    if len(candidates) == 0:
        raise FitError("no points within trunk distance of the cylinder")
    sub = cloud.select(candidates)
    comps = connected_components(sub, link_radius)
    lowest = int(np.argmin(sub.xyz[:, 2]))
    for comp in comps:
        if lowest in comp:
            return candidates[comp]
    raise FitError("trunk connectivity check failed")       # unreachable


def slice_trunk(cloud: PointCloud, trunk_rows: np.ndarray,
                cyl: CylinderModel, id_start: int = 0) -> list:
    """Cut the trunk into vertical slices of height = cylinder radius
    (half the diameter). Empty slices are skipped; nodes are ordered and
    numbered by slice index from the bottom."""
    if len(trunk_rows) == 0:
        raise FitError("empty trunk point set")
    h = cyl.radius
    z = cloud.xyz[trunk_rows, 2]
    z_min = z.min()
    # slices are [z_min + k h, z_min + (k+1) h); a point exactly at the top
    # boundary folds into the last slice instead of opening a new one
    n_slices = max(1, int(np.ceil((z.max() - z_min) / h - 1e-12)))
    idx = np.floor((z - z_min) / h).astype(np.int64)
    idx = np.clip(idx, 0, n_slices - 1)
    nodes = []
    next_id = id_start
    for k in np.unique(idx):
        rows = trunk_rows[idx == k]
        centroid = cloud.xyz[rows].mean(axis=0)
        nodes.append(ClusterNode(next_id, "trunk", tuple(centroid),
                                 np.sort(rows), slice_index=int(k)))
        next_id += 1
    return nodes


def cluster_branches(cloud: PointCloud, branch_rows: np.ndarray, seed: int,
                     id_start: int, voxel_size: float = 0.01,
                     per_100_voxels: float = 2.0, restarts: int = 5) -> list:
    """k-means branch clusters over the non-trunk rows."""
    if len(branch_rows) == 0:
        return []
    sub = cloud.select(branch_rows)
    k = cluster_count(sub, voxel_size, per_100_voxels)
    k = min(k, len(branch_rows))
    assign, centers, _ = kmeans(sub.xyz, k, seed, restarts=restarts)
    nodes = []
    for c in range(k):
        rows = branch_rows[assign == c]
        centroid = cloud.xyz[rows].mean(axis=0)
        nodes.append(ClusterNode(id_start + c, "branch", tuple(centroid),
                                 np.sort(rows)))
    return nodes


def build_adjacency(cloud: PointCloud, nodes: list,
                    edge_max: float = 0.03) -> WeightedAdjacency:
    """Minimum point-pair distances between clusters, pruned above edge_max.

    The weight of (u, v) is the smallest distance between any member of u
    and any member of v; pairs whose minimum exceeds ``edge_max`` get no
    edge.
    """
    adj = WeightedAdjacency()
    if not nodes:
        return adj
    rows = np.concatenate([n.member_rows for n in nodes])
    owner = np.concatenate([np.full(n.n_points, n.id) for n in nodes])
    pts = cloud.xyz[rows]
    tree = cKDTree(pts)
    pairs = tree.query_pairs(edge_max, output_type="ndarray")
    if not len(pairs):
        return adj
    cu, cv = owner[pairs[:, 0]], owner[pairs[:, 1]]
    cross = cu != cv
    if not np.any(cross):
        return adj
    pairs = pairs[cross]
    lo = np.minimum(cu[cross], cv[cross])
    hi = np.maximum(cu[cross], cv[cross])
    dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)

    key = lo * (owner.max() + 1) + hi
    order = np.argsort(key, kind="stable")
    key, lo, hi, dist = key[order], lo[order], hi[order], dist[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(key)) + 1])
    mins = np.minimum.reduceat(dist, starts)
    for s, w in zip(starts, mins):
        adj.add_edge(int(lo[s]), int(hi[s]), float(w))
    return adj


def dijkstra(adj: WeightedAdjacency, source: int, blocked=frozenset()):
    """Shortest-path tree from ``source`` avoiding ``blocked`` nodes.

    Returns (parent map, cost map) over reached nodes; the source has cost
    0 and no parent entry. Ties between equal-cost paths resolve toward
    the lower parent id.
    """
    cost = {source: 0.0}
    parent = {}
    heap = [(0.0, -1, source)]
    done = set()
    while heap:
        c, p, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if p >= 0:
            parent[u] = p
        for v, w in adj.neighbors(u):
            if v in blocked or v in done:
                continue
            nc = c + w
            if v not in cost or nc < cost[v]:
                cost[v] = nc
                heapq.heappush(heap, (nc, u, v))
            elif nc == cost[v]:
                heapq.heappush(heap, (nc, u, v))
    return parent, cost


def shortest_path_trees(adj: WeightedAdjacency, trunk_ids: list) -> dict:
    """One Dijkstra tree per trunk node, never routing through the others.

    Returns {trunk id: (parent map, cost map)}.
    """
    trunk_set = set(trunk_ids)
    out = {}
    for t in trunk_ids:
        out[t] = dijkstra(adj, t, blocked=frozenset(trunk_set - {t}))
    return out


def merge_graphs(trees: dict, trunk_nodes: list, branch_nodes: list,
                 adj: WeightedAdjacency) -> SkeletonGraph:
    """Combine per-trunk-node trees into the final skeleton.

    A branch node claimed by several trees keeps the parent from the tree
    with the smallest accumulated distance to its trunk node (ties toward
    the lower slice index). Trunk nodes are chained bottom-to-top; the
    root is the lowest trunk node. Unreachable branch nodes are reported
    in ``leftover_node_ids``.
    """
    if not trunk_nodes:
        raise FitError("cannot build a skeleton without trunk nodes")
    slice_of = {n.id: n.slice_index for n in trunk_nodes}
    trunk_order = sorted(trunk_nodes, key=lambda n: n.slice_index)

    nodes = {n.id: n for n in trunk_nodes}
    parents, lengths = {}, {}

    # trunk chain, bottom to top
    for below, above in zip(trunk_order[:-1], trunk_order[1:]):
        parents[above.id] = below.id
        lengths[above.id] = float(np.linalg.norm(
            above.centroid_array - below.centroid_array))

    claimed, leftovers = {}, []
    for bn in branch_nodes:
        best = None
        for t_id, (parent, cost) in trees.items():
            if bn.id in cost:
                key = (cost[bn.id], slice_of[t_id], t_id)
                if best is None or key < best[0]:
                    best = (key, parent[bn.id])
        if best is None:
            leftovers.append(bn.id)
            continue
        claimed[bn.id] = best[1]
        nodes[bn.id] = bn

    for nid, parent in claimed.items():
        parents[nid] = parent
        w = adj.weight(nid, parent)
        lengths[nid] = float(w)

    root = trunk_order[0].id
    graph = SkeletonGraph(nodes, parents, lengths, root,
                          tuple(sorted(leftovers)))
    graph.validate()
    return graph


@dataclass(frozen=True)
class BranchLabeling:
    """Per-point branch codes over one cloud.

    Codes: 0 trunk, 1..n_leading the leading branches (descending size),
    n_leading + 1 the small trunk branches, -1 unassigned ("Rest").
    """

    codes: np.ndarray
    n_leading: int

    @property
    def sb_code(self) -> int:
        return self.n_leading + 1

    def class_names(self) -> tuple:
        return (("Trunk",)
                + tuple(f"LB_{i}" for i in range(1, self.n_leading + 1))
                + ("SB", "Rest"))

    def name_of(self, code: int) -> str:
        if code == -1:
            return "Rest"
        if code == 0:
            return "Trunk"
        if code == self.sb_code:
            return "SB"
        return f"LB_{code}"


def assign_branch_labels(graph: SkeletonGraph, cloud: PointCloud,
                         lb_min_fraction: float = 0.05) -> BranchLabeling:
    """Label every point of the skeletonized cloud by its branch.

    Trunk-node members become Trunk. Each maximal subtree hanging off a
    trunk node becomes a leading branch when it holds at least
    ``lb_min_fraction`` of the cloud's points (numbered by descending
    size), otherwise it joins the small-trunk-branch class. Points in no
    cluster or in leftover clusters stay Rest.
    """
    codes = np.full(len(cloud), -1, dtype=np.int64)
    trunk_ids = set(graph.trunk_ids())
    for t in trunk_ids:
        codes[graph.nodes[t].member_rows] = 0

    subtrees = []
    for child, parent in graph.parents.items():
        if parent in trunk_ids and child not in trunk_ids:
            ids = graph.subtree_ids(child)
            size = sum(graph.nodes[i].n_points for i in ids)
            subtrees.append((size, child, ids))
    subtrees.sort(key=lambda s: (-s[0], s[1]))

    threshold = lb_min_fraction * len(cloud)
    leading = [s for s in subtrees if s[0] >= threshold]
    small = [s for s in subtrees if s[0] < threshold]
    sb_code = len(leading) + 1
    for rank, (_, _, ids) in enumerate(leading, start=1):
        for nid in ids:
            codes[graph.nodes[nid].member_rows] = rank
    for _, _, ids in small:
        for nid in ids:
            codes[graph.nodes[nid].member_rows] = sb_code
    return BranchLabeling(codes, len(leading))


def skeletonize(cloud: PointCloud, cyl: CylinderModel, seed: int = 0,
                trunk_dist: float = 0.05, voxel_size: float = 0.01,
                per_100_voxels: float = 2.0, edge_max: float = 0.03,
                lb_min_fraction: float = 0.05, kmeans_restarts: int = 5,
                trunk_link_radius: float = TRUNK_LINK_RADIUS):
    """Full skeleton extraction over a preprocessed tree cloud.

    Returns (SkeletonGraph, BranchLabeling). Points of clusters that end
    up unreachable keep the Rest label.
    """
    trunk_rows = extract_trunk_points(cloud, cyl, trunk_dist,
                                      trunk_link_radius)
    trunk_nodes = slice_trunk(cloud, trunk_rows, cyl)

    in_trunk = np.zeros(len(cloud), dtype=bool)
    in_trunk[trunk_rows] = True
    branch_rows = np.flatnonzero(~in_trunk)
    branch_nodes = cluster_branches(cloud, branch_rows, seed,
                                    id_start=len(trunk_nodes),
                                    voxel_size=voxel_size,
                                    per_100_voxels=per_100_voxels,
                                    restarts=kmeans_restarts)

    adj = build_adjacency(cloud, trunk_nodes + branch_nodes, edge_max)
    trees = shortest_path_trees(adj, [n.id for n in trunk_nodes])
    graph = merge_graphs(trees, trunk_nodes, branch_nodes, adj)
    labeling = assign_branch_labels(graph, cloud, lb_min_fraction)
    return graph, labeling
