"""Quantitative comparison of a computed skeleton against a reference.

The computed graph is first reduced to its forks and leaves by removing
every degree-2 node (fusing the incident edges). A reference node counts
as matched when a computed node lies within the matching radius and at
least one of its graph neighbors corresponds, within the same radius, to
a neighbor of the reference node; matching is greedy one-to-one by
ascending distance. A reference edge is true when both endpoints matched
and their matches are adjacent. Point assignments are scored with a
confusion matrix over {Trunk, LB_1..LB_n, SB, Rest} after aligning
predicted and reference branch numbering by maximum overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .forest import ConfusionMatrix
from .skeleton import BranchLabeling, SkeletonGraph


class ForkGraph:
    """Undirected graph of 3D nodes; the skeleton view used for scoring."""

    def __init__(self):
        self.positions = {}        # id -> np.ndarray (3,)
        self.adjacency = {}        # id -> set of ids
        self.edge_length = {}      # (lo, hi) -> meters
        self.node_class = {}       # id -> branch class name (optional)

    def add_node(self, nid: int, position, node_class: str = None) -> None:
        self.positions[nid] = np.asarray(position, dtype=np.float64)
        self.adjacency.setdefault(nid, set())
        if node_class is not None:
            self.node_class[nid] = node_class

    def add_edge(self, u: int, v: int, length: float = None) -> None:
        if u == v:
            raise DataError("self edges are not allowed")
        if length is None:
            length = float(np.linalg.norm(self.positions[u]
                                          - self.positions[v]))
        self.adjacency[u].add(v)
        self.adjacency[v].add(u)
        self.edge_length[(min(u, v), max(u, v))] = float(length)

    def degree(self, nid: int) -> int:
        return len(self.adjacency[nid])

    def edges(self):
        return sorted(self.edge_length.items())

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency.get(u, ())

    def total_length(self) -> float:
        return float(sum(self.edge_length.values()))

    def copy(self) -> "ForkGraph":
        out = ForkGraph()
        out.positions = {k: v.copy() for k, v in self.positions.items()}
        out.adjacency = {k: set(v) for k, v in self.adjacency.items()}
        out.edge_length = dict(self.edge_length)
        out.node_class = dict(self.node_class)
        return out

    @classmethod
    def from_skeleton(cls, graph: SkeletonGraph) -> "ForkGraph":
        out = cls()
        for nid, node in graph.nodes.items():
            out.add_node(nid, node.centroid_array)
        for child, parent in graph.parents.items():
            out.add_edge(child, parent, graph.edge_length[child])
        return out

    @classmethod
    def from_json_dict(cls, d) -> "ForkGraph":
        """Accepts the skeleton JSON schema (nodes + edges)."""
        out = cls()
        for entry in d["nodes"]:
            out.add_node(entry["id"], entry["centroid"],
                         entry.get("branch_class"))
        for edge in d["edges"]:
            out.add_edge(edge["child"], edge["parent"],
                         edge.get("length_m"))
        return out

    @classmethod
    def load_json(cls, path) -> "ForkGraph":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json_dict(json.load(fh))

    def to_json_dict(self) -> dict:
        nodes = []
        for nid in sorted(self.positions):
            entry = {"id": int(nid), "kind": "branch",
                     "centroid": [float(c) for c in self.positions[nid]],
                     "n_points": 0}
            if nid in self.node_class:
                entry["branch_class"] = self.node_class[nid]
            nodes.append(entry)
        edges = [{"child": int(u), "parent": int(v), "length_m": float(w)}
                 for (u, v), w in self.edges()]
        root = min(self.positions) if self.positions else 0
        return {"root_id": int(root), "nodes": nodes, "edges": edges}


def collapse_degree_two(graph) -> ForkGraph:
    """Remove every degree-2 node, fusing its edges into one.

    Accepts a SkeletonGraph or a ForkGraph; returns a new ForkGraph whose
    nodes are only forks and leaves. Edge lengths add up, so the total
    length is preserved. Idempotent.
    """
    fork = graph.copy() if isinstance(graph, ForkGraph) \
        else ForkGraph.from_skeleton(graph)
    queue = sorted(n for n in fork.positions if fork.degree(n) == 2)
    for nid in queue:
        if fork.degree(nid) != 2:
            continue
        a, b = sorted(fork.adjacency[nid])
        la = fork.edge_length.pop((min(a, nid), max(a, nid)))
        lb = fork.edge_length.pop((min(b, nid), max(b, nid)))
        fork.adjacency[a].discard(nid)
        fork.adjacency[b].discard(nid)
        del fork.adjacency[nid]
        del fork.positions[nid]
        fork.node_class.pop(nid, None)
        fork.adjacency[a].add(b)
        fork.adjacency[b].add(a)
        fork.edge_length[(min(a, b), max(a, b))] = la + lb
    return fork


@dataclass
class MatchReport:
    """Node and edge match percentages, overall and per branch class."""

    nodes_true_pct: float
    edges_true_pct: float
    edges_length_weighted_pct: float
    nodes_by_class: dict = field(default_factory=dict)
    edges_by_class: dict = field(default_factory=dict)
    n_reference_nodes: int = 0
    n_reference_edges: int = 0

    def to_json_dict(self) -> dict:
        return {
            "nodes_true_pct": self.nodes_true_pct,
            "edges_true_pct": self.edges_true_pct,
            "edges_length_weighted_pct": self.edges_length_weighted_pct,
            "nodes_by_class": self.nodes_by_class,
            "edges_by_class": self.edges_by_class,
            "n_reference_nodes": self.n_reference_nodes,
            "n_reference_edges": self.n_reference_edges,
        }

    def to_text(self) -> str:
        classes = sorted(set(self.nodes_by_class) | set(self.edges_by_class),
                         key=_class_sort_key)
        header = ["", *classes, "all"]
        node_row = ["Nodes true [%]"]
        edge_row = ["Edges true [%]"]
        for c in classes:
            node_row.append(_fmt_pct(self.nodes_by_class.get(c)))
            edge_row.append(_fmt_pct(self.edges_by_class.get(c)))
        node_row.append(_fmt_pct(self.nodes_true_pct))
        edge_row.append(_fmt_pct(self.edges_true_pct))
        rows = [header, node_row, edge_row,
                ["Edges weighted [%]"] + [""] * len(classes)
                + [_fmt_pct(self.edges_length_weighted_pct)]]
        widths = [max(len(str(r[i])) for r in rows)
                  for i in range(len(header))]
        return "\n".join("  ".join(f"{str(v):>{w}}" for v, w in zip(r, widths))
                         for r in rows)


def _fmt_pct(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def _class_sort_key(name: str):
    if name == "Trunk":
        return (0, 0)
    if name.startswith("LB_"):
        return (1, int(name[3:]))
    return (2, name)


def match_nodes(computed: ForkGraph, reference: ForkGraph,
                radius: float = 0.05):
    """Greedy one-to-one node matching by ascending distance.

    A candidate pair (reference node, computed node) within ``radius``
    becomes a match only if at least one neighbor of the computed node
    lies within ``radius`` of a neighbor of the reference node. Returns
    (match dict reference id -> computed id, MatchReport with node
    percentages filled).
    """
    if computed.n_nodes == 0 or reference.n_nodes == 0:
        raise DataError("cannot match empty graphs")
    comp_ids = sorted(computed.positions)
    comp_pos = np.array([computed.positions[i] for i in comp_ids])
    tree = cKDTree(comp_pos)

    candidates = []
    for rid in sorted(reference.positions):
        rpos = reference.positions[rid]
        for j in tree.query_ball_point(rpos, radius):
            cid = comp_ids[j]
            d = float(np.linalg.norm(comp_pos[j] - rpos))
            candidates.append((d, rid, cid))
    candidates.sort()

    matched, used = {}, set()
    for d, rid, cid in candidates:
        if rid in matched or cid in used:
            continue
        if _has_equivalent_connection(computed, reference, cid, rid, radius):
            matched[rid] = cid
            used.add(cid)

    pct = 100.0 * len(matched) / reference.n_nodes
    by_class = {}
    if reference.node_class:
        for cls in sorted(set(reference.node_class.values())):
            ids = [i for i in reference.positions
                   if reference.node_class.get(i) == cls]
            if ids:
                hit = sum(1 for i in ids if i in matched)
                by_class[cls] = 100.0 * hit / len(ids)
    report = MatchReport(pct, 0.0, 0.0, nodes_by_class=by_class,
                         n_reference_nodes=reference.n_nodes)
    return matched, report


def _has_equivalent_connection(computed, reference, cid, rid, radius):
    for nc in computed.adjacency[cid]:
        cpos = computed.positions[nc]
        for nr in reference.adjacency[rid]:
            if np.linalg.norm(cpos - reference.positions[nr]) <= radius:
                return True
    return False


def match_edges(matched: dict, computed: ForkGraph, reference: ForkGraph,
                report: MatchReport = None) -> MatchReport:
    """Edge truth percentages given a node match.

    A reference edge is true iff both endpoints matched and their matched
    computed nodes are adjacent. The weighted variant weights every
    reference edge by its length, so a missing long edge costs more.
    """
    edges = reference.edges()
    if not edges:
        raise DataError("reference graph has no edges")
    n_true = 0
    len_true = 0.0
    len_total = 0.0
    per_class = {}
    for (a, b), length in edges:
        ok = (a in matched and b in matched
              and computed.has_edge(matched[a], matched[b]))
        n_true += ok
        len_total += length
        len_true += length if ok else 0.0
        cls = _edge_class(reference, a, b)
        if cls is not None:
            hit, total = per_class.get(cls, (0, 0))
            per_class[cls] = (hit + ok, total + 1)

    if report is None:
        report = MatchReport(0.0, 0.0, 0.0)
    report.edges_true_pct = 100.0 * n_true / len(edges)
    report.edges_length_weighted_pct = 100.0 * len_true / len_total
    report.edges_by_class = {c: 100.0 * h / t
                             for c, (h, t) in sorted(per_class.items())}
    report.n_reference_edges = len(edges)
    return report


def _edge_class(reference: ForkGraph, a: int, b: int):
    """Branch class of an edge: the non-Trunk endpoint class wins, so an
    attachment edge belongs to the branch it starts."""
    ca = reference.node_class.get(a)
    cb = reference.node_class.get(b)
    if ca is None and cb is None:
        return None
    if ca == cb:
        return ca
    for c in (ca, cb):
        if c is not None and c != "Trunk":
            return c
    return ca or cb


def evaluate_skeleton(computed: SkeletonGraph, reference: ForkGraph,
                      radius: float = 0.05) -> MatchReport:
    """Collapse, match nodes, then score edges in one call."""
    fork = collapse_degree_two(computed)
    matched, report = match_nodes(fork, reference, radius)
    return match_edges(matched, fork, reference, report)


def align_branch_labels(pred: BranchLabeling, ref: BranchLabeling) -> np.ndarray:
    """Relabel predicted codes onto the reference branch numbering.

    Predicted leading branches map to reference leading branches by
    greedy maximum overlap; unpaired predicted branches fold into SB.
    Trunk, SB and Rest keep their codes.
    """
    if len(pred.codes) != len(ref.codes):
        raise DataError("labelings cover different point counts")
    overlap = np.zeros((pred.n_leading, ref.n_leading), dtype=np.int64)
    for p in range(1, pred.n_leading + 1):
        rows = pred.codes == p
        for r in range(1, ref.n_leading + 1):
            overlap[p - 1, r - 1] = np.count_nonzero(ref.codes[rows] == r)

    mapping = {}
    taken = set()
    entries = [(-overlap[p, r], p, r)
               for p in range(pred.n_leading) for r in range(ref.n_leading)]
    entries.sort()
    for neg, p, r in entries:
        if neg == 0:
            break
        if (p + 1) in mapping or (r + 1) in taken:
            continue
        mapping[p + 1] = r + 1
        taken.add(r + 1)

    out = np.full_like(pred.codes, -1)
    out[pred.codes == 0] = 0
    ref_sb = ref.sb_code
    out[pred.codes == pred.sb_code] = ref_sb
    for p in range(1, pred.n_leading + 1):
        out[pred.codes == p] = mapping.get(p, ref_sb)
    return out


def score_point_assignment(pred: BranchLabeling, ref: BranchLabeling):
    """(ConfusionMatrix, OA, PA, UA, rest_fraction) for point labels.

    The matrix runs over the reference class set {Trunk, LB_1..LB_n, SB,
    Rest}. OA counts only points that are not Rest in the reference;
    rest_fraction is the share of those points the prediction left
    unassigned.
    """
    aligned = align_branch_labels(pred, ref)
    names = ref.class_names()
    n_classes = len(names)
    rest_idx = n_classes - 1

    def to_index(codes):
        idx = np.where(codes == -1, rest_idx, codes)
        return idx.astype(np.int64)

    ref_idx = to_index(ref.codes)
    pred_idx = to_index(aligned)
    cm = ConfusionMatrix.from_labels(ref_idx, pred_idx, names)

    scored = ref_idx != rest_idx
    if not np.any(scored):
        raise DataError("reference labeling is all Rest")
    oa = float(np.mean(pred_idx[scored] == ref_idx[scored]))
    rest_fraction = float(np.mean(pred_idx[scored] == rest_idx))
    return (cm, oa, cm.producers_accuracy(), cm.users_accuracy(),
            rest_fraction)
