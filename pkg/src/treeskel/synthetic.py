"""Deterministic synthetic tree scenes with full ground truth.

A recursive branching skeleton (trunk, leading branches, sub-branches,
twigs) is rendered as points sampled on each segment's cylinder surface,
plus a ground disk and optional sky-colored noise. Every point carries
its class (ground / noise / major / minor) and its branch label, and the
true skeleton is exported as a fork graph, so end-to-end runs can be
scored without any manual annotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .errors import ParameterError
from .evaluation import ForkGraph, collapse_degree_two
from .skeleton import BranchLabeling

GOLDEN_ANGLE = 2.399963229728653

# segment placement constants (fractions of the parent dimension)
LB_ATTACH_SPAN = (0.65, 0.95)        # leading branches on the upper trunk
SB_ATTACH_SPAN = (0.45, 0.60)        # small trunk branches below them
CHILD_ATTACH_SPAN = (0.35, 0.85)
LB_LENGTH_RATIO = 0.60               # of trunk height
SB_LENGTH_RATIO = 0.16
CHILD_LENGTH_RATIO = 0.50            # of the parent segment

# colors (base RGB, jitter amplitude)
BARK_COLOR = ((101, 67, 33), 18)
GROUND_COLOR = ((84, 74, 48), 15)
SKY_COLOR = ((243, 247, 252), 6)

CLASS_NAMES = ("ground", "noise", "minor", "major")
CLASS_GROUND, CLASS_NOISE, CLASS_MINOR, CLASS_MAJOR = range(4)


@dataclass(frozen=True)
class TreeSpec:
    """Generator controls. All lengths in meters, angles in degrees."""

    seed: int = 0
    trunk_height: float = 2.2
    trunk_radius: float = 0.08
    leading_branch_count: int = 5
    branch_angle_range: tuple = (35.0, 65.0)
    recursion_depth: int = 3
    child_branch_count: tuple = (2, 3)
    radius_decay: float = 0.4
    point_surface_density: float = 25000.0
    noise_sigma: float = 0.002
    ground_extent: float = 2.5
    ground_density: float = 3000.0
    sky_noise_count: int = 3000
    occlusion_holes: tuple = ()
    small_branch_count: int = 2
    major_radius_min: float = 0.010
    lb_min_fraction: float = 0.05

    def __post_init__(self):
        if self.trunk_height <= 0 and self.leading_branch_count == 0:
            raise ParameterError("degenerate spec: no trunk and no branches")
        if not 0.0 < self.radius_decay < 1.0:
            raise ParameterError("radius_decay must lie in (0, 1)")
        for name in ("trunk_radius", "point_surface_density", "noise_sigma",
                     "ground_extent", "major_radius_min"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        object.__setattr__(self, "branch_angle_range",
                           tuple(self.branch_angle_range))
        object.__setattr__(self, "child_branch_count",
                           tuple(self.child_branch_count))
        object.__setattr__(self, "occlusion_holes",
                           tuple((tuple(c), float(r))
                                 for c, r in self.occlusion_holes))

    @classmethod
    def from_json(cls, path) -> "TreeSpec":
        with open(path, "r", encoding="ascii") as fh:
            return cls(**json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)


@dataclass(frozen=True)
class Segment:
    """One straight branch piece of the generated skeleton."""

    id: int
    parent_id: Optional[int]
    start: np.ndarray
    end: np.ndarray
    radius: float
    level: int                      # 0 trunk, 1 leading/small, 2+, ...
    lb_root: Optional[int]          # id of its level-1 ancestor

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def area(self) -> float:
        return 2.0 * np.pi * self.radius * self.length

    def axis_distance(self, pts: np.ndarray, clamp: bool = True) -> np.ndarray:
        rel = np.atleast_2d(pts) - self.start
        d = self.direction
        along = rel @ d
        if clamp:
            along = np.clip(along, 0.0, self.length)
        return np.linalg.norm(rel - along[:, None] * d, axis=1)


@dataclass
class GroundTruth:
    """Everything a scoring run needs to know about a generated scene."""

    cloud: PointCloud
    reference: ForkGraph
    labeling: BranchLabeling
    segments: list
    spec: TreeSpec

    @property
    def classes(self) -> np.ndarray:
        return self.cloud.field("class")


def generate_tree(spec: TreeSpec) -> GroundTruth:
    """Build the full scene for ``spec``. Identical specs give identical
    output, byte for byte."""
    rng = np.random.default_rng(spec.seed)
    segments = _build_segments(spec, rng)
    samples = _sample_segments(spec, segments, rng)
    codes, n_leading, lb_of_segment = _branch_codes(spec, segments, samples)

    chunks = [samples["points"]]
    classes = [samples["classes"]]
    branch = [codes]
    colors = [samples["colors"]]

    ground = _sample_ground(spec, rng)
    sky = _sample_sky(spec, segments, rng)
    for extra, cls in ((ground, CLASS_GROUND), (sky, CLASS_NOISE)):
        if len(extra[0]):
            chunks.append(extra[0])
            colors.append(extra[1])
            classes.append(np.full(len(extra[0]), cls, dtype=np.int64))
            branch.append(np.full(len(extra[0]), -1, dtype=np.int64))

    xyz = np.vstack(chunks)
    cloud = PointCloud(
        xyz,
        colors=np.vstack(colors),
        scalar_fields={"class": np.concatenate(classes),
                       "branch_id": np.concatenate(branch)})
    labeling = BranchLabeling(cloud.field("branch_id"), n_leading)
    reference = _reference_graph(spec, segments, lb_of_segment)
    gt = GroundTruth(cloud, reference, labeling, segments, spec)
    if spec.occlusion_holes:
        gt = perturb_with_holes(gt, spec.occlusion_holes)
    return gt


def perturb_with_holes(gt: GroundTruth, holes) -> GroundTruth:
    """Delete points inside the given (center, radius) spheres.

    The reference skeleton and the per-segment ground truth stay intact;
    only the cloud (and its per-point labels) loses points.
    """
    keep = np.ones(len(gt.cloud), dtype=bool)
    for center, radius in holes:
        d = np.linalg.norm(gt.cloud.xyz - np.asarray(center, float), axis=1)
        keep &= d > radius
    cloud = gt.cloud.select(keep)
    labeling = BranchLabeling(cloud.field("branch_id"), gt.labeling.n_leading)
    return GroundTruth(cloud, gt.reference, labeling, gt.segments, gt.spec)


# ---------------------------------------------------------------------------
# skeleton construction

def _build_segments(spec: TreeSpec, rng) -> list:
    segments = []
    trunk = Segment(0, None, np.zeros(3),
                    np.array([0.0, 0.0, spec.trunk_height]),
                    spec.trunk_radius, 0, None)
    segments.append(trunk)

    angle_lo, angle_hi = np.deg2rad(spec.branch_angle_range)
    azimuth0 = rng.uniform(0.0, 2.0 * np.pi)

    def attach_fractions(count, span):
        if count == 1:
            return [0.5 * (span[0] + span[1])]
        return list(np.linspace(span[0], span[1], count))

    # level-1 branches: leading branches, then small trunk branches
    level1 = []
    lb_len = LB_LENGTH_RATIO * spec.trunk_height
    for i, frac in enumerate(attach_fractions(spec.leading_branch_count,
                                              LB_ATTACH_SPAN)):
        theta = rng.uniform(angle_lo, angle_hi)
        phi = azimuth0 + i * GOLDEN_ANGLE
        direction = np.array([np.sin(theta) * np.cos(phi),
                              np.sin(theta) * np.sin(phi),
                              np.cos(theta)])
        length = lb_len * rng.uniform(0.8, 1.0)
        level1.append((frac, direction, length))
    sb_len = SB_LENGTH_RATIO * spec.trunk_height
    for i, frac in enumerate(attach_fractions(spec.small_branch_count,
                                              SB_ATTACH_SPAN)):
        theta = rng.uniform(angle_lo, angle_hi)
        phi = azimuth0 + (i + 0.5) * GOLDEN_ANGLE + np.pi
        direction = np.array([np.sin(theta) * np.cos(phi),
                              np.sin(theta) * np.sin(phi),
                              np.cos(theta)])
        length = sb_len * rng.uniform(0.8, 1.0)
        level1.append((frac, direction, length))

    radius1 = spec.trunk_radius * spec.radius_decay
    radius_sb = spec.trunk_radius * spec.radius_decay ** 2
    queue = []
    for k, (frac, direction, length) in enumerate(level1):
        start = trunk.start + frac * (trunk.end - trunk.start)
        is_lb = k < spec.leading_branch_count
        radius = radius1 if is_lb else radius_sb
        seg = Segment(len(segments), 0, start, start + length * direction,
                      radius, 1, None)
        seg = _with_lb_root(seg, seg.id)
        segments.append(seg)
        if is_lb:
            queue.append(seg)

    # deeper levels
    cmin, cmax = spec.child_branch_count
    while queue:
        parent = queue.pop(0)
        if parent.level >= spec.recursion_depth:
            continue
        count = int(rng.integers(cmin, cmax + 1))
        if count == 0:
            continue
        beta0 = rng.uniform(0.0, 2.0 * np.pi)
        radius = spec.trunk_radius * spec.radius_decay ** (parent.level + 1)
        length = parent.length * CHILD_LENGTH_RATIO
        for j, frac in enumerate(attach_fractions(count, CHILD_ATTACH_SPAN)):
            alpha = rng.uniform(angle_lo, angle_hi)
            beta = beta0 + j * GOLDEN_ANGLE
            direction = _rotate_away(parent.direction, alpha, beta)
            start = parent.start + frac * (parent.end - parent.start)
            seg = Segment(len(segments), parent.id, start,
                          start + length * rng.uniform(0.85, 1.0) * direction,
                          radius, parent.level + 1, parent.lb_root)
            segments.append(seg)
            queue.append(seg)
    return segments


def _with_lb_root(seg: Segment, root: int) -> Segment:
    return Segment(seg.id, seg.parent_id, seg.start, seg.end, seg.radius,
                   seg.level, root)


def _rotate_away(d: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Unit vector at angle ``alpha`` from d, azimuth ``beta`` around it."""
    ref = np.array([0.0, 0.0, 1.0])
    if abs(d @ ref) > 0.95:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return (np.cos(alpha) * d
            + np.sin(alpha) * (np.cos(beta) * u + np.sin(beta) * v))


def _segment_class(spec: TreeSpec, seg: Segment) -> int:
    return CLASS_MAJOR if seg.radius >= spec.major_radius_min else CLASS_MINOR


# ---------------------------------------------------------------------------
# point sampling

def _sample_segments(spec: TreeSpec, segments: list, rng) -> dict:
    by_id = {s.id: s for s in segments}
    children = {}
    for s in segments:
        if s.parent_id is not None:
            children.setdefault(s.parent_id, []).append(s.id)

    pts_out, cls_out, seg_out = [], [], []
    for seg in segments:
        n = max(1, int(round(seg.area * spec.point_surface_density)))
        t = rng.uniform(0.0, seg.length, n)
        phi = rng.uniform(0.0, 2.0 * np.pi, n)
        d = seg.direction
        ref = np.array([0.0, 0.0, 1.0])
        if abs(d @ ref) > 0.95:
            ref = np.array([1.0, 0.0, 0.0])
        u = np.cross(d, ref)
        u /= np.linalg.norm(u)
        v = np.cross(d, u)
        surface = (seg.start + t[:, None] * d
                   + seg.radius * (np.cos(phi)[:, None] * u
                                   + np.sin(phi)[:, None] * v))

        # hide surface points buried inside an adjacent, thicker piece
        visible = np.ones(n, dtype=bool)
        adjacent = [by_id[i] for i in children.get(seg.id, [])]
        if seg.parent_id is not None:
            adjacent.append(by_id[seg.parent_id])
        for other in adjacent:
            inside = _inside_finite_cylinder(other, surface)
            visible &= ~inside
        surface = surface[visible]

        noise = rng.normal(0.0, spec.noise_sigma, size=(n, 3))[visible]
        if spec.noise_sigma > 0:
            norm = np.linalg.norm(noise, axis=1, keepdims=True)
            cap = 4.0 * spec.noise_sigma
            scale = np.minimum(1.0, cap / np.maximum(norm, 1e-300))
            noise = noise * scale
        pts = surface + noise

        pts_out.append(pts)
        cls_out.append(np.full(len(pts), _segment_class(spec, seg),
                               dtype=np.int64))
        seg_out.append(np.full(len(pts), seg.id, dtype=np.int64))

    points = np.vstack(pts_out)
    colors = _jittered_colors(BARK_COLOR, len(points), rng)
    return {"points": points, "colors": colors,
            "classes": np.concatenate(cls_out),
            "segment_ids": np.concatenate(seg_out)}


def _inside_finite_cylinder(seg: Segment, pts: np.ndarray) -> np.ndarray:
    rel = pts - seg.start
    d = seg.direction
    along = rel @ d
    radial = np.linalg.norm(rel - along[:, None] * d, axis=1)
    return ((along >= 0.0) & (along <= seg.length)
            & (radial < seg.radius - 1e-9))


def _sample_ground(spec: TreeSpec, rng):
    area = np.pi * spec.ground_extent ** 2
    n = int(round(area * spec.ground_density))
    if n == 0:
        return np.empty((0, 3)), np.empty((0, 3), dtype=np.int64)
    r = spec.ground_extent * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.normal(0.0, spec.noise_sigma, n)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return pts, _jittered_colors(GROUND_COLOR, n, rng)


def _sample_sky(spec: TreeSpec, segments: list, rng):
    n = spec.sky_noise_count
    if n == 0:
        return np.empty((0, 3)), np.empty((0, 3), dtype=np.int64)
    ends = np.array([s.end for s in segments] + [s.start for s in segments])
    extent = max(0.5, float(np.max(np.linalg.norm(ends[:, :2], axis=1)))) + 0.3
    z_top = float(ends[:, 2].max()) + 0.3
    z_lo = 0.45 * spec.trunk_height
    r = extent * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(z_lo, z_top, n)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return pts, _jittered_colors(SKY_COLOR, n, rng)


def _jittered_colors(spec_color, n, rng) -> np.ndarray:
    base, amp = spec_color
    jitter = rng.integers(-amp, amp + 1, size=(n, 3))
    return np.clip(np.asarray(base) + jitter, 0, 255).astype(np.int64)


# ---------------------------------------------------------------------------
# ground-truth labels and reference graph

def _branch_codes(spec: TreeSpec, segments: list, samples: dict):
    """Per-point branch codes and the LB/SB split of level-1 subtrees.

    Major points of each trunk-attached subtree count toward its size; a
    subtree at or above ``lb_min_fraction`` of all major points becomes a
    leading branch, the rest join SB. Minor points are Rest.
    """
    seg_ids = samples["segment_ids"]
    classes = samples["classes"]
    major = classes == CLASS_MAJOR

    roots = sorted({s.lb_root for s in segments if s.lb_root is not None})
    sizes = {}
    for root in roots:
        members = [s.id for s in segments if s.lb_root == root]
        rows = major & np.isin(seg_ids, members)
        sizes[root] = int(np.count_nonzero(rows))
    total_major = int(np.count_nonzero(major))

    threshold = spec.lb_min_fraction * total_major
    order = sorted(roots, key=lambda r: (-sizes[r], r))
    leading = [r for r in order if sizes[r] >= threshold]
    lb_of_segment = {}
    code_of_root = {}
    for rank, root in enumerate(leading, start=1):
        code_of_root[root] = rank
    sb_code = len(leading) + 1
    for root in order:
        code_of_root.setdefault(root, sb_code)
    for s in segments:
        if s.lb_root is None:
            lb_of_segment[s.id] = "Trunk"
        else:
            c = code_of_root[s.lb_root]
            lb_of_segment[s.id] = f"LB_{c}" if c < sb_code else "SB"

    codes = np.full(len(seg_ids), -1, dtype=np.int64)
    trunk_rows = major & (seg_ids == 0)
    codes[trunk_rows] = 0
    for root in roots:
        members = [s.id for s in segments if s.lb_root == root]
        rows = major & np.isin(seg_ids, members)
        codes[rows] = code_of_root[root]
    return codes, len(leading), lb_of_segment


def _major_chain_segments(spec: TreeSpec, segments: list) -> dict:
    """Segments that are major and whose ancestors are all major (a major
    piece hanging off a minor one cannot stand alone in the skeleton)."""
    by_id = {s.id: s for s in segments}
    out = {}
    for seg in segments:
        node, ok = seg, True
        while node is not None:
            if _segment_class(spec, node) != CLASS_MAJOR:
                ok = False
                break
            node = by_id.get(node.parent_id)
        if ok:
            out[seg.id] = seg
    return out


def _reference_graph(spec: TreeSpec, segments: list,
                     lb_of_segment: dict) -> ForkGraph:
    """Fork graph of the major skeleton: stations at segment ends and at
    every major attachment, degree-2 nodes collapsed away."""
    major = _major_chain_segments(spec, segments)
    stations = {sid: [0.0, seg.length] for sid, seg in major.items()}
    for seg in major.values():
        if seg.parent_id in major:
            parent = major[seg.parent_id]
            along = float((seg.start - parent.start) @ parent.direction)
            stations[parent.id].append(along)

    graph = ForkGraph()
    node_of = {}
    next_id = 0
    for sid, seg in sorted(major.items()):
        ids = []
        for t in sorted(set(stations[sid])):
            pos = seg.start + t * seg.direction
            graph.add_node(next_id, pos, lb_of_segment[sid])
            node_of[(sid, round(t, 9))] = next_id
            ids.append(next_id)
            next_id += 1
        for a, b in zip(ids[:-1], ids[1:]):
            graph.add_edge(a, b)

    # weld each child's base onto its parent's station; the fork then
    # belongs to the branch it starts, mirroring the per-branch reporting
    for sid, seg in sorted(major.items()):
        if seg.parent_id in major:
            parent = major[seg.parent_id]
            along = float((seg.start - parent.start) @ parent.direction)
            child_base = node_of[(sid, 0.0)]
            parent_node = node_of[(seg.parent_id, round(along, 9))]
            _merge_nodes(graph, parent_node, child_base)
            if graph.node_class.get(parent_node) == "Trunk":
                graph.node_class[parent_node] = lb_of_segment[sid]
    return collapse_degree_two(graph)


def _merge_nodes(graph: ForkGraph, keep: int, drop: int) -> None:
    for nb in sorted(graph.adjacency[drop]):
        length = graph.edge_length.pop((min(drop, nb), max(drop, nb)))
        graph.adjacency[nb].discard(drop)
        if nb != keep:
            graph.adjacency[keep].add(nb)
            graph.adjacency[nb].add(keep)
            graph.edge_length[(min(keep, nb), max(keep, nb))] = length
    del graph.adjacency[drop]
    del graph.positions[drop]
    graph.node_class.pop(drop, None)
