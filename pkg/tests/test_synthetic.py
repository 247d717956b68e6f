import numpy as np
import pytest

from treeskel.errors import ParameterError
from treeskel.synthetic import (CLASS_MAJOR, CLASS_MINOR, GroundTruth,
                                Segment, TreeSpec, generate_tree,
                                perturb_with_holes)


@pytest.fixture(scope="module")
def small_spec():
    return TreeSpec(seed=11, trunk_height=1.8, trunk_radius=0.08,
                    leading_branch_count=4, recursion_depth=2,
                    point_surface_density=8000, ground_density=800,
                    sky_noise_count=500, small_branch_count=1)


@pytest.fixture(scope="module")
def small_tree(small_spec):
    return generate_tree(small_spec)


class TestGeneration:
    def test_bare_trunk(self):
        spec = TreeSpec(seed=0, leading_branch_count=0, small_branch_count=0,
                        recursion_depth=0, point_surface_density=5000,
                        ground_density=0, sky_noise_count=0)
        gt = generate_tree(spec)
        assert gt.labeling.n_leading == 0
        # the skeleton is a single chain: two endpoints, one edge
        assert gt.reference.n_nodes == 2
        assert len(gt.reference.edge_length) == 1
        assert np.all(gt.labeling.codes == 0)      # every point is Trunk

    def test_determinism(self, small_spec, small_tree):
        again = generate_tree(small_spec)
        assert np.array_equal(again.cloud.xyz, small_tree.cloud.xyz)
        assert np.array_equal(again.cloud.colors, small_tree.cloud.colors)
        assert np.array_equal(again.labeling.codes, small_tree.labeling.codes)
        assert again.reference.to_json_dict() == \
            small_tree.reference.to_json_dict()

    def test_fork_count_closed_form(self):
        # fixed child count c at depth 2 with every piece major:
        # forks = n_lb * (1 + c); leaves = n_lb * c + trunk base and top
        n_lb, c = 5, 2
        spec = TreeSpec(seed=3, leading_branch_count=n_lb,
                        recursion_depth=2, child_branch_count=(c, c),
                        radius_decay=0.5, major_radius_min=0.01,
                        small_branch_count=0, point_surface_density=2000,
                        ground_density=0, sky_noise_count=0)
        gt = generate_tree(spec)
        degrees = [gt.reference.degree(i) for i in gt.reference.positions]
        n_forks = sum(1 for d in degrees if d >= 3)
        n_leaves = sum(1 for d in degrees if d == 1)
        assert n_forks == n_lb * (1 + c)
        assert n_leaves == n_lb * c + n_lb + 2
        assert len(gt.reference.edge_length) == gt.reference.n_nodes - 1

    def test_points_near_their_segment(self, small_tree):
        # every sampled tree point lies within segment radius + 4 sigma of
        # its segment axis
        spec = small_tree.spec
        tree_mask = np.isin(small_tree.classes, [CLASS_MAJOR, CLASS_MINOR])
        # reconstruct membership via nearest segment by generation order:
        # the invariant is checked against all segments instead
        pts = small_tree.cloud.xyz[tree_mask]
        best = np.full(len(pts), np.inf)
        for seg in small_tree.segments:
            d = np.abs(seg.axis_distance(pts) - seg.radius)
            best = np.minimum(best, d)
        assert best.max() <= 4 * spec.noise_sigma + 1e-9

    def test_labels_cover_every_point(self, small_tree):
        assert len(small_tree.labeling.codes) == len(small_tree.cloud)
        codes = small_tree.labeling.codes
        assert set(np.unique(codes)) <= set(
            range(-1, small_tree.labeling.n_leading + 2))

    def test_reference_nodes_lie_on_axes(self, small_tree):
        for nid, pos in small_tree.reference.positions.items():
            d = min(seg.axis_distance(pos[None, :])[0]
                    for seg in small_tree.segments)
            assert d < 1e-9

    def test_minor_points_are_rest(self, small_tree):
        minor = small_tree.classes == CLASS_MINOR
        assert np.all(small_tree.labeling.codes[minor] == -1)

    def test_sky_noise_is_bright(self, small_tree):
        noise = small_tree.classes == 1
        bark = small_tree.classes >= 2
        assert small_tree.cloud.colors[noise].mean() > 200
        assert small_tree.cloud.colors[bark].mean() < 140

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ParameterError):
            TreeSpec(trunk_height=0.0, leading_branch_count=0)

    def test_spec_json_round_trip(self, tmp_path, small_spec):
        path = tmp_path / "spec.json"
        small_spec.to_json(path)
        assert TreeSpec.from_json(path) == small_spec


class TestHoles:
    def test_far_hole_changes_nothing(self, small_tree):
        out = perturb_with_holes(small_tree, [((50.0, 50.0, 50.0), 1.0)])
        assert len(out.cloud) == len(small_tree.cloud)
        assert np.array_equal(out.cloud.xyz, small_tree.cloud.xyz)

    def test_hole_covering_subbranch(self, small_tree):
        # pick a level-2 segment and swallow it whole
        seg = next(s for s in small_tree.segments if s.level == 2)
        center = 0.5 * (seg.start + seg.end)
        radius = seg.length / 2 + seg.radius + 0.05
        out = perturb_with_holes(small_tree, [(tuple(center), radius)])
        d = np.abs(seg.axis_distance(out.cloud.xyz) - seg.radius)
        near_segment = d < 0.01
        assert not np.any(near_segment)
        # skeleton and segment ground truth unchanged
        assert out.reference.to_json_dict() == \
            small_tree.reference.to_json_dict()
        assert len(out.segments) == len(small_tree.segments)

    def test_removed_count_matches_containment_oracle(self, small_tree, rng):
        center = np.array([0.0, 0.0, 1.6])
        radius = 0.4
        inside = np.linalg.norm(small_tree.cloud.xyz - center, axis=1) <= radius
        out = perturb_with_holes(small_tree, [(tuple(center), radius)])
        assert len(out.cloud) == len(small_tree.cloud) - inside.sum()

    def test_holes_in_spec_applied_at_generation(self, small_spec):
        spec = TreeSpec(**{**_spec_dict(small_spec),
                           "occlusion_holes": (((0.0, 0.0, 1.6), 0.4),)})
        direct = generate_tree(spec)
        manual = perturb_with_holes(generate_tree(small_spec),
                                    [((0.0, 0.0, 1.6), 0.4)])
        assert np.array_equal(direct.cloud.xyz, manual.cloud.xyz)


def _spec_dict(spec: TreeSpec) -> dict:
    from dataclasses import asdict
    return asdict(spec)
