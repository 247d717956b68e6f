import numpy as np
import pytest

from treeskel.errors import DataError
from treeskel.evaluation import (ForkGraph, align_branch_labels,
                                 collapse_degree_two, evaluate_skeleton,
                                 match_edges, match_nodes,
                                 score_point_assignment)
from treeskel.skeleton import BranchLabeling


def chain_fork_graph(positions, edges, classes=None):
    g = ForkGraph()
    for i, p in enumerate(positions):
        cls = classes[i] if classes else None
        g.add_node(i, p, cls)
    for u, v in edges:
        g.add_edge(u, v)
    return g


class TestCollapse:
    def test_chain_fuses(self):
        g = chain_fork_graph([[0, 0, 0], [1, 0, 0], [2, 0, 0]],
                             [(0, 1), (1, 2)])
        out = collapse_degree_two(g)
        assert sorted(out.positions) == [0, 2]
        assert out.edge_length[(0, 2)] == pytest.approx(2.0)

    def test_star_unchanged(self):
        g = chain_fork_graph(
            [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]],
            [(0, 1), (0, 2), (0, 3), (0, 4)])
        out = collapse_degree_two(g)
        assert out.n_nodes == 5
        assert len(out.edge_length) == 4

    def test_total_length_preserved_random_trees(self, rng):
        # traversal oracle: random tree, length recount, fork/leaf set fixed
        for trial in range(10):
            n = rng.integers(8, 25)
            g = ForkGraph()
            g.add_node(0, rng.uniform(0, 1, 3))
            for i in range(1, n):
                g.add_node(i, rng.uniform(0, 1, 3))
                g.add_edge(i, int(rng.integers(0, i)))
            out = collapse_degree_two(g)
            assert out.total_length() == pytest.approx(g.total_length(),
                                                       abs=1e-9)
            keep = {i for i in g.positions if g.degree(i) != 2}
            assert set(out.positions) == keep
            for i in keep:
                assert g.degree(i) == out.degree(i)

    def test_idempotent(self, rng):
        g = ForkGraph()
        g.add_node(0, [0, 0, 0])
        for i in range(1, 15):
            g.add_node(i, rng.uniform(0, 1, 3))
            g.add_edge(i, int(rng.integers(0, i)))
        once = collapse_degree_two(g)
        twice = collapse_degree_two(once)
        assert set(once.positions) == set(twice.positions)
        assert once.edge_length == pytest.approx(twice.edge_length)


class TestMatchNodes:
    def make_pair(self, shift):
        """Reference Y-fork and a computed copy displaced by ``shift``."""
        pos = [[0, 0, 0], [0, 0, 1], [0.5, 0, 1.5], [-0.5, 0, 1.5]]
        edges = [(0, 1), (1, 2), (1, 3)]
        ref = chain_fork_graph(pos, edges)
        comp = chain_fork_graph([np.add(p, shift) for p in pos], edges)
        return comp, ref

    def test_within_radius_with_connection(self):
        comp, ref = self.make_pair([0.04, 0, 0])
        matched, report = match_nodes(comp, ref, 0.05)
        assert report.nodes_true_pct == 100.0
        assert len(matched) == 4

    def test_outside_radius_unmatched(self):
        comp, ref = self.make_pair([0.06, 0, 0])
        matched, report = match_nodes(comp, ref, 0.05)
        assert report.nodes_true_pct == 0.0
        assert not matched

    def test_identical_graphs_full_match(self, rng):
        pos = rng.uniform(0, 1, size=(10, 3))
        edges = [(i, i + 1) for i in range(9)]
        g = chain_fork_graph(pos, edges)
        matched, report = match_nodes(g, g, 0.05)
        assert report.nodes_true_pct == 100.0
        assert matched == {i: i for i in range(10)}

    def test_connection_requirement(self):
        # computed node close by, but its neighbors all point away
        ref = chain_fork_graph([[0, 0, 0], [1, 0, 0]], [(0, 1)])
        comp = chain_fork_graph([[0.01, 0, 0], [-1, 0, 0]], [(0, 1)])
        matched, _ = match_nodes(comp, ref, 0.05)
        assert 0 not in matched

    def test_one_to_one(self):
        # two reference nodes competing for one computed node
        ref = chain_fork_graph([[0, 0, 0], [0.02, 0, 0], [1, 0, 0]],
                               [(0, 2), (1, 2)])
        comp = chain_fork_graph([[0.01, 0, 0], [1, 0, 0]], [(0, 1)])
        matched, _ = match_nodes(comp, ref, 0.05)
        comp_ids = list(matched.values())
        assert len(comp_ids) == len(set(comp_ids))

    def test_per_class_percentages(self):
        pos = [[0, 0, 0], [0, 0, 1], [0.5, 0, 1.5], [-0.5, 0, 1.5]]
        edges = [(0, 1), (1, 2), (1, 3)]
        classes = ["Trunk", "Trunk", "LB_1", "LB_2"]
        ref = chain_fork_graph(pos, edges, classes)
        comp = chain_fork_graph(pos, edges)
        # displace only LB_2's node beyond the radius
        comp.positions[3] = comp.positions[3] + np.array([0.2, 0, 0])
        matched, report = match_nodes(comp, ref, 0.05)
        assert report.nodes_by_class["LB_1"] == 100.0
        assert report.nodes_by_class["LB_2"] == 0.0
        assert report.nodes_by_class["Trunk"] == 100.0


class TestMatchEdges:
    def test_identical_graphs(self, rng):
        pos = rng.uniform(0, 1, size=(8, 3))
        edges = [(i, i + 1) for i in range(7)]
        g = chain_fork_graph(pos, edges)
        matched, report = match_nodes(g, g, 0.05)
        report = match_edges(matched, g, g, report)
        assert report.edges_true_pct == 100.0
        assert report.edges_length_weighted_pct == 100.0

    def test_missing_node_fails_incident_edges(self):
        pos = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, -1, 0]]
        edges = [(0, 1), (1, 2), (1, 3)]
        ref = chain_fork_graph(pos, edges)
        # computed graph lacks any node near reference node 1 (degree 3)
        comp = chain_fork_graph([[0, 0, 0], [3, 0, 0]], [(0, 1)])
        matched, report = match_nodes(comp, ref, 0.05)
        report = match_edges(matched, comp, ref, report)
        assert report.edges_true_pct == 0.0

    def test_length_weighting(self):
        # edges of length 1 (true) and 3 (false): plain 50%, weighted 25%
        ref = ForkGraph()
        ref.add_node(0, [0, 0, 0])
        ref.add_node(1, [1, 0, 0])
        ref.add_node(2, [1, 3, 0])
        ref.add_edge(0, 1)    # length 1
        ref.add_edge(1, 2)    # length 3
        comp = ForkGraph()
        comp.add_node(0, [0, 0, 0])
        comp.add_node(1, [1, 0, 0])
        comp.add_node(2, [5, 5, 5])       # far from reference node 2
        comp.add_edge(0, 1)
        comp.add_edge(1, 2)
        matched, report = match_nodes(comp, ref, 0.05)
        report = match_edges(matched, comp, ref, report)
        assert report.edges_true_pct == pytest.approx(50.0)
        assert report.edges_length_weighted_pct == pytest.approx(25.0)

    def test_report_text_renders(self):
        comp, ref = TestMatchNodes().make_pair([0.0, 0, 0])
        report = evaluate_skeleton_like(comp, ref)
        text = report.to_text()
        assert "Nodes true [%]" in text
        assert "100.00" in text


def evaluate_skeleton_like(comp: ForkGraph, ref: ForkGraph):
    matched, report = match_nodes(comp, ref, 0.05)
    return match_edges(matched, comp, ref, report)


def labeling(codes, n_leading):
    return BranchLabeling(np.asarray(codes, dtype=np.int64), n_leading)


class TestPointScoring:
    def test_identical_labelings(self):
        lab = labeling([0, 1, 1, 2, 3, -1], 2)
        cm, oa, pa, ua, rest = score_point_assignment(lab, lab)
        assert oa == 1.0
        assert rest == 0.0

    def test_permuted_numbering_realigned(self):
        ref = labeling([0, 1, 1, 1, 2, 2], 2)
        pred = labeling([0, 2, 2, 2, 1, 1], 2)    # LB ids swapped
        cm, oa, _, _, _ = score_point_assignment(pred, ref)
        assert oa == 1.0

    def test_oa_matches_recount(self, rng):
        n = 500
        ref_codes = rng.integers(-1, 4, size=n)
        pred_codes = rng.integers(-1, 4, size=n)
        ref = labeling(ref_codes, 2)
        pred = labeling(pred_codes, 2)
        aligned = align_branch_labels(pred, ref)
        cm, oa, _, _, rest = score_point_assignment(pred, ref)
        scored = ref_codes != -1
        assert oa == pytest.approx(
            np.mean(aligned[scored] == ref_codes[scored]))
        assert rest == pytest.approx(np.mean(aligned[scored] == -1))

    def test_rest_excluded_from_oa(self):
        ref = labeling([1, 1, -1, -1], 1)
        pred = labeling([1, -1, 1, -1], 1)
        _, oa, _, _, rest = score_point_assignment(pred, ref)
        assert oa == 0.5           # one of the two non-Rest points correct
        assert rest == 0.5         # the other one predicted Rest

    def test_extra_predicted_branch_folds_to_sb(self):
        ref = labeling([1, 1, 1, 1, 0, 0], 1)
        pred = labeling([1, 1, 1, 2, 0, 0], 2)   # spurious second branch
        cm, oa, _, _, _ = score_point_assignment(pred, ref)
        assert oa == pytest.approx(5 / 6)

    def test_universe_mismatch_rejected(self):
        with pytest.raises(DataError):
            score_point_assignment(labeling([0, 1], 1), labeling([0], 1))

    def test_confusion_rows_are_reference_counts(self, rng):
        ref_codes = rng.integers(-1, 3, size=200)
        ref = labeling(ref_codes, 1)
        pred = labeling(rng.integers(-1, 3, size=200), 1)
        cm, _, _, _, _ = score_point_assignment(pred, ref)
        names = ref.class_names()
        for code, name in [(0, "Trunk"), (1, "LB_1"), (2, "SB"), (-1, "Rest")]:
            row = names.index(name if code != -1 else "Rest")
            assert cm.counts[row].sum() == np.count_nonzero(ref_codes == code)


class TestRigidMotionInvariance:
    def test_metrics_stable_under_common_motion(self, rng):
        pos = rng.uniform(0, 2, size=(12, 3))
        edges = [(i, int(rng.integers(0, i))) for i in range(1, 12)]
        ref = chain_fork_graph(pos, edges)
        comp = chain_fork_graph(pos + rng.normal(0, 0.01, size=(12, 3)),
                                edges)
        base = evaluate_skeleton_like(comp, ref)

        theta = 0.8
        R = np.array([[np.cos(theta), -np.sin(theta), 0],
                      [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]])
        t = np.array([3.0, -1.0, 2.0])
        ref2 = chain_fork_graph([R @ p + t for p in pos], edges)
        comp2 = chain_fork_graph([R @ p + t for p in comp.positions.values()],
                                 edges)
        moved = evaluate_skeleton_like(comp2, ref2)
        assert moved.nodes_true_pct == base.nodes_true_pct
        assert moved.edges_true_pct == base.edges_true_pct
        assert moved.edges_length_weighted_pct == pytest.approx(
            base.edges_length_weighted_pct)
