from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bubble_analysis import EnergyAtom
from bubble_tree import (TreeConfig, _build_child, build_tree, gromov_report, tree_from_json, tree_to_dot,
                         tree_to_json, verify_conservation)
from errors import TheoryViolationError
from export_utils import to_builtin, validate_document
from holomorphic_data import HoloMap, MapFamily, coefficient_distance, family_limit


@pytest.fixture(scope="module")
def single_tree(single_bubble):
    return build_tree(single_bubble, TreeConfig(n_jobs=1))


@pytest.fixture(scope="module")
def two_peak_tree(two_peak):
    return build_tree(two_peak, TreeConfig(n_jobs=2))


@pytest.fixture(scope="module")
def two_scale_tree(two_scale):
    return build_tree(two_scale, TreeConfig(n_jobs=1))


def test_single_bubble_tree(single_tree):
    root = single_tree.root
    assert root.tag == "root"
    assert root.energy == 0
    assert len(root.children) == 1
    child = root.children[0]
    assert child.tag == "sphere"
    assert child.energy == 1
    assert child.regime == "moderate"
    assert_allclose(child.lam, np.sqrt(3), rtol=5e-2)
    assert abs(child.attachment) < 1e-12
    assert coefficient_distance(child.map, HoloMap.from_components([[-1.0, 1.0], [1.0, 1.0]])) <= 1e-6
    assert child.condition is not None and child.condition.classification == "H"
    assert single_tree.total_energy == 1
    assert single_tree.depth == 1


def test_single_bubble_conserves_energy(single_tree):
    report = verify_conservation(single_tree)
    assert report.passed, report.failures
    assert report.total == 1
    assert_allclose(report.numerical_total, 1.0, atol=1e-3)


def test_two_peak_tree(two_peak_tree):
    root = two_peak_tree.root
    assert root.energy == 0
    assert np.abs(root.map.coeffs[1, 0]) < 1e-12
    points = sorted(c.attachment.real for c in root.children)
    assert_allclose(points, [-1.0, 1.0], atol=1e-8)
    assert [c.energy for c in root.children] == [1, 1]
    assert all(c.tag == "sphere" for c in root.children)
    assert two_peak_tree.total_energy == 2
    assert verify_conservation(two_peak_tree, 2).passed


def test_two_scale_tree(two_scale_tree):
    assert two_scale_tree.depth == 2
    assert two_scale_tree.total_energy == 2
    level1 = two_scale_tree.root.children[0]
    assert level1.energy == 1
    assert len(level1.children) == 1
    assert abs(level1.children[0].attachment) < 1e-6
    assert level1.children[0].energy == 1
    for path, node in two_scale_tree.root.walk():
        assert node.tau is not None and abs(node.tau) <= 1e-2, path
    report = verify_conservation(two_scale_tree, 2)
    assert report.passed, report.failures


def test_constant_family_tree(schedule):
    f = HoloMap.from_components([[0.3, 1.0], [1.0, -0.2j]])
    fam = MapFamily.constant(f, schedule)
    tree = build_tree(fam, TreeConfig(n_jobs=1))
    assert tree.root.children == []
    assert tree.root.energy == 1
    assert verify_conservation(tree).passed
    assert gromov_report(fam, tree).max_distance < 1e-10


def test_thread_count_does_not_change_tree(two_peak, two_peak_tree):
    serial = build_tree(two_peak, TreeConfig(n_jobs=1))
    assert tree_to_json(serial) == tree_to_json(two_peak_tree)


def test_depth_bound_enforced(single_bubble):
    lim = family_limit(single_bubble)
    atom = EnergyAtom(0j, 1.0, 0.03125)
    with pytest.raises(TheoryViolationError):
        _build_child(single_bubble, lim, atom, TreeConfig(), level=5, max_depth=4)


def test_gromov_distances_shrink(single_bubble, single_tree):
    report = gromov_report(single_bubble, single_tree, eps=0.1)
    assert [n.path for n in report.nodes] == ["root", "root/0"]
    assert report.max_distance < 1e-2
    for node in report.nodes:
        assert node.ratio is not None and node.ratio < 1
        assert node.monotone
    assert report.to_json()["eps"] == 0.1


def _hand_tree(child):
    return {
        "r": 1,
        "root": {"tag": "root", "energy": 0, "map": {"coeffs": [[[1.0, 0.0]], [[1.0, 0.0]]]},
                 "children": [child]},
    }


def test_ghost_bubble_detected():
    leaf = {"tag": "sphere", "energy": 1, "attachment": [0.0, 0.0],
            "map": {"coeffs": [[[-1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]]]}}
    ghost = {"tag": "sphere", "energy": 0, "attachment": [0.0, 0.0],
             "map": {"coeffs": [[[1.0, 0.0]], [[1.0, 0.0]]]}, "children": [leaf]}
    report = verify_conservation(tree_from_json(_hand_tree(ghost)))
    assert not report.passed
    ghosts = [f["path"] for f in report.failures if f["rule"] == "ghost"]
    assert ghosts == ["root/0"]


def test_unresolved_branch_fails_conservation():
    leaf = {"tag": "error", "energy": 0, "attachment": [0.0, 0.0], "mass": 1.0,
            "error": "NonConvergenceError: coefficients do not settle"}
    report = verify_conservation(tree_from_json(_hand_tree(leaf)))
    rules = {f["rule"] for f in report.failures}
    assert "unresolved" in rules
    assert "total" in rules


def test_json_round_trip_and_schema(two_peak_tree):
    doc = tree_to_json(two_peak_tree)
    validate_document(to_builtin(doc), "tree")
    again = tree_to_json(tree_from_json(to_builtin(doc)))
    assert to_builtin(again) == to_builtin(doc)
    assert doc["total_energy"] == 2
    assert doc["root"]["children"][0]["regime"] == "moderate"


def test_dot_output(two_scale_tree):
    dot = tree_to_dot(two_scale_tree)
    assert dot.startswith("digraph bubble_tree {")
    assert "root -> root_0" in dot
    assert "root_0 -> root_0_0" in dot


def test_unnormalized_tree_keeps_energies(single_bubble):
    tree = build_tree(single_bubble, replace(TreeConfig(n_jobs=1), normalize=False))
    assert tree.total_energy == 1
    assert tree.root.children[0].regime == "moderate"
