import numpy as np
import pytest

import oracles
from srgseg.phantom import generate_phantom
from srgseg.superseg import morphological_gradient, relabel_connected, watershed
from srgseg.volume import LabelVolume, ScalarVolume

from conftest import four_structure_spec


def test_gradient_of_constant_is_zero():
    g = morphological_gradient(ScalarVolume(np.full((4, 5, 6), 3.3)))
    assert np.all(g.data == 0)


def test_gradient_of_step():
    data = np.zeros((6, 3, 3))
    data[3:] = 10.0
    g = morphological_gradient(ScalarVolume(data), "cross6").data
    expected = np.zeros(6)
    expected[[2, 3]] = 10.0
    for y in range(3):
        for z in range(3):
            np.testing.assert_array_equal(g[:, y, z], expected)


@pytest.mark.parametrize("element", ["cross6", "cube26"])
@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_naive_scan(element, seed):
    data = np.random.default_rng(seed).normal(size=(5, 5, 5))
    g = morphological_gradient(ScalarVolume(data), element).data
    np.testing.assert_array_equal(g, oracles.gradient_scan(data, element))


def test_gradient_non_negative(rng):
    g = morphological_gradient(ScalarVolume(rng.normal(size=(8, 7, 6))), "cube26").data
    assert g.min() >= 0


def test_constant_gradient_single_region():
    r = watershed(ScalarVolume(np.full((4, 4, 4), 2.0)))
    assert r.n_super == 1
    assert np.all(r.labels.data == 1)


def test_ridge_splits_two_basins():
    grad = ScalarVolume(np.array([0, 0, 5, 0, 0], float).reshape(5, 1, 1))
    r = watershed(grad)
    assert r.n_super == 2
    lab = r.labels.data.ravel()
    assert lab[0] == lab[1] and lab[3] == lab[4] and lab[0] != lab[3]
    assert lab[2] in (lab[0], lab[3])


def test_min_depth_merges_shallow_basin():
    grad = ScalarVolume(np.array([0, 0, 1, 0.5, 0.5, 3, 0, 0], float).reshape(8, 1, 1))
    assert watershed(grad, 0.0).n_super == 3
    assert watershed(grad, 0.6).n_super == 2
    assert watershed(grad, 10.0).n_super == 1


def test_watershed_records_policy():
    r = watershed(ScalarVolume(np.zeros((2, 2, 2))), 1.5, "cube26")
    assert r.min_depth == 1.5 and r.policy()["element"] == "cube26"


def test_high_contrast_balls_recovered():
    spec = four_structure_spec((64, 64, 64))
    scalar, truth = generate_phantom(spec)
    r = watershed(morphological_gradient(scalar), 1.0)
    assert r.n_super >= 4
    # each true structure is covered, up to 5% of its voxels, by regions that lie mostly inside it
    lab, t = r.labels.data, truth.data
    for k in range(1, 5):
        covered = np.zeros_like(t, dtype=bool)
        for reg in np.unique(lab[t == k]):
            mask = lab == reg
            if (t[mask] == k).mean() > 0.5:
                covered |= mask
        agree = np.logical_and(covered, t == k).sum() / (t == k).sum()
        assert agree >= 0.95


def test_relabel_already_connected_is_bijective():
    data = np.zeros((4, 4, 1), int)
    data[:2] = 5
    data[2:] = 3
    out = relabel_connected(LabelVolume(data)).data
    assert sorted(np.unique(out)) == [1, 2]
    assert out[0, 0, 0] == 1


def test_relabel_splits_islands():
    data = np.zeros((5, 1, 1), int)
    data[0] = data[4] = 7
    out = relabel_connected(LabelVolume(data)).data.ravel()
    assert out.tolist() == [1, 0, 0, 0, 2]


@pytest.mark.parametrize("seed", range(5))
def test_relabel_component_count_matches_union_find(seed):
    data = np.random.default_rng(seed).integers(0, 3, size=(6, 5, 4))
    out = relabel_connected(LabelVolume(data)).data
    assert out.max() == oracles.count_components_unionfind(data)
    # numbering follows first appearance in x-fastest order
    firsts = []
    for v in out.ravel(order="F"):
        if v and v not in firsts:
            firsts.append(v)
    assert firsts == list(range(1, out.max() + 1))
