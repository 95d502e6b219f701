import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_xyxy
from oracles import brute_force_assignment, lattice_overlap, raster_overlap
from rgbd_diffdet.errors import CountMismatch, DegenerateBox, NonFiniteGradient, ShapeMismatch
from rgbd_diffdet.losses_matching import (
    LossWeights,
    MatchResult,
    assignment_cost,
    focal_grad,
    focal_loss,
    giou,
    giou_grad,
    grad_check,
    iou,
    l1_grad,
    l1_loss,
    match_hungarian,
    matching_cost,
    pairwise_iou_giou,
    total_loss,
)


def far_from_kinks(a, b, margin=1e-3):
    """True when no edge of ``a`` is within ``margin`` of a breakpoint of giou."""
    for i in (0, 2):
        for j in (0, 2):
            if abs(a[i] - b[j]) < margin or abs(a[i + 1] - b[j + 1]) < margin:
                return False
    return True


def sample_giou_pairs(rng, n):
    out = []
    while len(out) < n:
        a, b = random_xyxy(rng, 2, 0.0, 4.0, min_size=0.1)
        if far_from_kinks(a, b):
            out.append((a, b))
    return out


# -- IoU / GIoU ---------------------------------------------------------------


def test_hand_overlap_case():
    a, b = (0, 0, 2, 2), (1, 1, 3, 3)
    assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
    assert giou(a, b) == pytest.approx(1 / 7 - 2 / 9, abs=1e-12)
    r_iou, r_giou = raster_overlap(a, b, 3000)
    assert abs(r_iou - 1 / 7) < 1e-3 and abs(r_giou - giou(a, b)) < 1e-3


def test_hand_far_apart_case():
    a, b = (0, 0, 1, 1), (9, 9, 10, 10)
    assert iou(a, b) == 0.0
    assert giou(a, b) == pytest.approx(-0.98, abs=1e-12)
    assert abs(raster_overlap(a, b, 3000)[1] + 0.98) < 1e-3


def test_identical_boxes():
    assert iou((1, 2, 3, 5), (1, 2, 3, 5)) == 1.0 == giou((1, 2, 3, 5), (1, 2, 3, 5))


def test_degenerate_pair_rejected():
    with pytest.raises(DegenerateBox):
        giou((1, 1, 1, 1), (2, 2, 2, 3))
    # one degenerate box is fine
    assert iou((1, 1, 1, 1), (0, 0, 2, 2)) == 0.0


def test_lattice_count_equals_dense_raster(rng):
    a, b = random_xyxy(rng, 100), random_xyxy(rng, 100)
    dense = np.array([raster_overlap(x, y, 400) for x, y in zip(a, b)])
    np.testing.assert_array_equal(np.stack(lattice_overlap(a, b, 400), axis=1), dense)


def test_giou_properties_vs_raster(rng):
    a, b = random_xyxy(rng, 2000), random_xyxy(rng, 2000)
    g = np.array([giou(x, y) for x, y in zip(a, b)])
    i = np.array([iou(x, y) for x, y in zip(a, b)])
    g_rev = np.array([giou(y, x) for x, y in zip(a, b)])
    assert np.all(g > -1) and np.all(g <= 1) and np.all(g <= i)
    np.testing.assert_array_equal(g, g_rev)
    r_iou, r_giou = lattice_overlap(a, b, 2**24)
    assert np.abs(g - r_giou).max() < 1e-3 and np.abs(i - r_iou).max() < 1e-3


def test_pairwise_matches_scalar(rng):
    a, b = random_xyxy(rng, 6), random_xyxy(rng, 5)
    ious, gious = pairwise_iou_giou(a, b)
    for p in range(6):
        for q in range(5):
            assert ious[p, q] == pytest.approx(iou(a[p], b[q]), abs=1e-15)
            assert gious[p, q] == pytest.approx(giou(a[p], b[q]), abs=1e-15)


def test_giou_gradient(rng):
    for a, b in sample_giou_pairs(rng, 200):
        assert grad_check(lambda x: giou(x, b), a, giou_grad(a, b)) < 1e-4


# -- focal / L1 ---------------------------------------------------------------


def test_focal_hand_case():
    assert focal_loss(np.array([1.0]), np.array([0.9])) == pytest.approx(-(0.1**2) * math.log(0.9), rel=1e-12)
    assert focal_loss(np.array([1.0]), np.array([0.9])) == pytest.approx(0.0010536, abs=1e-7)


@given(st.lists(st.tuples(st.sampled_from([0.0, 1.0]), st.floats(0.01, 0.99)), min_size=1, max_size=10))
def test_focal_gamma_zero_is_bce(rows):
    v, p = map(np.array, zip(*rows))
    bce = -np.sum(v * np.log(p) + (1 - v) * np.log(1 - p))
    assert focal_loss(v, p, gamma=0.0) == pytest.approx(bce, rel=1e-12)
    assert focal_loss(v, p) <= focal_loss(v, p, gamma=0.0) + 1e-15


def test_focal_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        focal_loss(np.ones(3), np.ones(2) / 2)


def test_focal_gradient_hand_point():
    assert grad_check(lambda p: focal_loss(np.ones(1), p), np.array([0.7]), focal_grad(np.ones(1), np.array([0.7]))) < 1e-4


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0])
def test_focal_gradient_random(gamma, rng):
    for _ in range(50):
        v = (rng.random(6) < 0.4).astype(float)
        p = rng.uniform(0.02, 0.98, 6)
        assert grad_check(lambda x: focal_loss(v, x, gamma), p, focal_grad(v, p, gamma)) < 1e-4


def test_l1_and_gradient(rng):
    assert l1_loss(np.zeros((0, 4)), np.zeros((0, 4))) == 0.0
    assert l1_loss(np.array([[0, 0, 1, 1.0]]), np.array([[1, 0, 1, 0.0]])) == 0.5
    with pytest.raises(CountMismatch):
        l1_loss(np.zeros((1, 4)), np.zeros((2, 4)))
    a = rng.normal(size=(3, 4))
    b = a + rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.01, 1, size=(3, 4))
    assert grad_check(lambda x: l1_loss(x, b), a, l1_grad(a, b)) < 1e-4


def test_grad_check_flags_wrong_gradient():
    x = np.array([0.3, 0.4])
    assert grad_check(lambda z: float(np.sum(z**2)), x, 2 * x) < 1e-8
    assert grad_check(lambda z: float(np.sum(z**2)), x, x) > 0.1
    with pytest.raises(NonFiniteGradient):
        grad_check(lambda z: float("nan"), x, x)


# -- matching -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7), st.integers(1, 8), st.integers(0, 2**31), st.booleans())
def test_hungarian_equals_brute_force(p, g, seed, integer_costs):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 5, size=(p, g)).astype(float) if integer_costs else rng.random((p, g)) * 10
    m = match_hungarian(cost)
    assert len(m.pairs) == min(p, g)
    assert [i for i, _ in m.pairs] == sorted(i for i, _ in m.pairs)
    assert len({j for _, j in m.pairs}) == len(m.pairs)
    assert sorted(m.unmatched_predictions + [i for i, _ in m.pairs]) == list(range(p))
    assert assignment_cost(cost, m.pairs) == brute_force_assignment(cost)


def test_matching_cost_entries(rng):
    boxes_p = np.array([[0.5, 0.5, 0.2, 0.2], [0.3, 0.3, 0.1, 0.2]])
    boxes_g = np.array([[0.5, 0.5, 0.2, 0.2]])
    scores = np.array([[0.8, 0.1], [0.3, 0.6]])
    cost = matching_cost(boxes_p, scores, boxes_g, np.array([0]))
    assert cost.shape == (2, 1)
    # a perfect box leaves only the focal term
    assert cost[0, 0] == pytest.approx(2 * focal_loss(np.array([1.0, 0.0]), scores[0]), rel=1e-12)
    from rgbd_diffdet.box_diffusion import cxcywh_to_xyxy

    ref = (
        2 * focal_loss(np.array([1.0, 0.0]), scores[1])
        + 5 * np.mean(np.abs(boxes_p[1] - boxes_g[0]))
        + 2 * (1 - giou(cxcywh_to_xyxy(boxes_p[1]), cxcywh_to_xyxy(boxes_g[0])))
    )
    assert cost[1, 0] == pytest.approx(ref, rel=1e-12)
    assert match_hungarian(cost).pairs == [(0, 0)]


def test_total_loss_hand_composition():
    pred = np.array([[0.5, 0.5, 0.2, 0.2], [0.2, 0.2, 0.1, 0.1], [0.8, 0.8, 0.1, 0.1]])
    scores = np.array([[0.9, 0.1], [0.2, 0.3], [0.05, 0.6]])
    gt = np.array([[0.5, 0.5, 0.2, 0.2], [0.8, 0.75, 0.1, 0.1]])
    labels = np.array([0, 1])
    match = MatchResult([(0, 0), (2, 1)], [1])
    out = total_loss(pred, scores, gt, labels, match)
    targets = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    l_cls = focal_loss(targets, scores)
    l_l1 = np.mean(np.abs(pred[[0, 2]] - gt))
    from rgbd_diffdet.box_diffusion import cxcywh_to_xyxy

    l_giou = np.mean([1 - giou(cxcywh_to_xyxy(pred[i]), cxcywh_to_xyxy(gt[j])) for i, j in match.pairs])
    assert out.cls == pytest.approx(l_cls, rel=1e-12)
    assert out.l1 == pytest.approx(l_l1, rel=1e-12)
    assert out.giou == pytest.approx(l_giou, rel=1e-12)
    assert out.total == pytest.approx(2 * l_cls + 5 * l_l1 + 2 * l_giou, rel=1e-12)
    assert '"matches": [[0, 0], [2, 1]]' in out.to_json()


def test_total_loss_no_matches_and_weights():
    out = total_loss(np.zeros((2, 4)), np.full((2, 3), 0.2), np.zeros((0, 4)), np.zeros(0, int), MatchResult([], [0, 1]))
    assert out.l1 == out.giou == 0.0
    assert out.total == pytest.approx(2 * out.cls)
    with pytest.raises(ValueError):
        LossWeights(cls=-1.0)
    with pytest.raises(CountMismatch):
        total_loss(np.zeros((2, 4)), np.full((3, 3), 0.2), np.zeros((0, 4)), np.zeros(0, int), MatchResult([]))
