import math

import numpy as np
import pytest

from utils.errors import DimensionError, InvalidLabelError, NumericError
from utils.losses import (
    InstanceGroups,
    LossComponents,
    LossWeights,
    attract_loss,
    instance_groups_from_cells,
    numeric_gradient,
    offset_l2_loss,
    repel_loss,
    total_loss,
    weighted_ce,
)


def random_groups(rng, n_inst=None) -> InstanceGroups:
    n_inst = n_inst or int(rng.integers(2, 6))
    centroids = rng.uniform(-6, 6, size=(n_inst, 2))
    points = [c + rng.normal(0, 1.5, size=(int(rng.integers(1, 5)), 2)) for c in centroids]
    return InstanceGroups.from_lists(points, centroids)


def check_gradient(loss_fn, groups: InstanceGroups):
    analytic = loss_fn(groups).grad
    numeric = numeric_gradient(lambda pos: loss_fn(groups.with_positions(pos)).value, groups.positions)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_repel_two_single_point_instances():
    groups = InstanceGroups.from_lists([[[0.0, 0.0]], [[1.0, 0.0]]], [[0.0, 0.0], [4.0, 0.0]])
    assert repel_loss(groups).value == pytest.approx(3.0)


def test_repel_single_instance_is_zero():
    groups = InstanceGroups.from_lists([[[0.0, 0.0], [5.0, 5.0]]], [[1.0, 1.0]])
    result = repel_loss(groups)
    assert result.value == 0.0
    assert not result.grad.any()


def test_repel_clamps_when_points_spread_wider():
    groups = InstanceGroups.from_lists([[[-5.0, 0.0]], [[9.0, 0.0]]], [[0.0, 0.0], [4.0, 0.0]])
    assert repel_loss(groups).value == 0.0


def test_repel_gradient(rng):
    for _ in range(100):
        check_gradient(repel_loss, random_groups(rng))


def nearest_distances(groups: InstanceGroups) -> np.ndarray:
    """포인트별 d̂: 다른 instance 포인트까지 최소 거리 (전수 계산)"""
    out = np.empty(len(groups.positions))
    for k, (pos, inst) in enumerate(zip(groups.positions, groups.membership)):
        others = groups.positions[groups.membership != inst]
        out[k] = np.linalg.norm(others - pos, axis=1).min()
    return out


def test_repel_step_pushes_instances_apart():
    groups = InstanceGroups.from_lists(
        [[[0.0, 0.0], [0.5, 0.2]], [[1.0, 0.0], [1.2, -0.3]]], [[0.0, 0.0], [4.0, 0.0]]
    )
    before = repel_loss(groups)
    moved = groups.with_positions(groups.positions - 1e-2 * before.grad)
    after = repel_loss(moved)
    assert before.value > 0
    assert after.value < before.value

    d_before, d_after = nearest_distances(groups), nearest_distances(moved)
    closest = int(np.argmin(d_before))
    assert d_after[closest] > d_before[closest]
    # 모든 점이 d = 4 m 안쪽이라 활성 상태
    assert (d_after > d_before).all()


def test_repel_matches_exhaustive_nearest(rng):
    for _ in range(20):
        groups = random_groups(rng, n_inst=int(rng.integers(2, 8)))
        d = np.array([
            min(np.linalg.norm(a - b) for j, b in enumerate(groups.centroids) if j != i)
            for i, a in enumerate(groups.centroids)
        ])
        term = np.maximum(0.0, d[groups.membership] - nearest_distances(groups))
        expected = np.sum(term / (groups.num_instances * groups.sizes[groups.membership]))
        assert repel_loss(groups).value == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_repel_on_many_points_stays_linear_in_memory(rng):
    # (P, P) 거리 행렬이면 수 GB 가 필요한 크기
    centroids = rng.uniform(-80, 80, size=(60, 2))
    points = [c + rng.normal(0, 0.5, size=(500, 2)) for c in centroids]
    groups = InstanceGroups.from_lists(points, centroids)
    assert len(groups.positions) == 30000
    result = repel_loss(groups)
    assert np.isfinite(result.value)
    assert result.grad.shape == (30000, 2)


@pytest.mark.parametrize("loss_fn", [repel_loss, attract_loss])
def test_losses_invariant_to_ordering(rng, loss_fn):
    for _ in range(20):
        groups = random_groups(rng, n_inst=4)
        base = loss_fn(groups)

        # instance 순서 변경
        order = rng.permutation(groups.num_instances)
        rank = np.argsort(order)
        relabeled = InstanceGroups(groups.positions, rank[groups.membership], groups.centroids[order])
        result = loss_fn(relabeled)
        assert result.value == pytest.approx(base.value, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(result.grad, base.grad, atol=1e-12)

        # 포인트 순서 변경 (instance 내부 포함)
        perm = rng.permutation(len(groups.positions))
        shuffled = InstanceGroups(groups.positions[perm], groups.membership[perm], groups.centroids)
        result = loss_fn(shuffled)
        assert result.value == pytest.approx(base.value, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(result.grad, base.grad[perm], atol=1e-12)


def test_attract_coincident_points_is_zero():
    groups = InstanceGroups.from_lists([[[1.0, 1.0]] * 3, [[4.0, 2.0]] * 2], [[0.0, 0.0], [5.0, 5.0]])
    assert attract_loss(groups).value == 0.0


def test_attract_two_points():
    groups = InstanceGroups.from_lists([[[0.0, 0.0], [2.0, 0.0]]], [[1.0, 0.0]])
    result = attract_loss(groups)
    assert result.value == pytest.approx(1.0)
    np.testing.assert_allclose(result.grad, [[-0.5, 0.0], [0.5, 0.0]])


def test_attract_gradient(rng):
    for _ in range(100):
        check_gradient(attract_loss, random_groups(rng))


def test_groups_reject_empty_instance():
    with pytest.raises(DimensionError):
        InstanceGroups(np.zeros((2, 2)), np.array([0, 0]), np.zeros((2, 2)))


def test_instance_groups_from_cells():
    positions = np.arange(10, dtype=float).reshape(5, 2)
    groups = instance_groups_from_cells(
        positions, np.array([0, 3, 3, 5, 9]), {3: np.array([1.0, 1.0]), 5: np.array([2.0, 2.0])}
    )
    assert groups.num_instances == 2
    assert groups.membership.tolist() == [0, 0, 1]
    np.testing.assert_array_equal(groups.positions, positions[1:4])


def test_l2_identical_is_zero(rng):
    pred = rng.normal(size=(3, 4, 2))
    assert offset_l2_loss(pred, pred.copy(), np.ones((3, 4), dtype=bool)).value == 0.0


def test_l2_single_pixel():
    pred = np.zeros((2, 2, 2))
    target = np.zeros((2, 2, 2))
    target[1, 0] = (3.0, 4.0)
    target[0, 1] = (100.0, 0.0)
    mask = np.zeros((2, 2), dtype=bool)
    mask[1, 0] = True
    assert offset_l2_loss(pred, target, mask).value == pytest.approx(25.0)


def test_l2_matches_loop_and_gradient(rng):
    for _ in range(100):
        pred = rng.normal(size=(4, 5, 2))
        target = rng.normal(size=(4, 5, 2))
        mask = rng.random((4, 5)) < 0.5
        mask[0, 0] = True
        total, count = 0.0, 0
        for r in range(4):
            for c in range(5):
                if mask[r, c]:
                    total += (pred[r, c, 0] - target[r, c, 0]) ** 2 + (pred[r, c, 1] - target[r, c, 1]) ** 2
                    count += 1
        result = offset_l2_loss(pred, target, mask)
        assert result.value == pytest.approx(total / count)
        numeric = numeric_gradient(lambda p: offset_l2_loss(p, target, mask).value, pred)
        np.testing.assert_allclose(result.grad, numeric, rtol=1e-5, atol=1e-7)


def test_l2_shape_mismatch():
    with pytest.raises(DimensionError):
        offset_l2_loss(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)), np.ones((2, 2), dtype=bool))


def test_wce_uniform_logits():
    result = weighted_ce(np.zeros((3, 2)), np.array([1, 0, 1]), np.ones(2), ignore_index=None)
    assert result.value == pytest.approx(math.log(2))


def test_wce_saturated_logit():
    logits = np.array([[0.0, 50.0, 0.0]])
    assert weighted_ce(logits, np.array([1]), np.ones(3)).value < 1e-6


def test_wce_ignores_unlabeled():
    logits = np.array([[9.0, -9.0], [0.0, 0.0]])
    result = weighted_ce(logits, np.array([0, 1]), np.ones(2))
    assert result.value == pytest.approx(math.log(2))
    assert not result.grad[0].any()


def test_wce_matches_reference_and_gradient(rng):
    for _ in range(100):
        logits = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        labels[0] = 2
        weights = rng.uniform(0.5, 3.0, size=4)
        num = den = 0.0
        for z, y in zip(logits, labels):
            if y == 0:
                continue
            log_p = z[y] - math.log(sum(math.exp(v) for v in z))
            num += -weights[y] * log_p
            den += weights[y]
        result = weighted_ce(logits, labels, weights)
        assert result.value == pytest.approx(num / den)
        numeric = numeric_gradient(lambda z: weighted_ce(z, labels, weights).value, logits)
        np.testing.assert_allclose(result.grad, numeric, rtol=1e-4, atol=1e-8)


def test_wce_rejects_out_of_range_labels():
    with pytest.raises(InvalidLabelError):
        weighted_ce(np.zeros((2, 3)), np.array([1, 3]), np.ones(3))


def test_total_loss_weights():
    assert total_loss(LossComponents()) == 0.0
    ones = LossComponents(wce=1, ls=1, tv=1, l2=1, repel=1, attract=1)
    assert total_loss(ones, LossWeights()) == pytest.approx(7.3)
    assert total_loss(ones, LossWeights(tv=0.0)) == pytest.approx(2.3)


def test_negative_loss_weight():
    with pytest.raises(ValueError):
        LossWeights(repel=-0.1)


def test_numeric_gradient_quadratic():
    grad = numeric_gradient(lambda x: float(x[0] ** 2), np.array([3.0]), step=1e-4)
    assert grad[0] == pytest.approx(6.0, abs=1e-6)


def test_numeric_gradient_constant():
    assert not numeric_gradient(lambda x: 4.0, np.ones((2, 3))).any()


def test_numeric_gradient_errors():
    with pytest.raises(NumericError):
        numeric_gradient(lambda x: float("nan"), np.zeros(2))
    with pytest.raises(ValueError):
        numeric_gradient(lambda x: 0.0, np.zeros(2), step=0.0)
