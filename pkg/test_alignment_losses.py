import math

import numpy as np
import pytest

import alignment_losses as al
import gradient_suite
import tensor_core as tc
from errors import DimensionError, DomainError, NumericError, ValidationError
from tensor_core import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_fcc_with_full_overlap_and_unit_similarity():
    S = al.sigmoid_normalize(np.ones((3, 4)))
    O = al.OverlapMatrix(Tensor(np.ones((3, 4))))
    assert abs(al.fcc_loss(S, O).item() - (1.0 - sigmoid(1.0))) < 1e-12
    assert al.fcc_loss(S, O).item() == pytest.approx(0.268941, abs=1e-6)


def test_total_loss_weighting():
    assert al.total_loss(1.0, 0.5, 0.2, al.LossWeights(alpha=2.0, beta=0.5)).item() == 2.1


def test_total_loss_default_weights():
    assert al.total_loss(0.0, 1.0, 1.0).item() == 2.5


def test_total_loss_rejects_bad_terms():
    with pytest.raises(DimensionError):
        al.total_loss(np.ones(2), 0.0, 0.0)
    with pytest.raises(NumericError):
        al.total_loss(float("nan"), 0.0, 0.0)
    with pytest.raises(ValidationError):
        al.LossWeights(alpha=-1.0)


def test_zero_weight_gives_zero_gradient_to_its_term():
    task, rank, fcc = (Tensor(v, requires_grad=True) for v in (1.0, 0.5, 0.2))
    al.total_loss(task, rank, fcc, al.LossWeights(alpha=0.0, beta=0.0)).backward()
    assert task.grad == 1.0
    assert rank.grad == 0.0 and fcc.grad == 0.0


def test_iou_of_identical_maps_is_one():
    m = np.random.Generator(np.random.PCG64(0)).random((3, 6))
    O = al.iou_matrix(m, m).values.data
    np.testing.assert_array_equal(np.diag(O), np.ones(3))


def test_iou_of_disjoint_maps_is_zero():
    a = np.array([[1.0, 0.0, 0.0]])
    b = np.array([[0.0, 1.0, 0.0]])
    assert al.iou_matrix(a, b).values.data[0, 0] == 0.0


def test_iou_of_empty_maps_is_zero_not_nan():
    O = al.iou_matrix(np.zeros((2, 4)), np.zeros((3, 4))).values.data
    np.testing.assert_array_equal(O, np.zeros((2, 3)))


def test_iou_rejects_negative_maps_and_length_mismatch():
    with pytest.raises(DomainError):
        al.iou_matrix(np.array([[0.5, -0.1]]), np.array([[0.5, 0.5]]))
    with pytest.raises(DimensionError):
        al.iou_matrix(np.ones((2, 3)), np.ones((2, 4)))


def test_cosine_similarity_bounds_and_zero_rows():
    r = np.random.Generator(np.random.PCG64(1))
    F_g = r.standard_normal((3, 5))
    S = al.cosine_similarity_matrix(F_g, F_g).data
    np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-12)
    assert np.all(np.abs(S) <= 1.0 + 1e-12)
    zero = al.cosine_similarity_matrix(np.zeros((1, 5)), F_g).data
    np.testing.assert_array_equal(zero, np.zeros((1, 3)))


def test_batched_fcc_matches_mean_of_items():
    r = np.random.Generator(np.random.PCG64(2))
    F_g, F_l = r.standard_normal((2, 3, 5)), r.standard_normal((2, 4, 5))
    M_g, M_l = r.random((2, 3, 6)), r.random((2, 4, 6))
    batched = al.fcc_loss(al.sigmoid_normalize(al.cosine_similarity_matrix(F_g, F_l)), al.iou_matrix(M_g, M_l))
    items = [al.fcc_loss(al.sigmoid_normalize(al.cosine_similarity_matrix(F_g[i], F_l[i])),
                         al.iou_matrix(M_g[i], M_l[i])).item() for i in range(2)]
    assert batched.item() == pytest.approx(np.mean(items), abs=1e-12)


def test_fcc_shape_mismatch():
    with pytest.raises(DimensionError):
        al.fcc_loss(al.SimilarityMatrix(tc.ones((2, 3))), al.OverlapMatrix(tc.ones((3, 2))))


def test_task_loss_uniform_is_ln_four():
    assert abs(al.task_loss_tokens(np.zeros((18, 4)), np.arange(18) % 4).item() - math.log(4.0)) < 1e-12


def test_fcc_path_gradient_matches_finite_differences():
    assert gradient_suite.check_target("fcc", seed=5, points=5).passed


def test_iou_of_swapped_masses_is_half():
    O = al.iou_matrix(np.array([[0.2, 0.4]]), np.array([[0.4, 0.2]])).values.data
    assert O[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_fcc_strictly_decreases_as_one_overlap_grows():
    r = np.random.Generator(np.random.PCG64(12))
    S = al.sigmoid_normalize(r.standard_normal((3, 4)))
    overlap = r.random((3, 4)) * 0.5
    before = al.fcc_loss(S, al.OverlapMatrix(Tensor(overlap))).item()
    overlap[1, 2] += 0.3
    after = al.fcc_loss(S, al.OverlapMatrix(Tensor(overlap))).item()
    assert after < before
    assert before - after == pytest.approx(S.values.data[1, 2] * 0.3 / 12, rel=1e-9)
