import numpy as np
import pytest

import supervision
from errors import ValidationError
from supervision import NUM_CATEGORIES, VECTOR_BITS, LabelRecord, Status, StatusVector


def random_labels(rng, n):
    return rng.integers(0, 4, size=(n, NUM_CATEGORIES))


def test_encoding_sets_one_bit_per_category():
    v = supervision.encode_status_vector([Status.POSITIVE] + [Status.BLANK] * 17)
    assert v.popcount() == NUM_CATEGORIES
    assert v.bits[1] == 1 and v.bits[0] == 0
    assert v.bits.shape == (VECTOR_BITS,)


def test_decode_inverts_encode():
    rng = np.random.Generator(np.random.PCG64(0))
    for row in random_labels(rng, 20):
        assert supervision.decode_status_vector(supervision.encode_status_vector(row)) == tuple(row)


def test_hamming_is_twice_the_number_of_disagreeing_categories():
    a = [0] * NUM_CATEGORIES
    b = [0] * NUM_CATEGORIES
    b[3], b[7] = 1, 2
    va, vb = supervision.encode_status_vector(a), supervision.encode_status_vector(b)
    assert supervision.hamming_distance(va, vb) == 4
    assert supervision.hamming_distance(va, va) == 0


def test_invalid_status_rejected():
    with pytest.raises(ValidationError):
        supervision.encode_status_vector([4] + [0] * 17)
    with pytest.raises(ValidationError):
        supervision.encode_status_vector([0] * 17)


def test_status_vector_needs_one_hot_blocks():
    bits = np.zeros(VECTOR_BITS, dtype=np.uint8)
    with pytest.raises(ValidationError):
        StatusVector(bits)


def test_hamming_matrix_matches_pairwise_bit_counts():
    rng = np.random.Generator(np.random.PCG64(1))
    vectors = supervision.status_vectors(random_labels(rng, 30))
    D = supervision.hamming_matrix(vectors)
    expected = np.array([[int(np.count_nonzero(u.bits != v.bits)) for v in vectors] for u in vectors])
    np.testing.assert_array_equal(D, expected)
    np.testing.assert_array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)
    assert np.all(D % 2 == 0) and D.max() <= 2 * NUM_CATEGORIES


def test_hamming_matrix_needs_two_vectors():
    with pytest.raises(ValidationError):
        supervision.hamming_matrix(supervision.status_vectors([[0] * NUM_CATEGORIES]))


def test_hamming_to_database_matches_pairwise():
    rng = np.random.Generator(np.random.PCG64(2))
    db = supervision.status_vectors(random_labels(rng, 12))
    q = db[5]
    d = supervision.hamming_to_database(q, db)
    assert d[5] == 0
    assert list(d) == [supervision.hamming_distance(q, v) for v in db]


def test_label_record_round_trip():
    record = LabelRecord(id="r1", statuses=[1, 2, 3] + [0] * 15)
    assert supervision.decode_status_vector(record.status_vector()) == record.statuses


def test_category_table():
    assert len(supervision.CATEGORY_NAMES) == NUM_CATEGORIES
    assert supervision.CATEGORY_NAMES[2] == "Lung Opacity"
