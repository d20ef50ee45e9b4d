from collections import defaultdict

import numpy as np
import pytest

import synth_data
from errors import ValidationError
from supervision import Status


def test_same_seed_gives_byte_identical_corpus(tmp_path):
    a = synth_data.write_corpus(tmp_path / "a.jsonl", synth_data.synth_generate(50, seed=4))
    b = synth_data.write_corpus(tmp_path / "b.jsonl", synth_data.synth_generate(50, seed=4))
    assert a.read_bytes() == b.read_bytes()
    c = synth_data.write_corpus(tmp_path / "c.jsonl", synth_data.synth_generate(50, seed=5))
    assert a.read_bytes() != c.read_bytes()


def test_read_corpus_restores_records(tmp_path):
    records = synth_data.synth_generate(10, seed=1)
    back = synth_data.read_corpus(synth_data.write_corpus(tmp_path / "c.jsonl", records))
    assert [r.id for r in back] == [r.id for r in records]
    for r, s in zip(records, back):
        assert r.labels == s.labels and r.tokens == s.tokens
        assert r.logits.tobytes() == s.logits.tobytes()
        assert r.prompts_global.tobytes() == s.prompts_global.tobytes()


def test_shapes():
    record = synth_data.synth_generate(3, seed=0, d_t=8)[0]
    assert record.logits.shape == (synth_data.NUM_ENTITIES,)
    assert record.prompts_local.shape == (synth_data.NUM_LOCAL_PROMPTS, 8)
    assert record.prompts_global.shape == (synth_data.NUM_GLOBAL_PROMPTS, 8)
    assert record.d_t == 8


def test_noiseless_logits_are_a_function_of_labels():
    groups = defaultdict(list)
    for r in synth_data.synth_generate(3000, seed=2, noise=0.0):
        groups[r.labels].append(r.logits)
    repeated = [g for g in groups.values() if len(g) > 1]
    assert repeated
    for g in repeated:
        for logits in g[1:]:
            np.testing.assert_array_equal(logits, g[0])


def test_positive_rate_follows_class_prior():
    rates = synth_data.positive_rates(synth_data.synth_generate(10000, seed=3))
    assert abs(rates[2] - 0.361) <= 0.02
    assert rates[2] > rates[13]


def test_child_finding_raises_parent_entities():
    world = synth_data.generative_model()
    records = synth_data.synth_generate(5000, seed=6)
    owned = np.flatnonzero(np.arange(synth_data.NUM_ENTITIES) % 18 == 2)
    with_child, without = [], []
    for r in records:
        if r.labels[2] == Status.POSITIVE:
            continue
        target = with_child if r.labels[3] == Status.POSITIVE else without
        target.append(r.logits[owned].mean())
    assert world.influence.shape == (72, synth_data.NUM_ENTITIES)
    assert np.mean(with_child) > np.mean(without) + 0.5


def test_world_is_shared_across_seeds():
    a, b = synth_data.generative_model(16, 0), synth_data.generative_model(16, 0)
    np.testing.assert_array_equal(a.influence, b.influence)
    assert not np.array_equal(a.influence, synth_data.generative_model(16, 1).influence)


@pytest.mark.parametrize("kwargs", [
    {"n": 1},
    {"n": 10, "noise": -0.1},
    {"n": 10, "class_priors": [0.5] * 17},
    {"n": 10, "class_priors": [1.5] + [0.1] * 17},
])
def test_invalid_arguments(kwargs):
    with pytest.raises(ValidationError):
        synth_data.synth_generate(**kwargs)


def test_check_corpus_rejects_duplicates_and_mixed_widths():
    a = synth_data.synth_generate(2, seed=0)
    with pytest.raises(ValidationError):
        synth_data.check_corpus([a[0], a[0]])
    other = synth_data.synth_generate(2, seed=1, d_t=8)
    with pytest.raises(ValidationError):
        synth_data.check_corpus([a[0], other[0]])
    with pytest.raises(ValidationError):
        synth_data.check_corpus([])


def test_malformed_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(ValidationError):
        synth_data.read_corpus(path)
    path.write_text('{"id": "x"}\n')
    with pytest.raises(ValidationError):
        synth_data.read_corpus(path)
