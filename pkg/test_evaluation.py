import json

import numpy as np
import pytest

import evaluation
import training
from config import RunConfig
from errors import ValidationError
from synth_data import synth_generate


@pytest.fixture(scope="module")
def corpora():
    return synth_generate(60, seed=0), synth_generate(20, seed=1)


def test_queries_from_the_database_hit_perfectly(corpora):
    train_records, _ = corpora
    config = RunConfig.desk()
    report = evaluation.evaluate(training.init_model(config), config, train_records, train_records[:15])
    assert report.p_at_1 == 1.0
    assert report.mean_retrieved_hamming == 0.0 == report.mean_oracle_hamming


def test_oracle_matches_exhaustive_scan(corpora):
    train_records, test_records = corpora
    oracle = evaluation.oracle_hamming(test_records, train_records)
    for q, row in zip(test_records, oracle):
        expected = [2 * sum(a != b for a, b in zip(q.labels, r.labels)) for r in train_records]
        np.testing.assert_array_equal(row, expected)


def test_report_fields(corpora):
    train_records, test_records = corpora
    config = RunConfig.desk()
    report = evaluation.evaluate(training.init_model(config), config, train_records, test_records, [3.0, 2.0])
    assert 0.0 <= report.p_at_1 <= 1.0
    assert report.mean_retrieved_hamming >= report.mean_oracle_hamming
    assert len(report.per_class_hit_rate) == 18
    assert sorted(report.head_classes + report.tail_classes) == list(range(18))
    assert (report.n_queries, report.n_database) == (20, 60)
    assert report.loss_curve == (3.0, 2.0)
    assert "wall_time" not in report.metrics()
    assert 0.0 <= report.token_accuracy <= 1.0
    assert len(report.per_class_f1) == 18
    assert 0.0 <= report.head_f1 <= 1.0 and 0.0 <= report.tail_f1 <= 1.0


def test_metrics_file_is_reproducible(corpora, tmp_path):
    train_records, test_records = corpora
    config = RunConfig.desk()
    model = training.init_model(config)
    a = evaluation.write_metrics(tmp_path / "a.json",
                                 evaluation.evaluate(model, config, train_records, test_records))
    b = evaluation.write_metrics(tmp_path / "b.json",
                                 evaluation.evaluate(model, config, train_records, test_records))
    assert a.read_bytes() == b.read_bytes()
    assert set(json.loads(a.read_text())["config"]) == set(config.to_dict())


def test_head_tail_split_uses_training_rates():
    head, tail = evaluation.head_tail_split(synth_generate(3000, seed=2))
    assert 2 in head and 10 in tail


def test_report_rejects_out_of_range_rates():
    with pytest.raises(ValidationError):
        evaluation.EvalReport(p_at_1=1.5, mean_retrieved_hamming=0.0, mean_oracle_hamming=0.0,
                              per_class_hit_rate=(0.0,) * 18, per_class_support=(0,) * 18, head_classes=(),
                              tail_classes=(), head_hit_rate=0.0, tail_hit_rate=0.0, n_queries=1, n_database=1)


@pytest.mark.slow
def test_trained_model_beats_untrained():
    config = RunConfig.desk()
    train_records = synth_generate(config.n_train, seed=config.seed)
    test_records = synth_generate(config.n_test, seed=config.seed + 1)
    untrained = evaluation.evaluate(training.init_model(config, records=train_records), config, train_records,
                                    test_records)
    trained = evaluation.evaluate(training.train(config, train_records).model, config, train_records, test_records)
    assert trained.p_at_1 > untrained.p_at_1
    assert trained.mean_retrieved_hamming < untrained.mean_retrieved_hamming


@pytest.mark.slow
def test_training_improves_retrieval_across_seeds():
    gains = []
    for seed in range(1, 6):
        config = RunConfig.desk().replace(seed=seed)
        train_records = synth_generate(config.n_train, seed=seed)
        test_records = synth_generate(config.n_test, seed=seed + 100)
        model = training.init_model(config, records=train_records)
        untrained = evaluation.evaluate(model, config, train_records, test_records)
        trained = evaluation.evaluate(training.train(config, train_records).model, config, train_records,
                                      test_records)
        gains.append(trained.p_at_1 - untrained.p_at_1)
    assert np.mean(gains) > 0
    assert sum(g > 0 for g in gains) >= 4


def test_positive_f1_counts():
    truth = np.zeros((4, 18), dtype=np.int64)
    predicted = np.zeros((4, 18), dtype=np.int64)
    truth[:2, 0] = 1
    predicted[:1, 0] = 1
    predicted[2, 0] = 1
    predicted[3, 5] = 1
    f1 = evaluation.positive_f1(predicted, truth)
    assert f1[0] == pytest.approx(0.5)  # tp=1, fp=1, fn=1
    assert f1[5] == 0.0
    assert f1[1] == 0.0


def test_token_metrics_follow_the_attention_mode(corpora):
    train_records, test_records = corpora
    config = RunConfig.desk()
    model = training.init_model(config, records=train_records)
    mpsa = evaluation.evaluate(model, config, train_records, test_records)
    softmax = evaluation.evaluate(model, config.replace(attention="softmax"), train_records, test_records)
    assert mpsa.p_at_1 == softmax.p_at_1
    assert (mpsa.token_accuracy, mpsa.per_class_f1) != (softmax.token_accuracy, softmax.per_class_f1)


def test_report_rejects_out_of_range_token_accuracy():
    with pytest.raises(ValidationError):
        evaluation.EvalReport(p_at_1=0.5, mean_retrieved_hamming=0.0, mean_oracle_hamming=0.0,
                              per_class_hit_rate=(0.0,) * 18, per_class_support=(0,) * 18, head_classes=(),
                              tail_classes=(), head_hit_rate=0.0, tail_hit_rate=0.0, n_queries=1, n_database=1,
                              token_accuracy=1.2)
