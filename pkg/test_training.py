import numpy as np
import pytest

import hyperbolic
import training
from config import RunConfig
from errors import DimensionError, ValidationError
from hyperbolic import BallConfig
from lre_retrieval import pairwise_distances
from synth_data import synth_generate


def small_config(**overrides):
    return RunConfig.desk().replace(**{"steps": 2, "batch_size": 4, **overrides})


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(24, seed=0)


def test_forward_losses_are_finite_scalars(corpus):
    config = small_config()
    losses = training.forward_losses(training.init_model(config), corpus[:4], config)
    values = losses.values()
    assert all(np.isfinite(v) for v in values.values())
    assert values["total"] == pytest.approx(values["task"] + 2.0 * values["rank"] + 0.5 * values["fcc"])
    assert losses.map_g.shape == (4, config.spatial, 8)
    assert losses.map_l.shape == (4, config.spatial, 12)
    assert all(j != i for i, j in enumerate(losses.grp_rows))


def test_zero_rank_weight_leaves_hnn_without_gradient(corpus):
    config = small_config(alpha=0.0)
    model = training.init_model(config)
    training.forward_losses(model, corpus[:4], config).total.backward()
    for name, p in model.parameters().items():
        if name.startswith("hnn."):
            assert p.grad is None or not np.any(p.grad)
    assert np.any(model.head_weight.grad)


def test_zero_weights_reduce_total_to_task(corpus):
    config = small_config(alpha=0.0, beta=0.0)
    losses = training.forward_losses(training.init_model(config), corpus[:4], config)
    assert losses.total.item() == losses.task.item()


def test_zero_learning_rate_step_keeps_checkpoint_bit_identical(corpus, tmp_path):
    config = small_config(lr=0.0, steps=1)
    before = training.save_model(tmp_path / "before.json", training.init_model(config, records=corpus), config)
    result = training.train(config, corpus)
    after = training.save_model(tmp_path / "after.json", result.model, config)
    assert before.read_bytes() == after.read_bytes()


def test_training_is_deterministic(corpus):
    config = small_config()
    a = training.train(config, corpus)
    b = training.train(config, corpus)
    assert a.loss_curve == b.loss_curve
    assert len(a.loss_curve) == 2
    assert set(a.term_curves) == {"task", "rank", "fcc"}


def test_checkpoint_round_trip(corpus, tmp_path):
    config = small_config(backend="cosine")
    model = training.train(config, corpus).model
    training.save_model(tmp_path / "ckpt.json", model, config)
    loaded, loaded_config = training.load_model(tmp_path / "ckpt.json")
    assert loaded_config == config
    original = model.to_arrays()
    for name, arr in loaded.to_arrays().items():
        assert arr.tobytes() == np.asarray(original[name]).tobytes(), name


def test_training_preconditions(corpus):
    with pytest.raises(ValidationError):
        training.train(small_config(batch_size=30), corpus)
    with pytest.raises(DimensionError):
        training.train(small_config(d_t=16), corpus)


def test_batch_schedule_draws_without_replacement():
    for idx in training.batch_schedule(10, small_config(steps=20)):
        assert len(set(idx.tolist())) == 4


@pytest.mark.slow
def test_desk_training_reduces_loss():
    config = RunConfig.desk()
    result = training.train(config, synth_generate(config.n_train, seed=config.seed))
    assert result.loss_curve[-1] < result.loss_curve[0]
    assert np.mean(result.loss_curve[-20:]) < np.mean(result.loss_curve[:20])


def test_forward_losses_record_grp_refs(corpus):
    config = small_config()
    losses = training.forward_losses(training.init_model(config), corpus[:4], config)
    assert losses.grp_refs == tuple(corpus[j].id for j in losses.grp_rows)
    assert all(ref != r.id for ref, r in zip(losses.grp_refs, corpus[:4]))


def test_grp_prompts_follow_the_reference(corpus):
    linked = training.assign_grp_refs(corpus[:3], [corpus[5], corpus[6], corpus[5]])
    assert [r.prompt_global_ref for r in linked] == [corpus[5].id, corpus[6].id, corpus[5].id]
    prompts = training.grp_prompts(linked, corpus)
    np.testing.assert_array_equal(prompts[2], corpus[5].prompts_global)
    with pytest.raises(ValidationError):
        training.grp_prompts(corpus[:1], corpus)


def test_standardised_hnn_spreads_batch_distances(corpus):
    config = small_config(batch_size=16)
    model = training.init_model(config, records=corpus)
    assert model.hnn.standardised
    batch = corpus[:16]
    points = hyperbolic.hnn_embed(np.stack([r.logits for r in batch]), model.hnn)
    assert np.all(np.linalg.norm(points.data, axis=1) < BallConfig().max_norm - 1e-9)
    D_hat = pairwise_distances(points, "hyperbolic").values.data
    assert np.ptp(D_hat[~np.eye(16, dtype=bool)]) > 0.1

    losses = training.forward_losses(model, batch, config)
    assert abs(losses.rank.item() - np.log(15)) > 1e-3
    losses.total.backward()
    assert np.max(np.abs(model.hnn.weight.grad)) > 1e-6


def test_predict_tokens_depends_on_attention_mode(corpus):
    config = small_config()
    model = training.init_model(config, records=corpus)
    queries = training.assign_grp_refs(corpus[:6], corpus[6:12])
    mpsa = training.predict_tokens(model, queries, corpus, config, chunk=4)
    softmax = training.predict_tokens(model, queries, corpus, config.replace(attention="softmax"))
    assert mpsa.shape == (6, 18)
    assert np.all((mpsa >= 0) & (mpsa < 4))
    assert np.any(mpsa != softmax)


def test_fcc_weight_reaches_the_fusion_branches(corpus):
    plain = training.train(small_config(beta=0.0), corpus).model
    tied = training.train(small_config(beta=0.5), corpus).model
    assert not np.array_equal(plain.branch_g.W_q.data, tied.branch_g.W_q.data)
    np.testing.assert_array_equal(plain.hnn.weight.data, tied.hnn.weight.data)
