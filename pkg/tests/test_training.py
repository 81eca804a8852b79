import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from strudel.errors import CheckpointMismatch, EmptyBatch
from strudel.heads import annotation_embeddings
from strudel.training import (
    Checkpoint,
    TrainConfig,
    build_model,
    ce_term,
    finetune,
    posttrain,
    posttrain_loss,
    sm_term,
)

FAST = TrainConfig(encoder_dim=8, gat_layers=1, steps_posttrain=6, steps_finetune=4, seed=1)


@pytest.fixture(scope="module")
def model_and_data(fixture_corpus):
    _, _, examples, pairs = fixture_corpus
    model = build_model(FAST.replace(dtype="float64"))
    model.snapshot_frozen()
    return model, pairs, examples


@settings(max_examples=20)
@given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 1000))
def test_loss_linearity(model_and_data, a1, a2, seed):
    model, pairs, examples = model_and_data
    rnd = random.Random(seed)
    ha, ce = rnd.sample(pairs, 2), rnd.sample(examples, 3)
    with torch.no_grad():
        total = posttrain_loss(model, ha, ce, FAST.replace(alpha1=a1, alpha2=a2)).item()
        combo = a1 * sm_term(model, ha).item() + a2 * ce_term(model, ce).item()
    assert abs(total - combo) <= 1e-6 * max(1.0, abs(combo))


def test_degenerate_alphas(model_and_data):
    model, pairs, examples = model_and_data
    with torch.no_grad():
        sm_only = posttrain_loss(model, pairs[:2], [], FAST.replace(alpha2=0.0))
        ce_only = posttrain_loss(model, [], examples[:2], FAST.replace(alpha1=0.0))
    torch.testing.assert_close(sm_only, sm_term(model, pairs[:2]))
    torch.testing.assert_close(ce_only, ce_term(model, examples[:2]))
    with pytest.raises(ValueError):
        FAST.replace(alpha1=0.0, alpha2=0.0).validate("posttrain")
    with pytest.raises(EmptyBatch):
        sm_term(model, [])
    with pytest.raises(EmptyBatch):
        ce_term(model, [])


def test_config_round_trip(tmp_path):
    import json

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"alpha1": 0.5, "gat_layers": 2}))
    cfg = TrainConfig.load(path)
    assert cfg.alpha1 == 0.5 and cfg.gat.layers == 2
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})
    assert cfg.arch_hash() == cfg.replace(alpha1=3.0, seed=9).arch_hash()
    assert cfg.arch_hash() != cfg.replace(encoder_dim=32).arch_hash()


def _state_equal(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_reproducible(fixture_corpus):
    _, _, examples, pairs = fixture_corpus
    r1 = posttrain(build_model(FAST), pairs, examples, FAST)
    r2 = posttrain(build_model(FAST), pairs, examples, FAST)
    assert r1.checkpoint.history == r2.checkpoint.history
    assert _state_equal(r1.checkpoint.state, r2.checkpoint.state)


def test_zero_steps_leaves_parameters(fixture_corpus):
    _, _, examples, pairs = fixture_corpus
    cfg = FAST.replace(steps_posttrain=0)
    model = build_model(cfg)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    res = posttrain(model, pairs, examples, cfg)
    assert res.checkpoint.history == []
    assert _state_equal(before, res.checkpoint.state)


def test_resume_matches_uninterrupted(fixture_corpus, tmp_path):
    _, _, examples, pairs = fixture_corpus
    full = posttrain(build_model(FAST), pairs, examples, FAST)
    half = posttrain(build_model(FAST), pairs, examples, FAST.replace(steps_posttrain=3))
    half.checkpoint.save(tmp_path / "half.pt")
    resumed_ckpt = Checkpoint.load(tmp_path / "half.pt")
    resumed = posttrain(resumed_ckpt.build(), pairs, examples, FAST, resume=resumed_ckpt)
    assert resumed.checkpoint.history == pytest.approx(full.checkpoint.history, rel=1e-6)
    for k, v in full.checkpoint.state.items():
        torch.testing.assert_close(resumed.checkpoint.state[k], v, rtol=1e-5, atol=1e-6)


def test_frozen_targets_unchanged_by_training(fixture_corpus):
    _, annotations, examples, pairs = fixture_corpus
    model = build_model(FAST)
    model.snapshot_frozen()
    texts = [annotations[0][k] for k in annotations[0].present()]
    before = annotation_embeddings(model.frozen, texts).numpy().tobytes()
    res = posttrain(model, pairs, examples, FAST)
    after = annotation_embeddings(res.model.frozen, texts).numpy().tobytes()
    assert before == after


def test_finetune_and_checkpoint_guard(fixture_corpus, tmp_path):
    _, _, examples, pairs = fixture_corpus
    post = posttrain(build_model(FAST), pairs, examples, FAST)
    ft = finetune(post.checkpoint, examples, FAST)
    assert ft.checkpoint.phase == "finetune" and len(ft.checkpoint.history) == 4
    assert ft.checkpoint.config == FAST
    with pytest.raises(CheckpointMismatch):
        post.checkpoint.build(FAST.replace(encoder_dim=16))
    with pytest.raises(EmptyBatch):
        finetune(post.checkpoint, [], FAST)
