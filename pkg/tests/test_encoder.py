import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from strudel.encoder import (
    CLS,
    EOS,
    SEP,
    EncoderMode,
    ToyEncoder,
    build_encoder,
    encode,
    freeze_snapshot,
    toy_encoder,
)
from strudel.errors import EmptyQuery
from strudel.prompting import Marker, QuerySequence, build_context_query, build_text_query
from strudel.synthetic import CINEMA_DIALOGUE


def text_q(s):
    return build_text_query(s)


def test_shapes_and_cls():
    enc = toy_encoder(0, 16)
    q = build_context_query(CINEMA_DIALOGUE, None, "Sure.")
    out = encode(enc, q)
    ids, _ = enc.token_ids(q)
    assert out.hidden.shape == (len(ids), 16)
    assert torch.equal(out.cls, out.hidden[0])
    assert ids[0] == CLS and ids[-1] == EOS and ids.count(SEP) == 1


def test_deterministic_and_seeded():
    a, b, c = toy_encoder(3, 16), toy_encoder(3, 16), toy_encoder(4, 16)
    q = [text_q("Take the taxi.")]
    assert torch.equal(a.encode_cls(q), b.encode_cls(q))
    assert not torch.equal(a.encode_cls(q), c.encode_cls(q))


def test_seeding_does_not_touch_global_rng():
    torch.manual_seed(11)
    x = torch.rand(3)
    torch.manual_seed(11)
    toy_encoder(0, 16)
    assert torch.equal(torch.rand(3), x)


def test_different_inputs_differ():
    enc = toy_encoder(0, 16)
    v = enc.encode_cls([text_q("Take the taxi."), text_q("Eat sushi.")])
    assert not torch.allclose(v[0], v[1])


def test_batch_matches_single():
    enc = toy_encoder(0, 16)
    qs = [text_q("a"), text_q("a much longer sentence with padding after the short one")]
    batched = enc.encode_cls(qs)
    for i, q in enumerate(qs):
        torch.testing.assert_close(batched[i], enc.encode_cls([q])[0], rtol=1e-5, atol=1e-6)


def test_empty_query_rejected():
    with pytest.raises(EmptyQuery):
        toy_encoder(0, 16).encode_cls([])


def test_frozen_snapshot_is_independent():
    enc = toy_encoder(0, 16)
    snap = freeze_snapshot(enc)
    assert snap.mode is EncoderMode.FROZEN and enc.mode is EncoderMode.TRAINABLE
    assert all(not p.requires_grad for p in snap.parameters())
    q = [text_q("Pick a movie to watch.")]
    before = snap.encode_cls(q).clone()
    with torch.no_grad():
        for p in enc.parameters():
            p.add_(1.0)
    assert torch.equal(snap.encode_cls(q), before)
    assert not snap.encode_cls(q).requires_grad
    snap.train()
    assert not snap.training
    again = freeze_snapshot(snap)
    assert torch.equal(again.encode_cls(q), before)


def test_gradient_matches_finite_differences():
    enc = toy_encoder(0, 8, heads=2).double()
    q = [text_q("Take the taxi."), text_q("Eat sushi tonight.")]
    w = enc.blocks[0].qkv.weight

    def f():
        return enc.encode_cls(q).pow(2).sum()

    f().backward()
    grad = w.grad.clone()
    eps = 1e-6
    for idx in [(0, 0), (3, 5), (10, 2)]:
        with torch.no_grad():
            w[idx] += eps
            hi = f().item()
            w[idx] -= 2 * eps
            lo = f().item()
            w[idx] += eps
        fd = (hi - lo) / (2 * eps)
        assert abs(fd - grad[idx].item()) <= 1e-4 * max(1.0, abs(fd))


def test_truncation_keeps_recent_turns_and_candidate():
    enc = ToyEncoder(dim=8, max_seq_len=12)
    q = QuerySequence((Marker.CLS, "one two three four five six seven eight nine ten", Marker.SEP,
                       "cand", Marker.EOS))
    ids, segs = enc.token_ids(q)
    assert len(ids) == 12 and ids[-1] == EOS and ids[-2] != SEP
    # the candidate and the last dialogue words survive
    ref, _ = ToyEncoder(dim=8).token_ids(q)
    assert ids[-3:] == ref[-3:]
    assert ids[1] == ref[1 + 10 - 8]
    too_long = QuerySequence((Marker.CLS, "a", Marker.SEP, " ".join(["w"] * 20), Marker.EOS))
    with pytest.raises(ValueError):
        enc.token_ids(too_long)


@settings(max_examples=20)
@given(st.text(alphabet="abc xyz.", min_size=1, max_size=40).filter(str.strip))
def test_token_ids_grammar(text):
    enc = toy_encoder(0, 8)
    ids, segs = enc.token_ids(text_q(text))
    assert ids[0] == CLS and ids[-1] == EOS and len(ids) == len(segs)


def test_build_encoder_rejects_unknown():
    with pytest.raises(ValueError):
        build_encoder("nope", seed=0)


def test_hf_backend_tiny_local_model(tmp_path):
    transformers = pytest.importorskip("transformers")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "take", "the", "taxi", ".", "s1", ":",
             "sure", "eat", "sushi"]
    (tmp_path / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = transformers.BertTokenizer(str(tmp_path / "vocab.txt"))
    tok.save_pretrained(tmp_path)
    cfg = transformers.BertConfig(vocab_size=len(vocab), hidden_size=8, num_hidden_layers=1,
                                  num_attention_heads=2, intermediate_size=16,
                                  max_position_embeddings=64)
    torch.manual_seed(0)
    transformers.BertModel(cfg).save_pretrained(tmp_path)
    enc = build_encoder(f"hf:{tmp_path}", seed=0, max_seq_len=32)
    assert enc.dim == 8
    qs = [text_q("Take the taxi."), build_context_query(CINEMA_DIALOGUE, None, "Sure.")]
    v = enc.encode_cls(qs)
    assert v.shape == (2, 8)
    snap = freeze_snapshot(enc)
    torch.testing.assert_close(snap.encode_cls(qs[:1]), enc.encode_cls(qs[:1]))
