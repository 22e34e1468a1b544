"""Synthetic sentence task: vocabulary invariants, the pad intervention,
bag-of-vectors encoding, and the token-toggle effect."""

import numpy as np
import pytest
from scipy.special import expit

from erasure_lab.latent import compute_kappa
from erasure_lab.maxmargin import LinearClassifier
from erasure_lab.text import (
    NUMBERED_WORDS,
    PAD_REPEAT,
    PAD_WORD,
    PLAIN_WORDS,
    EmbeddingTable,
    Sentence,
    Vocab,
    delta_prob,
    delta_prob_scores,
    encode_corpus,
    encode_nbow,
    gen_corpus,
    gen_sentence,
    intervene_concept,
    load_corpus,
    load_table,
    save_corpus,
    save_table,
    sentence_from_tokens,
)


def table():
    return EmbeddingTable.build(dim=16, seed=0)


def test_vocabulary_frozen():
    assert len(NUMBERED_WORDS) == 28
    assert len(PLAIN_WORDS) == 26
    assert PLAIN_WORDS.count("switch") == 2
    assert PAD_WORD == "pad" and PAD_REPEAT == 10
    words = Vocab().all_words()
    assert words == tuple(sorted(set(words)))
    # 28 numbered + 25 distinct plain + pad
    assert len(words) == 54
    assert "pad" in words


def test_gen_sentence_pools_and_pad_block():
    s = gen_sentence(True, False, seed=0)
    assert len(s.tokens) == 10
    assert all(t in NUMBERED_WORDS for t in s.tokens)
    assert s.has_number and not s.has_pad
    s = gen_sentence(False, True, seed=0)
    assert len(s.tokens) == 20
    assert s.tokens[10:] == (PAD_WORD,) * PAD_REPEAT
    assert all(t in PLAIN_WORDS for t in s.tokens[:10])
    with pytest.raises(ValueError):
        gen_sentence(True, False, length=0, seed=0)


def test_sentence_from_tokens_recomputes_flags():
    s = sentence_from_tokens(("nice", "dog", "five"))
    assert s.has_number and not s.has_pad
    s = sentence_from_tokens(("nice",) + (PAD_WORD,) * PAD_REPEAT)
    assert s.has_pad and not s.has_number
    with pytest.raises(ValueError):
        sentence_from_tokens(("nice", PAD_WORD, PAD_WORD))


def test_corpus_realizes_kappa_and_flags():
    corpus = gen_corpus(200, 0.7, seed=3)
    assert compute_kappa(corpus.y_main, corpus.y_concept) == 0.7
    for s, ym, yp in zip(corpus.sentences, corpus.y_main, corpus.y_concept):
        assert (ym > 0) == s.has_number
        assert (yp > 0) == s.has_pad
    again = gen_corpus(200, 0.7, seed=3)
    assert corpus.sentences == again.sentences


def test_encode_nbow_is_token_sum():
    t = table()
    s = Sentence(tokens=("one", "two", "one"), has_number=True, has_pad=False)
    expected = 2.0 * t["one"] + t["two"]
    np.testing.assert_allclose(encode_nbow(s, t), expected, atol=1e-12)
    empty = Sentence(tokens=(), has_number=False, has_pad=False)
    np.testing.assert_array_equal(encode_nbow(empty, t), np.zeros(16))
    with pytest.raises(KeyError):
        encode_nbow(Sentence(tokens=("zzz",), has_number=False, has_pad=False), t)
    with pytest.raises(KeyError):
        t["zzz"]


def test_encode_corpus_matches_per_sentence():
    t = table()
    corpus = gen_corpus(30, 0.8, seed=1)
    enc = encode_corpus(corpus, t)
    assert enc.points.shape == (30, 16)
    for row, s in zip(enc.points, corpus.sentences):
        np.testing.assert_allclose(row, encode_nbow(s, t), atol=1e-12)
    sub = enc.subset([2, 5])
    np.testing.assert_array_equal(sub.points, enc.points[[2, 5]])
    assert sub.sentences == (corpus.sentences[2], corpus.sentences[5])


def test_intervention_exact_inverses():
    with_pad = gen_sentence(True, True, seed=2)
    without = intervene_concept(with_pad, add=False)
    assert not without.has_pad and PAD_WORD not in without.tokens
    assert intervene_concept(without, add=True).tokens == with_pad.tokens
    plain = gen_sentence(False, False, seed=2)
    added = intervene_concept(plain, add=True)
    assert added.has_pad and added.tokens[-PAD_REPEAT:] == (PAD_WORD,) * PAD_REPEAT
    assert intervene_concept(added, add=False).tokens == plain.tokens
    # no-ops when the state already matches
    assert intervene_concept(plain, add=False) is plain
    assert intervene_concept(with_pad, add=True) is with_pad


def test_delta_prob_hand_value():
    t = table()
    s0 = gen_sentence(False, False, seed=5)
    s1 = Sentence(
        tokens=s0.tokens + (PAD_WORD,) * PAD_REPEAT, has_number=False, has_pad=True
    )
    e0 = encode_nbow(s0, t)
    v = t[PAD_WORD]
    # weight vector orthogonal to the padless encoding with a pad-block
    # score of exactly 2, so the two base scores are 0 and 2
    w = v - (v @ e0) / (e0 @ e0) * e0
    w = w * (2.0 / (PAD_REPEAT * (w @ v)))
    assert abs(w @ e0) < 1e-12
    dp = delta_prob_scores(lambda Z: Z @ w, [s0, s1], t)
    assert abs(dp - (expit(2.0) - 0.5)) < 1e-12
    clf = LinearClassifier(weights=w, bias=0.0)
    assert abs(delta_prob(clf, [s0, s1], t) - dp) < 1e-15


def test_delta_prob_zero_for_pad_blind_classifier():
    t = table()
    corpus = gen_corpus(40, 0.8, seed=4)
    v = t[PAD_WORD]
    rng = np.random.default_rng(0)
    w = rng.normal(size=16)
    w -= (w @ v) / (v @ v) * v
    dp = delta_prob_scores(lambda Z: Z @ w, corpus.sentences, t)
    assert dp < 1e-12
    with pytest.raises(ValueError):
        delta_prob_scores(lambda Z: Z @ w, [], t)


def test_corpus_roundtrip(tmp_path):
    corpus = gen_corpus(25, 0.8, seed=6)
    path = tmp_path / "corpus.txt"
    save_corpus(corpus, path)
    loaded = load_corpus(path)
    assert loaded.n == corpus.n
    for a, b in zip(loaded.sentences, corpus.sentences):
        assert a.tokens == b.tokens
        assert (a.has_number, a.has_pad) == (b.has_number, b.has_pad)
    np.testing.assert_array_equal(loaded.y_main, corpus.y_main)
    np.testing.assert_array_equal(loaded.y_concept, corpus.y_concept)


def test_table_roundtrip(tmp_path):
    t = table()
    path = tmp_path / "table.csv"
    save_table(t, path)
    loaded = load_table(path)
    assert loaded.words == t.words
    np.testing.assert_array_equal(loaded.vectors, t.vectors)
    assert loaded.dim == t.dim
