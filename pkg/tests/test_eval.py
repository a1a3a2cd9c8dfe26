import math

import numpy as np
import pytest

from attrewrite.data import DEFAULT_LEXICONS, default_schema, synth_corpus_generate
from attrewrite.eval import (AttributeClassifiers, EvalReport, KneserNeyLM, NgramClassifier,
                             attribute_accuracy, bleu, bleu_stats, evaluate_model, self_bleu,
                             tradeoff_csv, tradeoff_curve)
from attrewrite.eval.lm import BOS, UNK, discounts
from attrewrite.eval.report import AttributeScores, encode_sentences

import oracles


def random_sentences(rng, n, vocab, max_len=7):
    return [list(rng.choice(vocab, size=rng.integers(1, max_len + 1))) for _ in range(n)]


# -- Kneser-Ney ----------------------------------------------------------------------

@pytest.mark.parametrize("order", [1, 2, 3, 5])
def test_kn_matches_brute_force(order, rng):
    vocab = [f"w{i}" for i in range(8)]
    train = random_sentences(rng, 40, vocab)
    test = random_sentences(rng, 10, vocab + ["oov"])
    lm = KneserNeyLM(order).fit(train)
    ref = oracles.BruteForceKN(train, order)
    for n in range(1, order + 1):
        assert lm.discounts_[n] == pytest.approx(tuple(ref.discounts(n)), abs=1e-12)
    for s in test:
        ctx = [BOS] * (order - 1)
        for w in s:
            w = w if w in lm.vocab_ else UNK
            assert lm.prob(w, ctx[len(ctx) - (order - 1):] if order > 1 else []) == pytest.approx(
                ref.p(w, ctx[len(ctx) - (order - 1):] if order > 1 else []), abs=1e-6)
            ctx.append(w)
    assert lm.perplexity(test) == pytest.approx(ref.perplexity(test), rel=1e-6)


def test_kn_distributions_sum_to_one(rng):
    vocab = [f"w{i}" for i in range(10)]
    lm = KneserNeyLM(3).fit(random_sentences(rng, 50, vocab))
    words = lm.word_list()
    contexts = set(lm.contexts(3)) | {("w0", "w0"), ("nope", "w3"), (BOS, BOS)}
    for ctx in contexts:
        total = sum(lm.prob(w, list(ctx)) for w in words)
        assert total == pytest.approx(1.0, abs=1e-6), ctx


def test_uniform_unigram_perplexity_is_vocabulary_size():
    # one of each token: D1 clamps to 1, so every word gets exactly 1/|V|
    lm = KneserNeyLM(1).fit([["a", "b", UNK]])
    assert len(lm.vocab_) == 4
    assert lm.perplexity([["a"], ["b", "zzz", "a"]]) == pytest.approx(4.0, rel=1e-12)


def test_kn_discount_fallbacks():
    assert discounts([]) == (0.5, 0.5, 0.5)
    assert discounts([2, 2]) == (0.5, pytest.approx(2.0), pytest.approx(2.0))


def test_kn_rejects_empty_and_uses_unknown_for_oov():
    with pytest.raises(ValueError):
        KneserNeyLM(3).fit([])
    lm = KneserNeyLM(2).fit(["a b", "a c"])
    assert lm.prob("never", ["a"]) == lm.prob(UNK, ["a"])
    assert math.isfinite(lm.perplexity(["q q q"]))


# -- BLEU ---------------------------------------------------------------------------

def test_bleu_matches_brute_force(rng):
    vocab = list("abcdef")
    for _ in range(20):
        cands = random_sentences(rng, 6, vocab, 10)
        refs = random_sentences(rng, 6, vocab, 10)
        st = bleu_stats(cands, refs)
        m, t, cl, rl, score = oracles.brute_bleu(cands, refs)
        assert (st.matches, st.totals, st.cand_len, st.ref_len) == (m, t, cl, rl)
        assert st.score() == pytest.approx(score, abs=1e-9)


def test_bleu_identity_and_brevity():
    c = [["the", "food", "was", "good"], ["ok"]]
    assert bleu(c, c) == pytest.approx(100.0)
    assert self_bleu([["a"]], [["a"]]) == pytest.approx(100.0)
    short = [["the", "food"]]
    ref = [["the", "food", "was", "good"]]
    assert bleu(short, ref) == pytest.approx(100 * math.exp(1 - 4 / 2))
    assert bleu([["x", "y"]], [["a", "b"]]) == 0.0


def test_bleu_multi_reference_and_errors():
    assert bleu([["a", "b"]], [[["x"], ["a", "b"]]]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [])


# -- classifier ---------------------------------------------------------------------

def test_classifier_learns_synthetic_markers(rng):
    schema = default_schema(2)
    train = synth_corpus_generate(schema, 1000, DEFAULT_LEXICONS, rng)
    test = synth_corpus_generate(schema, 300, DEFAULT_LEXICONS, rng)
    clf = AttributeClassifiers(schema).fit(train.sentences, train.attrs)
    for k in range(schema.m):
        assert attribute_accuracy(clf, test.sentences, test.attrs[:, k], k) >= 0.99


def test_classifier_is_sklearn_estimator():
    clf = NgramClassifier(n_buckets=64)
    assert clf.get_params()["n_buckets"] == 64
    clf.fit(["good food", "bad food", "good", "bad"], [1, 0, 1, 0])
    assert list(clf.predict(["good"])) == [1]
    assert clf.predict_proba(["bad"]).sum() == pytest.approx(1.0)


def test_accuracy_rejects_unseen_target_value():
    clf = NgramClassifier(n_buckets=16).fit(["a", "b"], [0, 1])
    with pytest.raises(ValueError):
        attribute_accuracy(clf, ["a"], [2])
    with pytest.raises(ValueError):
        attribute_accuracy(clf, [], [])


# -- end to end ---------------------------------------------------------------------

class CopyModel:
    """A rewriter that returns every input unchanged."""

    def rewrite(self, seqs, targets, max_len=None):
        return [np.asarray(s) for s in seqs]


@pytest.fixture(scope="module")
def scored(small_synth):
    schema, corpus, tok = small_synth
    clf = AttributeClassifiers(schema).fit(corpus.sentences, corpus.attrs)
    test = synth_corpus_generate(schema, 60, DEFAULT_LEXICONS, np.random.default_rng(7))
    return schema, corpus, tok, clf, test


def test_copy_model_scores_chance_accuracy_and_full_self_bleu(scored):
    schema, corpus, tok, clf, test = scored
    lm = KneserNeyLM(3).fit(corpus.sentences)
    rep = evaluate_model(CopyModel(), tok, test, clf, lm=lm)
    s = rep.scores["sentiment"]
    assert s.accuracy == pytest.approx(0.5)
    assert s.transfer_accuracy == 0.0
    assert s.self_bleu == pytest.approx(100.0)
    assert s.perplexity == pytest.approx(lm.perplexity(test.sentences * 2), rel=1e-9)
    assert "sentiment" in rep.to_table() and rep.to_csv().startswith("attribute,")


def test_reference_bleu_and_tradeoff(scored):
    schema, corpus, tok, clf, test = scored
    refs = [(i, test.attrs[i], test.sentences[i]) for i in range(5)]
    rep = evaluate_model(CopyModel(), tok, test, clf, references=refs)
    assert rep.scores["sentiment"].bleu == pytest.approx(100.0)
    pts = tradeoff_curve([("b", 2.0, CopyModel()), ("a", 1.0, CopyModel())], tok, test, clf)
    assert [p.label for p in pts] == ["a", "b"]
    assert tradeoff_csv(pts).splitlines()[0] == "label,position,accuracy,self_bleu"
    with pytest.raises(ValueError):
        tradeoff_curve([("a", 1.0, CopyModel())], tok, test, clf)


def test_report_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        EvalReport({"a": AttributeScores(1.2, None, 50.0)})
    with pytest.raises(ValueError):
        EvalReport({"a": AttributeScores(0.5, None, 101.0)})
    with pytest.raises(ValueError):
        EvalReport({"a": AttributeScores(0.5, None, 50.0, perplexity=0.5)})


def test_encode_sentences_round_trips_through_tokenizer(small_synth):
    _, corpus, tok = small_synth
    seqs = encode_sentences(tok, corpus.sentences[:5])
    assert tok.inverse_transform(seqs) == corpus.texts()[:5]
