"""Interpolated modified Kneser-Ney n-gram language model.

Sentences are padded with ``order - 1`` begin symbols and closed with
``</s>``. The highest order uses raw counts, lower orders use continuation
counts (number of distinct left extensions). Discounts D1, D2, D3+ are
estimated per order from count-of-counts::

    Y = n1 / (n1 + 2 n2),   Dk = k - (k + 1) Y n_{k+1} / n_k

with fallbacks ``D1 = 0.5``, ``D2 = D1``, ``D3+ = D2`` when the needed
count-of-count is zero, each clamped to ``[0.1, k]``. Below order 1 the model
backs off to the uniform distribution over the vocabulary (training words,
``</s>`` and ``<unk>``).
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


def discounts(counts: Iterable[int]) -> Tuple[float, float, float]:
    coc = Counter(c for c in counts if c <= 4)
    n1, n2, n3, n4 = (coc.get(k, 0) for k in (1, 2, 3, 4))
    y = n1 / (n1 + 2 * n2) if (n1 + 2 * n2) > 0 else 0.0
    d1 = 1 - 2 * y * n2 / n1 if n1 > 0 else 0.5
    d2 = 2 - 3 * y * n3 / n2 if n2 > 0 else d1
    d3 = 3 - 4 * y * n4 / n3 if n3 > 0 else d2
    return (min(max(d1, 0.1), 1.0), min(max(d2, 0.1), 2.0), min(max(d3, 0.1), 3.0))


class KneserNeyLM(BaseEstimator):
    """Word-level n-gram LM; ``fit`` takes token lists (or strings split on spaces).

    Parameters
    ----------
    order : int, default 5
    """

    def __init__(self, order: int = 5):
        self.order = order

    def _prep(self, sent) -> List[str]:
        toks = sent.split() if isinstance(sent, str) else list(sent)
        return [t if t in self.vocab_ else UNK for t in toks]

    def fit(self, X, y=None):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        sents = [s.split() if isinstance(s, str) else list(s) for s in X]
        if not sents:
            raise ValueError("cannot fit a language model on an empty corpus")
        N = self.order
        vocab = {t for s in sents for t in s}
        vocab.update((EOS, UNK))
        self.vocab_ = vocab
        raw = Counter()
        for s in sents:
            padded = [BOS] * (N - 1) + s + [EOS]
            for i in range(N - 1, len(padded)):
                raw[tuple(padded[i - N + 1:i + 1])] += 1
        # counts[n][context][word] for n = 1..N
        counts: Dict[int, Dict[tuple, Dict[str, int]]] = {}
        grams = raw
        for n in range(N, 0, -1):
            table: Dict[tuple, Dict[str, int]] = defaultdict(dict)
            for g, c in grams.items():
                table[g[:-1]][g[-1]] = c
            counts[n] = dict(table)
            if n > 1:
                cont = Counter()
                for g in grams:
                    cont[g[1:]] += 1
                grams = cont
        self.counts_ = counts
        self.discounts_ = {n: discounts(c for t in counts[n].values() for c in t.values()) for n in counts}
        stats = {}
        for n, table in counts.items():
            d1, d2, d3 = self.discounts_[n]
            for ctx, row in table.items():
                denom = sum(row.values())
                k1 = sum(1 for c in row.values() if c == 1)
                k2 = sum(1 for c in row.values() if c == 2)
                k3 = len(row) - k1 - k2
                stats[n, ctx] = (denom, (d1 * k1 + d2 * k2 + d3 * k3) / denom)
        self.stats_ = stats
        return self

    def _discount(self, n: int, c: int) -> float:
        d1, d2, d3 = self.discounts_[n]
        return d1 if c == 1 else d2 if c == 2 else d3

    def prob(self, word: str, context: Sequence[str]) -> float:
        """p(word | last order-1 tokens of context); context may include ``<s>``."""
        check_is_fitted(self)
        word = word if word in self.vocab_ else UNK
        ctx = [t if (t in self.vocab_ or t == BOS) else UNK for t in context]
        ctx = ([BOS] * (self.order - 1) + ctx)[len(ctx):] if self.order > 1 else []
        return self._p(word, tuple(ctx), self.order)

    def _p(self, w: str, ctx: tuple, n: int) -> float:
        if n == 0:
            return 1.0 / len(self.vocab_)
        lower = self._p(w, ctx[1:], n - 1)
        st = self.stats_.get((n, ctx))
        if st is None:
            return lower
        denom, gamma = st
        c = self.counts_[n][ctx].get(w, 0)
        head = max(c - self._discount(n, c), 0.0) / denom if c else 0.0
        return head + gamma * lower

    def sentence_logprob(self, sent) -> Tuple[float, int]:
        """Natural-log probability of the sentence plus ``</s>``, and the token count."""
        toks = self._prep(sent) + [EOS]
        hist = [BOS] * (self.order - 1)
        total = 0.0
        for t in toks:
            ctx = tuple(hist[len(hist) - (self.order - 1):]) if self.order > 1 else ()
            total += math.log(self._p(t, ctx, self.order))
            hist.append(t)
        return total, len(toks)

    def perplexity(self, sentences) -> float:
        check_is_fitted(self)
        sentences = list(sentences)
        if not sentences:
            raise ValueError("perplexity of an empty evaluation set")
        lp = n = 0
        for s in sentences:
            a, b = self.sentence_logprob(s)
            lp += a
            n += b
        return float(math.exp(-lp / n))

    def score(self, X, y=None) -> float:
        """Negative perplexity, so larger is better as sklearn expects."""
        return -self.perplexity(X)

    def contexts(self, n: int) -> List[tuple]:
        return list(self.counts_[n])

    def word_list(self) -> List[str]:
        return sorted(self.vocab_)


def lm_train(corpus, order: int = 5) -> KneserNeyLM:
    return KneserNeyLM(order).fit(corpus)


def lm_ppl(lm: KneserNeyLM, sentences) -> float:
    return lm.perplexity(sentences)
