"""Corpus-level BLEU: 4-gram, uniform weights, brevity penalty, no smoothing.

Orders for which the candidates contain no n-gram at all are left out of the
geometric mean, so BLEU(c, c) is 100 even for very short candidates. Any
order with candidate n-grams but zero matches gives a score of 0.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Union

Tokens = Sequence[str]


@dataclass
class BleuStats:
    matches: List[int]
    totals: List[int]
    cand_len: int
    ref_len: int

    @property
    def brevity_penalty(self) -> float:
        if self.cand_len == 0:
            return 0.0
        if self.cand_len >= self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.cand_len)

    def score(self) -> float:
        logs = []
        for m, t in zip(self.matches, self.totals):
            if t == 0:
                continue
            if m == 0:
                return 0.0
            logs.append(math.log(m / t))
        if not logs:
            return 0.0
        return 100.0 * self.brevity_penalty * math.exp(sum(logs) / len(logs))


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _as_refs(ref: Union[Tokens, Sequence[Tokens]]) -> List[Tokens]:
    if len(ref) and not isinstance(ref[0], str):
        return [list(r) for r in ref]
    return [list(ref)]


def bleu_stats(candidates: Sequence[Tokens], references: Sequence, max_n: int = 4) -> BleuStats:
    if len(candidates) == 0:
        raise ValueError("BLEU needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        refs = _as_refs(ref)
        c_len += len(cand)
        # closest reference length, shorter wins ties
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            cc = _ngrams(cand, n)
            if not cc:
                continue
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in cc.items())
            totals[n - 1] += sum(cc.values())
    return BleuStats(matches, totals, c_len, r_len)


def bleu(candidates: Sequence[Tokens], references: Sequence, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]; each reference entry may be one token list or several."""
    return bleu_stats(candidates, references, max_n).score()


def self_bleu(candidates: Sequence[Tokens], inputs: Sequence[Tokens], max_n: int = 4) -> float:
    """BLEU of rewrites against their own inputs."""
    return bleu(candidates, inputs, max_n)
