"""Tokenization, byte-pair encoding and vocabulary management.

Words are split into characters followed by an explicit end-of-word symbol
``</w>``; merges never cross word boundaries. In an encoded stream the last
subword of each word carries the ``</w>`` suffix, which makes decoding exact.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

EOW = "</w>"
PAD, EOS, UNK, ATTR = 0, 1, 2, 3
RESERVED = ("<pad>", "</s>", "<unk>", "<attr>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def normalize_tokenize(raw_text: str) -> List[str]:
    """Lowercase, split punctuation from words, collapse whitespace.

    >>> normalize_tokenize("Great food!")
    ['great', 'food', '!']
    """
    return _TOKEN_RE.findall(raw_text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


# -- BPE ----------------------------------------------------------------------

@dataclass
class BpeModel:
    merges: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache: Dict[str, Tuple[str, ...]] = {}

    @property
    def n_merges(self) -> int:
        return len(self.merges)

    def encode_word(self, word: str) -> Tuple[str, ...]:
        """Subword symbols of ``word`` including the trailing end-of-word symbol."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(word) + [EOW]
        ranks = self._ranks
        while len(symbols) > 1:
            best, best_rank = None, None
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best is None:
                break
            left, right = symbols[best], symbols[best + 1]
            merged, i = [], 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def to_text(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.merges)

    @classmethod
    def from_text(cls, text: str) -> "BpeModel":
        merges = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValueError(f"line {lineno}: expected 'left right', got {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _tie_key(pair: Tuple[str, str]) -> Tuple[str, str]:
    return tuple(sym.replace(EOW, "\U0010ffff") for sym in pair)


def bpe_learn(corpus: Iterable[Sequence[str]], n_merges: int) -> BpeModel:
    """Learn ``n_merges`` merges greedily by pair frequency.

    Ties between equally frequent pairs go to the lexicographically smallest
    (left, right), with the end-of-word symbol ordered after every character
    so that within-word merges win ties. Learning stops early once no pair
    occurs.
    """
    if n_merges < 0:
        raise ValueError("n_merges must be >= 0")
    word_freq: Counter = Counter()
    for tokens in corpus:
        word_freq.update(tokens)
    if not word_freq:
        raise ValueError("cannot learn BPE from an empty corpus")
    words = {tuple(w) + (EOW,): c for w, c in word_freq.items()}
    merges: List[Tuple[str, str]] = []
    for _ in range(n_merges):
        pairs: Counter = Counter()
        for syms, c in words.items():
            for i in range(len(syms) - 1):
                pairs[syms[i], syms[i + 1]] += c
        if not pairs:
            break
        top = max(pairs.values())
        pair = min((p for p, c in pairs.items() if c == top), key=_tie_key)
        merges.append(pair)
        left, right = pair
        updated = {}
        for syms, c in words.items():
            if len(syms) > 1:
                out, i = [], 0
                while i < len(syms):
                    if i < len(syms) - 1 and syms[i] == left and syms[i + 1] == right:
                        out.append(left + right)
                        i += 2
                    else:
                        out.append(syms[i])
                        i += 1
                syms = tuple(out)
            updated[syms] = updated.get(syms, 0) + c
        words = updated
    return BpeModel(merges)


def bpe_encode(model: BpeModel, tokens: Sequence[str]) -> List[str]:
    """Encode words to subwords; each word's final subword ends with ``</w>``."""
    out: List[str] = []
    for tok in tokens:
        syms = list(model.encode_word(tok))
        if syms[-1] == EOW:
            syms.pop()
            if not syms:
                syms = [EOW]
            else:
                syms[-1] += EOW
        out.extend(syms)
    return out


def bpe_decode(subwords: Sequence[str]) -> List[str]:
    tokens, buf = [], []
    for sw in subwords:
        if sw.endswith(EOW):
            buf.append(sw[: -len(EOW)])
            tokens.append("".join(buf))
            buf = []
        else:
            buf.append(sw)
    if buf:
        # a generation cut off mid-word still yields its partial word
        tokens.append("".join(buf))
    return tokens


# -- vocabulary -----------------------------------------------------------------

class Vocabulary:
    """Subword to id map; ids 0..3 are PAD, EOS, UNK and the attribute start slot."""

    def __init__(self, counts: Dict[str, int] | None = None):
        self.counts: Dict[str, int] = {}
        self.itos: List[str] = list(RESERVED)
        self.stoi: Dict[str, int] = {s: i for i, s in enumerate(RESERVED)}
        if counts:
            ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            for tok, c in ordered:
                if tok in self.stoi:
                    continue
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)
                self.counts[tok] = c

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        counts: Counter = Counter()
        for seq in sequences:
            counts.update(seq)
        return cls(dict(counts))

    def __len__(self):
        return len(self.itos)

    def encode(self, subwords: Sequence[str]) -> List[int]:
        return [self.stoi.get(s, UNK) for s in subwords]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> List[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS and strip_special:
                break
            if strip_special and i in (PAD, ATTR):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else RESERVED[UNK])
        return out

    def to_text(self) -> str:
        return "".join(f"{tok}\t{self.counts[tok]}\n" for tok in self.itos[len(RESERVED):])

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        counts = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            tok, sep, c = line.rpartition("\t")
            if not sep:
                raise ValueError(f"vocabulary line {lineno}: expected 'token<TAB>count'")
            counts[tok] = int(c)
        return cls(counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


class BpeTokenizer(TransformerMixin, BaseEstimator):
    """Raw text to subword ids and back.

    Parameters
    ----------
    n_merges : int, default 500
        Number of BPE merges to learn.
    """

    def __init__(self, n_merges: int = 500):
        self.n_merges = n_merges

    def fit(self, X, y=None):
        tokenized = [normalize_tokenize(s) for s in X]
        self.bpe_ = bpe_learn(tokenized, self.n_merges)
        self.vocab_ = Vocabulary.build(bpe_encode(self.bpe_, t) for t in tokenized)
        return self

    @classmethod
    def from_assets(cls, bpe: BpeModel, vocab: Vocabulary) -> "BpeTokenizer":
        tok = cls(n_merges=bpe.n_merges)
        tok.bpe_, tok.vocab_ = bpe, vocab
        return tok

    def encode(self, text: str) -> List[int]:
        check_is_fitted(self)
        return self.vocab_.encode(bpe_encode(self.bpe_, normalize_tokenize(text)))

    def decode(self, ids: Iterable[int]) -> str:
        check_is_fitted(self)
        return detokenize(bpe_decode(self.vocab_.decode(ids)))

    def transform(self, X) -> List[np.ndarray]:
        return [np.asarray(self.encode(s), dtype=np.int64) for s in X]

    def inverse_transform(self, X) -> List[str]:
        return [self.decode(ids) for ids in X]
