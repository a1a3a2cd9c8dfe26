"""Attributed corpora: schema, loading, batching and synthetic generation.

Corpus file format, one sample per line::

    <value_1>\\t...\\t<value_m>\\t<sentence>

Schema file format (JSON)::

    {"attributes": [{"name": "sentiment", "values": ["positive", "negative"]}, ...]}
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .text import PAD, normalize_tokenize

log = logging.getLogger(__name__)

MAX_LEN = 100


class CorpusFormatError(ValueError):
    pass


class UnknownAttributeValue(ValueError):
    pass


@dataclass(frozen=True)
class Attribute:
    name: str
    values: tuple

    def index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise UnknownAttributeValue(
                f"unknown value {value!r} for attribute {self.name!r} (expected one of {list(self.values)})"
            ) from None


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple

    def __post_init__(self):
        if not self.attributes:
            raise ValueError("schema needs at least one attribute")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in {names}")
        for a in self.attributes:
            if len(a.values) < 2:
                raise ValueError(f"attribute {a.name!r} needs at least two values")
            if len(set(a.values)) != len(a.values):
                raise ValueError(f"attribute {a.name!r} has duplicate values")

    @classmethod
    def from_dict(cls, spec: Mapping[str, Sequence[str]]) -> "AttributeSchema":
        return cls(tuple(Attribute(k, tuple(v)) for k, v in spec.items()))

    @property
    def m(self) -> int:
        return len(self.attributes)

    @property
    def sizes(self) -> List[int]:
        return [len(a.values) for a in self.attributes]

    @property
    def names(self) -> List[str]:
        return [a.name for a in self.attributes]

    def position(self, name: str) -> int:
        for k, a in enumerate(self.attributes):
            if a.name == name:
                return k
        raise UnknownAttributeValue(f"unknown attribute {name!r}")

    def encode(self, values: Sequence[str]) -> List[int]:
        if len(values) != self.m:
            raise CorpusFormatError(f"expected {self.m} attribute values, got {len(values)}")
        return [a.index(v) for a, v in zip(self.attributes, values)]

    def decode(self, indices: Sequence[int]) -> List[str]:
        return [a.values[int(i)] for a, i in zip(self.attributes, indices)]

    def to_json(self) -> str:
        body = {"attributes": [{"name": a.name, "values": list(a.values)} for a in self.attributes]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AttributeSchema":
        body = json.loads(text)
        return cls(tuple(Attribute(a["name"], tuple(a["values"])) for a in body["attributes"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "AttributeSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass
class Corpus:
    """Sentences (normalized word tokens) with an (n, m) attribute index matrix."""

    schema: AttributeSchema
    sentences: List[List[str]] = field(default_factory=list)
    attrs: np.ndarray = None

    def __post_init__(self):
        if self.attrs is None:
            self.attrs = np.zeros((0, self.schema.m), dtype=np.int64)
        self.attrs = np.asarray(self.attrs, dtype=np.int64).reshape(len(self.sentences), self.schema.m)

    def __len__(self):
        return len(self.sentences)

    def texts(self) -> List[str]:
        return [" ".join(s) for s in self.sentences]

    def subset(self, idx) -> "Corpus":
        idx = np.asarray(idx, dtype=np.int64)
        return Corpus(self.schema, [self.sentences[i] for i in idx], self.attrs[idx])

    def split(self, n_test: int, rng: np.random.Generator) -> tuple:
        perm = rng.permutation(len(self))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))

    def to_lines(self) -> List[str]:
        return [
            "\t".join(self.schema.decode(y)) + "\t" + " ".join(s) + "\n"
            for s, y in zip(self.sentences, self.attrs)
        ]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(self.to_lines())


def parse_corpus_lines(lines, schema: AttributeSchema, max_len: int = MAX_LEN) -> Corpus:
    sentences, attrs = [], []
    truncated = 0
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != schema.m + 1:
            raise CorpusFormatError(f"line {lineno}: expected {schema.m} attribute columns then text")
        try:
            y = schema.encode(parts[: schema.m])
        except UnknownAttributeValue as err:
            raise UnknownAttributeValue(f"line {lineno}: {err}") from None
        toks = normalize_tokenize(parts[-1])
        if not toks:
            raise CorpusFormatError(f"line {lineno}: empty sentence")
        if len(toks) > max_len:
            toks = toks[:max_len]
            truncated += 1
        sentences.append(toks)
        attrs.append(y)
    if truncated:
        log.warning("truncated %d sentences to %d words", truncated, max_len)
    if not sentences:
        log.warning("corpus is empty")
    return Corpus(schema, sentences, np.asarray(attrs, dtype=np.int64).reshape(-1, schema.m))


def load_corpus(path, schema: AttributeSchema, max_len: int = MAX_LEN) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh, schema, max_len)


# -- batching -----------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray       # (B, L) padded with PAD
    lengths: np.ndarray   # (B,)
    attrs: np.ndarray     # (B, m)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]


def pad_batch(seqs: Sequence[Sequence[int]], attrs: np.ndarray) -> Batch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if (lengths == 0).any():
        raise ValueError("empty sequence in batch")
    ids = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return Batch(ids, lengths, np.asarray(attrs, dtype=np.int64).reshape(len(seqs), -1))


class BatchSampler:
    """Draws training batches following the class-balancing rules.

    ``mode="balanced"`` (single attribute): every value appears floor(B/K) or
    ceil(B/K) times per batch. ``mode="uniform"`` (several attributes): each
    row draws every attribute value uniformly and independently, then a sample
    with that exact combination; absent combinations fall back to a uniformly
    drawn sample. ``mode="auto"`` picks between them from the schema.
    """

    def __init__(self, attrs: np.ndarray, schema: AttributeSchema, batch_size: int,
                 mode: str = "auto", rng: Optional[np.random.Generator] = None):
        self.attrs = np.asarray(attrs, dtype=np.int64)
        self.schema = schema
        self.batch_size = batch_size
        if mode == "auto":
            mode = "balanced" if schema.m == 1 else "uniform"
        if mode not in ("balanced", "uniform"):
            raise ValueError(f"unknown batching mode {mode!r}")
        if mode == "balanced" and schema.m != 1:
            raise ValueError("balanced mode needs a single-attribute schema")
        if len(self.attrs) == 0:
            raise ValueError("cannot sample batches from an empty corpus")
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.by_class = []
        for k, size in enumerate(schema.sizes):
            pools = [np.flatnonzero(self.attrs[:, k] == v) for v in range(size)]
            for v, p in enumerate(pools):
                if len(p) == 0:
                    raise ValueError(
                        f"attribute {schema.names[k]!r} value {schema.attributes[k].values[v]!r} has no samples"
                    )
            self.by_class.append(pools)
        self.by_combo: Dict[tuple, np.ndarray] = {}
        for i, y in enumerate(map(tuple, self.attrs)):
            self.by_combo.setdefault(y, []).append(i)
        self.by_combo = {k: np.asarray(v) for k, v in self.by_combo.items()}
        self.fallbacks = 0

    def sample_indices(self) -> np.ndarray:
        B, rng = self.batch_size, self.rng
        if self.mode == "balanced":
            pools = self.by_class[0]
            K = len(pools)
            counts = np.full(K, B // K)
            counts[rng.permutation(K)[: B % K]] += 1
            idx = np.concatenate([rng.choice(pools[v], size=c) for v, c in enumerate(counts)])
            return idx[rng.permutation(B)]
        target = sample_target_attrs(self.schema, B, rng)
        idx = np.empty(B, dtype=np.int64)
        for r, y in enumerate(map(tuple, target)):
            pool = self.by_combo.get(y)
            if pool is None:
                self.fallbacks += 1
                idx[r] = rng.integers(len(self.attrs))
            else:
                idx[r] = pool[rng.integers(len(pool))]
        return idx


def sample_target_attrs(schema: AttributeSchema, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Target attribute matrix: each entry uniform over its value set, independently."""
    cols = [rng.integers(0, size, size=batch_size) for size in schema.sizes]
    return np.stack(cols, axis=1).astype(np.int64)


# -- synthetic marker language ------------------------------------------------------

CONTENT_WORDS = (
    "the", "a", "food", "place", "service", "staff", "we", "ordered", "table",
    "was", "and", "our", "night", "menu", "price", "waiter", "came", "back",
    "here", "with", "friends", "lunch", "dinner", "drinks", "music", "room",
    "time", "owner", "parking", "seat",
)

DEFAULT_LEXICONS = {
    "sentiment": {"positive": ("delicious", "great", "friendly"),
                  "negative": ("awful", "bland", "rude")},
    "category": {"asian": ("noodles", "sushi", "ramen"),
                 "mexican": ("tacos", "salsa", "burrito")},
}


def check_lexicons(lexicons: Mapping[str, Mapping[str, Sequence[str]]], content: Sequence[str]) -> None:
    seen: Dict[str, str] = {}
    for attr, values in lexicons.items():
        for value, words in values.items():
            if not words:
                raise ValueError(f"empty lexicon for {attr}={value}")
            for w in words:
                owner = f"{attr}={value}"
                if w in seen and seen[w] != owner:
                    raise ValueError(f"marker {w!r} appears in lexicons {seen[w]} and {owner}")
                seen[w] = owner
    shared = set(seen) & set(content)
    if shared:
        raise ValueError(f"markers overlap the content vocabulary: {sorted(shared)}")


def synth_corpus_generate(
    schema: AttributeSchema,
    n: int,
    style_lexicons: Mapping[str, Mapping[str, Sequence[str]]],
    rng: np.random.Generator,
    content_words: Sequence[str] = CONTENT_WORDS,
    content_len: tuple = (4, 7),
) -> Corpus:
    """Random content words with one marker per attribute inserted at random spots.

    Every sentence ends with ``"."``. Attribute values are drawn uniformly.
    """
    check_lexicons(style_lexicons, content_words)
    for a in schema.attributes:
        if a.name not in style_lexicons or set(style_lexicons[a.name]) != set(a.values):
            raise ValueError(f"lexicons must cover exactly the values of attribute {a.name!r}")
    sentences, attrs = [], []
    lo, hi = content_len
    for _ in range(n):
        y = [int(rng.integers(size)) for size in schema.sizes]
        words = [content_words[int(i)] for i in rng.integers(len(content_words), size=int(rng.integers(lo, hi + 1)))]
        for a, v in zip(schema.attributes, y):
            lex = style_lexicons[a.name][a.values[v]]
            words.insert(int(rng.integers(len(words) + 1)), lex[int(rng.integers(len(lex)))])
        sentences.append(words + ["."])
        attrs.append(y)
    return Corpus(schema, sentences, np.asarray(attrs, dtype=np.int64).reshape(n, schema.m))


def lexicon_oracle(corpus: Corpus, style_lexicons) -> np.ndarray:
    """Predict attributes by marker lookup; -1 where no marker is found."""
    pred = np.full((len(corpus), corpus.schema.m), -1, dtype=np.int64)
    lookup = []
    for a in corpus.schema.attributes:
        lookup.append({w: v for v, val in enumerate(a.values) for w in style_lexicons[a.name][val]})
    for i, s in enumerate(corpus.sentences):
        for k, table in enumerate(lookup):
            for w in s:
                if w in table:
                    pred[i, k] = table[w]
                    break
    return pred


def default_schema(n_attributes: int = 1) -> AttributeSchema:
    names = list(DEFAULT_LEXICONS)[:n_attributes]
    return AttributeSchema.from_dict({k: list(DEFAULT_LEXICONS[k]) for k in names})
