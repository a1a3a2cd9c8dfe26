"""Full automatic evaluation of a rewriter and accuracy / self-BLEU trade-off points.

Conventions:

* For each controlled attribute, every test input is rewritten under every
  value of that attribute while the other attributes keep their source
  values.
* Accuracy counts all of those generations (the same-value ones included),
  so a model that copies its input scores 1/|values| on a perfect classifier.
  ``transfer_accuracy`` restricts to target values different from the input.
* self-BLEU is the corpus BLEU against the inputs, computed per target value
  and averaged over values.
* BLEU against human references uses the target attributes given with each
  reference.
* Perplexity is word-level, over all generations.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..text import bpe_decode, bpe_encode
from .bleu import bleu, self_bleu
from .classifier import AttributeClassifiers

REPORT_FIELDS = ("attribute", "accuracy", "transfer_accuracy", "self_bleu", "perplexity", "bleu", "joint_accuracy")


@dataclass
class AttributeScores:
    accuracy: float
    transfer_accuracy: Optional[float]
    self_bleu: float
    perplexity: Optional[float] = None
    bleu: Optional[float] = None
    joint_accuracy: Optional[float] = None


@dataclass
class EvalReport:
    scores: Dict[str, AttributeScores]
    fingerprint: str = ""
    n_inputs: int = 0

    def __post_init__(self):
        for name, s in self.scores.items():
            for key in ("accuracy", "transfer_accuracy", "joint_accuracy"):
                v = getattr(s, key)
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ValueError(f"{name}.{key}={v} outside [0, 1]")
            for key in ("self_bleu", "bleu"):
                v = getattr(s, key)
                if v is not None and not 0.0 <= v <= 100.0:
                    raise ValueError(f"{name}.{key}={v} outside [0, 100]")
            if s.perplexity is not None and s.perplexity < 1.0:
                raise ValueError(f"{name}.perplexity={s.perplexity} below 1")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for name, s in self.scores.items():
            row = [name]
            for key in REPORT_FIELDS[1:]:
                v = getattr(s, key)
                row.append("" if v is None else f"{v:.6f}")
            w.writerow(row)
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'attribute':<14}{'acc':>8}{'xfer':>8}{'sBLEU':>8}{'PPL':>9}{'BLEU':>8}{'joint':>8}"
        lines = [head, "-" * len(head)]
        fmt = lambda v, spec: ("-".rjust(int(spec.split(".")[0])) if v is None else format(v, spec))  # noqa: E731
        for name, s in self.scores.items():
            lines.append(
                f"{name:<14}{fmt(s.accuracy, '8.3f')}{fmt(s.transfer_accuracy, '8.3f')}"
                f"{fmt(s.self_bleu, '8.2f')}{fmt(s.perplexity, '9.2f')}{fmt(s.bleu, '8.2f')}"
                f"{fmt(s.joint_accuracy, '8.3f')}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"fingerprint": self.fingerprint, "n_inputs": self.n_inputs,
                "scores": {k: asdict(v) for k, v in self.scores.items()}}


def encode_sentences(tokenizer, sentences: Sequence[Sequence[str]]) -> List[np.ndarray]:
    out = []
    for toks in sentences:
        ids = tokenizer.vocab_.encode(bpe_encode(tokenizer.bpe_, toks))
        out.append(np.asarray(ids, dtype=np.int64))
    return out


def decode_ids(tokenizer, ids) -> List[str]:
    return bpe_decode(tokenizer.vocab_.decode(ids))


def rewrite_words(model, tokenizer, seqs: Sequence[np.ndarray], targets: np.ndarray,
                  batch_size: int = 64) -> List[List[str]]:
    """Greedy rewrites of ``seqs`` under ``targets`` (n, m), as word tokens."""
    out: List[List[str]] = []
    for s in range(0, len(seqs), batch_size):
        gens = model.rewrite(seqs[s:s + batch_size], targets[s:s + batch_size])
        out.extend(decode_ids(tokenizer, g) for g in gens)
    return out


def config_fingerprint(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate_model(model, tokenizer, corpus, classifiers: AttributeClassifiers, lm=None,
                   references: Optional[Sequence[tuple]] = None, joint: bool = True,
                   batch_size: int = 64, fingerprint: str = "") -> EvalReport:
    """Rewrite every test input under every value of each attribute and score the results.

    ``references`` is an optional list of ``(input_index, target_attrs, tokens)``.
    With ``joint`` and several attributes, inputs are also rewritten under every
    combination of values and each attribute's accuracy is reported over those.
    """
    schema = corpus.schema
    if len(corpus) == 0:
        raise ValueError("empty test corpus")
    seqs = encode_sentences(tokenizer, corpus.sentences)
    inputs = corpus.sentences
    src = corpus.attrs
    scores: Dict[str, AttributeScores] = {}
    for k, a in enumerate(schema.attributes):
        hits, xfer_hits, xfer_n = 0, 0, 0
        bleus, all_gens = [], []
        for v in range(len(a.values)):
            tgt = src.copy()
            tgt[:, k] = v
            gens = rewrite_words(model, tokenizer, seqs, tgt, batch_size)
            pred = classifiers.predict(gens, k)
            ok = pred == v
            hits += int(ok.sum())
            other = src[:, k] != v
            xfer_hits += int(ok[other].sum())
            xfer_n += int(other.sum())
            bleus.append(self_bleu(gens, inputs))
            all_gens.extend(gens)
        n = len(corpus) * len(a.values)
        scores[a.name] = AttributeScores(
            accuracy=hits / n,
            transfer_accuracy=xfer_hits / xfer_n if xfer_n else None,
            self_bleu=float(np.mean(bleus)),
            perplexity=lm.perplexity(all_gens) if lm is not None else None,
        )
    if references:
        idx = np.array([r[0] for r in references], dtype=np.int64)
        tgt = np.asarray([r[1] for r in references], dtype=np.int64)
        gens = rewrite_words(model, tokenizer, [seqs[i] for i in idx], tgt, batch_size)
        ref_bleu = bleu(gens, [list(r[2]) for r in references])
        for s in scores.values():
            s.bleu = ref_bleu
    if joint and schema.m > 1:
        combos = list(itertools.product(*[range(n) for n in schema.sizes]))
        hits = np.zeros(schema.m)
        total = 0
        for combo in combos:
            tgt = np.tile(np.asarray(combo, dtype=np.int64), (len(corpus), 1))
            gens = rewrite_words(model, tokenizer, seqs, tgt, batch_size)
            for k in range(schema.m):
                hits[k] += int((classifiers.predict(gens, k) == combo[k]).sum())
            total += len(corpus)
        for k, a in enumerate(schema.attributes):
            scores[a.name].joint_accuracy = float(hits[k] / total)
    return EvalReport(scores, fingerprint, len(corpus))


@dataclass
class TradeoffPoint:
    label: str
    position: float
    accuracy: float
    self_bleu: float


def tradeoff_curve(models, tokenizer, corpus, classifiers, attribute: int = 0) -> List[TradeoffPoint]:
    """(accuracy, self-BLEU) for each ``(label, position, model)``, ordered by position."""
    models = list(models)
    if len(models) < 2:
        raise ValueError("a trade-off curve needs at least two points")
    points = []
    name = corpus.schema.names[attribute]
    for label, pos, model in models:
        rep = evaluate_model(model, tokenizer, corpus, classifiers, joint=False)
        s = rep.scores[name]
        points.append(TradeoffPoint(str(label), float(pos), s.accuracy, s.self_bleu))
    return sorted(points, key=lambda p: p.position)


def tradeoff_csv(points: Sequence[TradeoffPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "position", "accuracy", "self_bleu"))
    for p in points:
        w.writerow((p.label, repr(p.position), f"{p.accuracy:.6f}", f"{p.self_bleu:.6f}"))
    return buf.getvalue()
