"""Disentanglement probe.

A discriminator tries to recover one attribute from the (mean-pooled) latent
representation while the encoder is pushed the other way through a gradient
reversal. After training, a fresh classifier with the same architecture is
fit on frozen latents to check whether the attribute is still recoverable.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import AdamState, Tensor, adam_step, backward, no_grad, ops
from .data import pad_batch


def latent_summary(latent) -> Tensor:
    """Mean of the valid pooled rows of a :class:`~attrewrite.model.Latent`, shape (B, 2H)."""
    w = latent.mask / latent.mask.sum(axis=1, keepdims=True)
    return ops.sum(ops.mul(latent.z, Tensor(w[:, :, None].astype(latent.z.data.dtype))), axis=1)


class Discriminator:
    """Three linear layers (two hidden of ``hidden`` units) with leaky-ReLU between them."""

    def __init__(self, in_dim: int, n_classes: int, hidden: int = 128, slope: float = 0.2,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.slope = slope
        dims = [in_dim, hidden, hidden, n_classes]
        self.params: Dict[str, Tensor] = {}
        for i in range(3):
            bound = 1.0 / np.sqrt(dims[i])
            self.params[f"l{i}.W"] = Tensor(rng.uniform(-bound, bound, (dims[i], dims[i + 1])),
                                            requires_grad=True, name=f"l{i}.W")
            self.params[f"l{i}.b"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True, name=f"l{i}.b")

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i in range(3):
            h = ops.add(ops.matmul(h, self.params[f"l{i}.W"]), self.params[f"l{i}.b"])
            if i < 2:
                h = ops.leaky_relu(h, self.slope)
        return h

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adversarial_loss(disc: Discriminator, summary: Tensor, labels: np.ndarray, lambda_adv: float):
    """Mean discriminator NLL on ``summary`` seen through a gradient reversal.

    Backpropagating the returned loss trains the discriminator normally and
    sends ``-lambda_adv`` times its gradient into the encoder. Also returns
    the discriminator's batch accuracy.
    """
    logits = disc(ops.grad_reverse(summary, lambda_adv))
    labels = np.asarray(labels, dtype=np.int64)
    loss = ops.mul(ops.log_softmax_nll(logits, labels), 1.0 / len(labels))
    acc = float((logits.data.argmax(axis=-1) == labels).mean())
    return loss, acc


class LatentProbe(ClassifierMixin, BaseEstimator):
    """Discriminator-shaped classifier fit from scratch on fixed feature vectors.

    Parameters
    ----------
    hidden : int, default 128
    slope : float, default 0.2
        Leaky-ReLU negative slope.
    epochs : int, default 100
    batch_size : int, default 32
    lr : float, default 1e-3
    random_state : int, default 0
    """

    def __init__(self, hidden: int = 128, slope: float = 0.2, epochs: int = 100,
                 batch_size: int = 32, lr: float = 1e-3, random_state: int = 0):
        self.hidden = hidden
        self.slope = slope
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        rng = np.random.default_rng(self.random_state)
        self.net_ = Discriminator(X.shape[1], len(self.classes_), self.hidden, self.slope, rng)
        state = AdamState(lr=self.lr, beta1=0.9)
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            for s in range(0, len(X), self.batch_size):
                idx = order[s:s + self.batch_size]
                self.net_.zero_grad()
                logits = self.net_(Tensor(X[idx]))
                loss = ops.mul(ops.log_softmax_nll(logits, yi[idx]), 1.0 / len(idx))
                backward(loss)
                adam_step(self.net_.params, state)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        with no_grad():
            return self.net_(Tensor(np.asarray(X, dtype=np.float64))).data

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=-1)]


def encode_summaries(model, seqs: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
    """Frozen latent summaries for a list of id sequences."""
    out = []
    with no_grad():
        for s in range(0, len(seqs), batch_size):
            chunk = seqs[s:s + batch_size]
            b = pad_batch(chunk, np.zeros((len(chunk), 1)))
            out.append(latent_summary(model.encode(b.ids, b.lengths)).data.astype(np.float64))
    return np.concatenate(out, axis=0)


@dataclass
class ProbeReport:
    lambda_adv: float
    discriminator_train_acc: float
    postfit_test_acc: float
    text_classifier_acc: float

    FIELDS = ("lambda_adv", "discriminator_train_acc", "postfit_test_acc", "text_classifier_acc")

    def __post_init__(self):
        for name in self.FIELDS[1:]:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def row(self) -> dict:
        return asdict(self)


def postfit_probe(model, train_seqs, train_labels, test_seqs, test_labels,
                  discriminator_train_acc: float, lambda_adv: float,
                  text_classifier_acc: float, probe: Optional[LatentProbe] = None) -> ProbeReport:
    """Fit a fresh discriminator-shaped classifier on frozen latents and report the contrast."""
    probe = probe if probe is not None else LatentProbe()
    Ztr = encode_summaries(model, train_seqs)
    Zte = encode_summaries(model, test_seqs)
    probe.fit(Ztr, train_labels)
    acc = float(probe.score(Zte, test_labels))
    return ProbeReport(float(lambda_adv), float(discriminator_train_acc), acc, float(text_classifier_acc))


def reports_to_csv(reports: List[ProbeReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ProbeReport.FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.row().items()})
    return buf.getvalue()
