from __future__ import annotations

import zlib
from typing import Dict, List, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted


def _tokens(doc) -> List[str]:
    return doc.split() if isinstance(doc, str) else list(doc)


def hashed_ngrams(tokens: Sequence[str], n_buckets: int, max_n: int = 2) -> List[int]:
    feats = []
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            key = "\x1f".join(tokens[i:i + n]).encode("utf-8")
            feats.append(zlib.crc32(key) % n_buckets)
    return feats


class NgramClassifier(ClassifierMixin, BaseEstimator):
    """Softmax regression over averaged hashed unigram and bigram indicators.

    Trained with minibatch SGD whose learning rate decays linearly to zero
    over ``epochs`` passes.

    Parameters
    ----------
    n_buckets : int, default 2**16
    max_n : int, default 2
    epochs : int, default 20
    lr : float, default 10.0
        Large because the averaged features keep per-step gradients small.
    batch_size : int, default 16
    random_state : int, default 0
    """

    def __init__(self, n_buckets: int = 2 ** 16, max_n: int = 2, epochs: int = 20,
                 lr: float = 10.0, batch_size: int = 16, random_state: int = 0):
        self.n_buckets = n_buckets
        self.max_n = max_n
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def _features(self, X) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for i, doc in enumerate(X):
            f = hashed_ngrams(_tokens(doc), self.n_buckets, self.max_n)
            if not f:
                continue
            w = 1.0 / len(f)
            rows.extend([i] * len(f))
            cols.extend(f)
            vals.extend([w] * len(f))
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(X), self.n_buckets))

    def fit(self, X, y):
        X = list(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise ValueError("cannot fit a classifier on an empty corpus")
        self.classes_, yi = np.unique(y, return_inverse=True)
        F = self._features(X)
        K = len(self.classes_)
        self.coef_ = np.zeros((self.n_buckets, K))
        self.intercept_ = np.zeros(K)
        onehot = np.eye(K)[yi]
        rng = np.random.default_rng(self.random_state)
        n = len(X)
        total = self.epochs * ((n + self.batch_size - 1) // self.batch_size)
        done = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for s in range(0, n, self.batch_size):
                idx = order[s:s + self.batch_size]
                Fb = F[idx]
                p = self._softmax(Fb @ self.coef_ + self.intercept_)
                g = (p - onehot[idx]) / len(idx)
                lr = self.lr * (1.0 - done / total)
                self.coef_ -= lr * (Fb.T @ g)
                self.intercept_ -= lr * g.sum(axis=0)
                done += 1
        return self

    @staticmethod
    def _softmax(s):
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def decision_function(self, X):
        check_is_fitted(self)
        return self._features(list(X)) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return self._softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]


class AttributeClassifiers:
    """One :class:`NgramClassifier` per attribute, predicting value indices."""

    def __init__(self, schema, **params):
        self.schema = schema
        self.params = params
        self.models: Dict[str, NgramClassifier] = {}

    def fit(self, sentences, attrs: np.ndarray) -> "AttributeClassifiers":
        attrs = np.asarray(attrs)
        for k, a in enumerate(self.schema.attributes):
            present = set(np.unique(attrs[:, k]).tolist())
            missing = [a.values[v] for v in range(len(a.values)) if v not in present]
            if missing:
                raise ValueError(f"attribute {a.name!r} values {missing} absent from training data")
            self.models[a.name] = NgramClassifier(**self.params).fit(sentences, attrs[:, k])
        return self

    def predict(self, sentences, k: int) -> np.ndarray:
        return self.models[self.schema.names[k]].predict(sentences)


def attribute_accuracy(classifier, generations, targets, k: int = 0) -> float:
    """Fraction of generations whose predicted value for attribute ``k`` equals the target."""
    targets = np.asarray(targets)
    if len(generations) != len(targets):
        raise ValueError("generations and targets differ in length")
    if len(targets) == 0:
        raise ValueError("no generations to score")
    if isinstance(classifier, AttributeClassifiers):
        model = classifier.models[classifier.schema.names[k]]
    else:
        model = classifier
    unseen = set(np.unique(targets).tolist()) - set(model.classes_.tolist())
    if unseen:
        raise ValueError(f"target values {sorted(unseen)} were never seen by the classifier")
    return float(np.mean(model.predict(generations) == targets))
