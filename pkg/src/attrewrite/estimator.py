"""Scikit-learn style front end over tokenizer, model and trainer."""
from __future__ import annotations

from typing import Mapping, Optional

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as rngmod
from .data import AttributeSchema
from .model import AttributeRewriter, ModelConfig
from .text import BpeTokenizer
from .train import TrainConfig, Trainer
from .validation import check_attr_matrix, check_sentences


class StyleRewriter(BaseEstimator):
    """Attribute-controlled sentence rewriter trained without parallel data.

    ``fit`` learns subwords and trains with denoising plus back-translation
    on sentences labelled with their attribute values. ``transform`` rewrites
    new sentences towards requested values.

    Parameters
    ----------
    schema : AttributeSchema or mapping of name to list of values
    n_merges : int, default 500
    emb_dim, hidden_dim : int, default 64
    pool_width : int or None, default 1
        Width of the temporal max-pool over encoder states; None keeps a
        single window.
    steps : int, default 1500
    batch_size : int, default 32
    lr : float, default 3e-3
    lambda_bt : float, default 1.0
    word_drop : float, default 0.1
    shuffle_k : int, default 3
    random_state : int, default 0

    Attributes
    ----------
    tokenizer_ : BpeTokenizer
    model_ : AttributeRewriter
    schema_ : AttributeSchema
    history_ : list of StepLog
    """

    def __init__(self, schema=None, n_merges: int = 500, emb_dim: int = 64, hidden_dim: int = 64,
                 pool_width: Optional[int] = 1, steps: int = 1500, batch_size: int = 32,
                 lr: float = 3e-3, lambda_bt: float = 1.0, word_drop: float = 0.1,
                 shuffle_k: int = 3, random_state: int = 0):
        self.schema = schema
        self.n_merges = n_merges
        self.emb_dim = emb_dim
        self.hidden_dim = hidden_dim
        self.pool_width = pool_width
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_bt = lambda_bt
        self.word_drop = word_drop
        self.shuffle_k = shuffle_k
        self.random_state = random_state

    def _schema(self) -> AttributeSchema:
        if isinstance(self.schema, AttributeSchema):
            return self.schema
        if isinstance(self.schema, Mapping):
            return AttributeSchema.from_dict(self.schema)
        raise ValueError("schema must be an AttributeSchema or a mapping of name to values")

    def fit(self, X, y):
        """Train on raw sentences ``X`` with attribute values ``y`` (one row per sentence)."""
        X = check_sentences(X)
        self.schema_ = self._schema()
        attrs = check_attr_matrix(y, self.schema_, len(X))
        self.tokenizer_ = BpeTokenizer(self.n_merges).fit(X)
        seqs = self.tokenizer_.transform(X)
        mcfg = ModelConfig(len(self.tokenizer_.vocab_), self.schema_.sizes, emb_dim=self.emb_dim,
                           hidden_dim=self.hidden_dim, attn_dim=self.hidden_dim,
                           pool_width=self.pool_width)
        self.model_ = AttributeRewriter(mcfg, rngmod.stream(self.random_state, "init"))
        tcfg = TrainConfig(steps=self.steps, batch_size=self.batch_size, seed=self.random_state,
                           lr=self.lr, lambda_bt=self.lambda_bt, ae_horizon=self.steps,
                           temperature_horizon=self.steps, word_drop=self.word_drop,
                           shuffle_k=self.shuffle_k)
        trainer = Trainer(self.model_, seqs, attrs, self.schema_, tcfg,
                          self.tokenizer_.bpe_, self.tokenizer_.vocab_)
        trainer.train()
        self.history_ = trainer.history
        return self

    def transform(self, X, y):
        """Greedy rewrites of ``X`` under target values ``y`` (a single row is broadcast)."""
        check_is_fitted(self)
        X = check_sentences(X)
        targets = check_attr_matrix(y, self.schema_, len(X))
        seqs = self.tokenizer_.transform(X)
        out = []
        for s in range(0, len(seqs), 64):
            gens = self.model_.rewrite(seqs[s:s + 64], targets[s:s + 64])
            out.extend(self.tokenizer_.decode(g) for g in gens)
        return out

    def predict(self, X, y):
        """Alias of :meth:`transform`."""
        return self.transform(X, y)

    def n_parameters(self) -> int:
        check_is_fitted(self)
        return self.model_.n_parameters()

