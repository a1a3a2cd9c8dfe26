"""Attribute-conditioned sequence-to-sequence rewriter.

Encoder: stacked bidirectional LSTM whose per-position states (forward and
backward concatenated) are max-pooled over non-overlapping windows of width
``pool_width``. Decoder: stacked LSTM that starts from the mean of the
selected attribute-value embeddings, attends over the pooled states with an
additive score ``v . tanh(Wq s + Wk z)``, and adds the mean attribute output
bias to its vocabulary logits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .autodiff.tensor import default_dtype
from .data import pad_batch
from .text import ATTR, EOS, PAD


@dataclass
class ModelConfig:
    vocab_size: int
    attr_sizes: List[int]
    emb_dim: int = 64
    hidden_dim: int = 64
    attn_dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    pool_width: Optional[int] = 5  # None: one window over the whole input
    use_output_bias: bool = True
    max_gen_len: int = 100
    init_scale: float = 0.1

    def __post_init__(self):
        if self.pool_width is not None and self.pool_width < 1:
            raise ValueError("pool_width must be >= 1 or None")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        self.attr_sizes = [int(s) for s in self.attr_sizes]

    @classmethod
    def full_scale(cls, vocab_size: int, attr_sizes: Sequence[int]) -> "ModelConfig":
        return cls(vocab_size, list(attr_sizes), emb_dim=512, hidden_dim=512, attn_dim=512, pool_width=5)

    @classmethod
    def desk_scale(cls, vocab_size: int, attr_sizes: Sequence[int], pool_width: Optional[int] = 1) -> "ModelConfig":
        return cls(vocab_size, list(attr_sizes), pool_width=pool_width)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Latent:
    """Pooled encoder states ``z`` of shape (B, J, 2H) and their validity mask (B, J)."""

    z: Tensor
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def n_windows(length: int, width: Optional[int]) -> int:
    if width is None:
        return 1
    return -(-int(length) // width)


class AttributeRewriter:
    """Parameter container plus the encode / condition / decode operations."""

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: Dict[str, Tensor] = {}
        c = config
        E, H, A, V = c.emb_dim, c.hidden_dim, c.attn_dim, c.vocab_size
        s = c.init_scale

        def new(name, shape, value=None):
            if value is None:
                arr = rng.uniform(-s, s, size=shape)
            else:
                arr = np.broadcast_to(np.asarray(value, dtype=np.float64), shape).copy()
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

        new("emb", (V, E))
        for k, size in enumerate(c.attr_sizes):
            new(f"attr_emb.{k}", (size, E))
            new(f"attr_bias.{k}", (size, V), value=0.0)
        for l in range(c.enc_layers):
            d_in = E if l == 0 else 2 * H
            for d in ("fw", "bw"):
                self._lstm_params(new, f"enc.{l}.{d}", d_in, H)
        for l in range(c.dec_layers):
            self._lstm_params(new, f"dec.{l}", E if l == 0 else H, H)
            new(f"init.{l}.W", (2 * H, H))
            new(f"init.{l}.b", (H,), value=0.0)
        new("att.Wq", (H, A))
        new("att.Wk", (2 * H, A))
        new("att.v", (A, 1))
        new("out.W", (H + 2 * H, H))
        new("out.b", (H,), value=0.0)
        new("proj.W", (H, V))
        new("proj.b", (V,), value=0.0)

    @staticmethod
    def _lstm_params(new, prefix, d_in, H):
        new(f"{prefix}.Wx", (d_in, 4 * H))
        new(f"{prefix}.Wh", (H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        new(f"{prefix}.b", (4 * H,), value=b)

    def p(self, name: str) -> Tensor:
        return self.params[name]

    # -- recurrent core ---------------------------------------------------------------

    def _lstm_cell(self, gx: Tensor, h: Tensor, c: Tensor, Wh: Tensor):
        H = self.config.hidden_dim
        gates = ops.add(gx, ops.matmul(h, Wh))
        sig = ops.sigmoid(gates[:, : 3 * H])
        g = ops.tanh(gates[:, 3 * H:])
        i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 2 * H:]
        c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
        h_new = ops.mul(o, ops.tanh(c_new))
        return h_new, c_new

    def _run_lstm(self, xproj: Tensor, prefix: str, mask: np.ndarray, reverse: bool,
                  h0: Optional[Tensor] = None) -> List[Tensor]:
        B, T, _ = xproj.shape
        H = self.config.hidden_dim
        Wh = self.p(f"{prefix}.Wh")
        zeros = Tensor(np.zeros((B, H), dtype=xproj.data.dtype))
        h = h0 if h0 is not None else zeros
        c = zeros
        outs: List[Optional[Tensor]] = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            h_new, c_new = self._lstm_cell(xproj[:, t], h, c, Wh)
            m = mask[:, t]
            if m.all():
                h, c = h_new, c_new
            else:
                mt = Tensor(m[:, None].astype(xproj.data.dtype))
                h = ops.add(h, ops.mul(mt, ops.sub(h_new, h)))
                c = ops.add(c, ops.mul(mt, ops.sub(c_new, c)))
            outs[t] = h
        return outs

    @staticmethod
    def _stack(states: List[Tensor]) -> Tensor:
        B, H = states[0].shape
        return ops.concat([ops.reshape(s, (B, 1, H)) for s in states], axis=1)

    def _project(self, x: Tensor, prefix: str) -> Tensor:
        return ops.add(ops.matmul(x, self.p(f"{prefix}.Wx")), self.p(f"{prefix}.b"))

    # -- public operations --------------------------------------------------------------

    def encode(self, ids: np.ndarray, lengths: np.ndarray) -> Latent:
        """Bidirectional stacked LSTM followed by windowed temporal max-pooling."""
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        if ids.ndim != 2 or ids.shape[1] == 0 or (lengths < 1).any():
            raise ValueError("encode needs nonempty sequences")
        B, T = ids.shape
        mask = np.arange(T)[None, :] < lengths[:, None]
        x = ops.embedding(self.p("emb"), ids)
        for l in range(self.config.enc_layers):
            fw = self._run_lstm(self._project(x, f"enc.{l}.fw"), f"enc.{l}.fw", mask, reverse=False)
            bw = self._run_lstm(self._project(x, f"enc.{l}.bw"), f"enc.{l}.bw", mask, reverse=True)
            x = ops.concat([self._stack(fw), self._stack(bw)], axis=-1)
        width = T if self.config.pool_width is None else min(self.config.pool_width, T)
        z = ops.temporal_max_pool(x, width, mask)
        J = z.shape[1]
        rows = np.array([n_windows(L, self.config.pool_width) for L in lengths])
        zmask = np.arange(J)[None, :] < rows[:, None]
        return Latent(z, zmask, lengths)

    def condition(self, attrs: np.ndarray):
        """Mean attribute embedding (B, E) and mean output bias (B, V) or None."""
        attrs = np.asarray(attrs, dtype=np.int64)
        if attrs.ndim == 1:
            attrs = attrs[None, :]
        sizes = self.config.attr_sizes
        if attrs.shape[1] != len(sizes):
            raise ValueError(f"expected {len(sizes)} attribute columns, got {attrs.shape[1]}")
        for k, size in enumerate(sizes):
            if attrs[:, k].min() < 0 or attrs[:, k].max() >= size:
                raise ValueError(f"attribute {k} value index out of range 0..{size - 1}")
        m = len(sizes)
        inv = 1.0 / m
        start = None
        bias = None
        for k in range(m):
            e = ops.embedding(self.p(f"attr_emb.{k}"), attrs[:, k])
            start = e if start is None else ops.add(start, e)
            if self.config.use_output_bias:
                b = ops.embedding(self.p(f"attr_bias.{k}"), attrs[:, k])
                bias = b if bias is None else ops.add(bias, b)
        if m > 1:
            start = ops.mul(start, inv)
            if bias is not None:
                bias = ops.mul(bias, inv)
        return start, bias

    def _init_states(self, latent: Latent) -> List[Tensor]:
        dtype = latent.z.data.dtype
        w = (latent.mask / latent.mask.sum(axis=1, keepdims=True)).astype(dtype)
        zmean = ops.sum(ops.mul(latent.z, Tensor(w[:, :, None])), axis=1)
        return [
            ops.tanh(ops.add(ops.matmul(zmean, self.p(f"init.{l}.W")), self.p(f"init.{l}.b")))
            for l in range(self.config.dec_layers)
        ]

    def _readout(self, S: Tensor, latent: Latent, bias: Optional[Tensor]) -> Tensor:
        """Attention over ``latent`` plus output layer for decoder states S (B, T, H)."""
        B, T, H = S.shape
        q = ops.matmul(S, self.p("att.Wq"))                          # (B, T, A)
        k = ops.matmul(latent.z, self.p("att.Wk"))                   # (B, J, A)
        J, A = k.shape[1], k.shape[2]
        e = ops.tanh(ops.add(ops.reshape(q, (B, T, 1, A)), ops.reshape(k, (B, 1, J, A))))
        scores = ops.reshape(ops.matmul(e, self.p("att.v")), (B, T, J))
        alpha = ops.softmax(scores, axis=-1, mask=latent.mask[:, None, :])
        ctx = ops.matmul(alpha, latent.z)                            # (B, T, 2H)
        o = ops.tanh(ops.add(ops.matmul(ops.concat([S, ctx], axis=-1), self.p("out.W")), self.p("out.b")))
        logits = ops.add(ops.matmul(o, self.p("proj.W")), self.p("proj.b"))
        if bias is not None:
            logits = ops.add(logits, ops.reshape(bias, (B, 1, bias.shape[-1])))
        return logits

    def decoder_logits(self, latent: Latent, attrs: np.ndarray, inputs: np.ndarray) -> Tensor:
        """Teacher-forced logits (B, T+1, V) for previous-token ``inputs`` (B, T)."""
        B, T = inputs.shape
        E = self.config.emb_dim
        start, bias = self.condition(attrs)
        x = ops.concat([ops.reshape(start, (B, 1, E)), ops.embedding(self.p("emb"), inputs)], axis=1)
        full = np.ones((B, T + 1), dtype=bool)
        h0 = self._init_states(latent)
        for l in range(self.config.dec_layers):
            states = self._run_lstm(self._project(x, f"dec.{l}"), f"dec.{l}", full, reverse=False, h0=h0[l])
            x = self._stack(states)
        return self._readout(x, latent, bias)

    def decode_teacher_forced(self, latent: Latent, attrs: np.ndarray, targets: np.ndarray,
                              lengths: np.ndarray) -> Tensor:
        """Summed NLL of ``targets`` (B, L, PAD-padded, without EOS) followed by EOS."""
        targets = np.asarray(targets, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        B, L = targets.shape
        if lengths.max() > self.config.max_gen_len:
            raise ValueError(f"target length {int(lengths.max())} exceeds max_gen_len {self.config.max_gen_len}")
        gold = np.concatenate([targets, np.full((B, 1), PAD, dtype=np.int64)], axis=1)
        gold[np.arange(B), lengths] = EOS
        weights = (np.arange(L + 1)[None, :] <= lengths[:, None]).astype(default_dtype())
        logits = self.decoder_logits(latent, attrs, targets)
        return ops.log_softmax_nll(logits, gold, weights)

    def generate(self, latent: Latent, attrs: np.ndarray, temperature: float = 0.0,
                 rng: Optional[np.random.Generator] = None, max_len: Optional[int] = None) -> List[np.ndarray]:
        """Autoregressive decoding; greedy when ``temperature`` is 0.

        Never records on the tape. Stops at EOS or ``max_len`` tokens.
        """
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        if temperature > 0 and rng is None:
            raise ValueError("sampling needs an rng")
        cap = self.config.max_gen_len if max_len is None else min(max_len, self.config.max_gen_len)
        with no_grad():
            return self._generate(latent, np.asarray(attrs), temperature, rng, cap)

    def _generate(self, latent, attrs, temperature, rng, cap):
        z = latent.z
        B = z.shape[0]
        H = self.config.hidden_dim
        start, bias = self.condition(attrs)
        hs = self._init_states(latent)
        cs = [Tensor(np.zeros((B, H), dtype=z.data.dtype)) for _ in hs]
        x = start
        out = np.full((B, cap), PAD, dtype=np.int64)
        lengths = np.full(B, cap, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for t in range(cap):
            inp = x
            for l in range(self.config.dec_layers):
                gx = self._project(inp, f"dec.{l}")
                hs[l], cs[l] = self._lstm_cell(gx, hs[l], cs[l], self.p(f"dec.{l}.Wh"))
                inp = hs[l]
            logits = self._readout(ops.reshape(inp, (B, 1, H)), latent, bias).data[:, 0, :]
            tok = sample_tokens(logits, temperature, rng)
            tok = np.where(done, PAD, tok)
            newly = (~done) & (tok == EOS)
            lengths[newly] = t
            done |= newly
            out[:, t] = np.where(tok == EOS, PAD, tok)
            if done.all():
                break
            x = ops.embedding(self.p("emb"), tok)
        return [out[i, : lengths[i]].copy() for i in range(B)]

    def rewrite(self, seqs: Sequence[Sequence[int]], attrs: np.ndarray, max_len: Optional[int] = None) -> List[np.ndarray]:
        """Encode then greedily decode each sequence under target attributes ``attrs``."""
        attrs = np.asarray(attrs, dtype=np.int64).reshape(len(seqs), -1)
        batch = pad_batch(seqs, attrs)
        with no_grad():
            latent = self.encode(batch.ids, batch.lengths)
            cap = max_len if max_len is not None else default_gen_cap(batch.lengths)
            return self.generate(latent, attrs, 0.0, max_len=cap)

    # -- parameter plumbing -----------------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"parameter {k}: stored shape {arrays[k].shape} vs model {p.shape}")
            p.data = np.array(arrays[k], dtype=p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def default_gen_cap(lengths: np.ndarray) -> int:
    return int(2 * np.max(lengths) + 2)


def sample_tokens(logits: np.ndarray, temperature: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Greedy or temperature sampling; PAD and the attribute slot are never emitted."""
    logits = logits.copy()
    logits[:, [PAD, ATTR]] = -np.inf
    if temperature == 0:
        return logits.argmax(axis=-1)
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(logits.shape[0])[:, None]
    idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)

