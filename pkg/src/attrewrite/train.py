"""Denoising auto-encoding plus on-the-fly back-translation.

Per step the loss is ``lambda_ae(t) * DAE + lambda_bt * BT`` where DAE
reconstructs ``x`` from a corrupted copy under its true attributes, and BT
first rewrites ``x`` under random target attributes (no gradient through that
generation) and then reconstructs ``x`` from the rewrite under the true
attributes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .autodiff import AdamState, adam_step, backward, clip_grad_norm, no_grad, ops, store
from .data import AttributeSchema, BatchSampler, pad_batch, sample_target_attrs
from .model import AttributeRewriter, ModelConfig, default_gen_cap
from .probe import Discriminator, adversarial_loss, latent_summary
from .text import UNK, BpeModel, Vocabulary

log = logging.getLogger(__name__)

CKPT_MAGIC = b"ATRC"
CKPT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, last_good: Optional[str]):
        super().__init__(message)
        self.last_good = last_good


class AssetMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 32
    seed: int = 0
    lr: float = 3e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    lambda_ae: float = 1.0
    lambda_bt: float = 1.0
    ae_horizon: int = 1500
    temperature_max: float = 0.5
    temperature_horizon: int = 1500
    word_drop: float = 0.1
    shuffle_k: int = 3
    lambda_adv: float = 0.0
    adv_attribute: int = 0
    probe: bool = False
    batch_mode: str = "auto"
    checkpoint_every: int = 0
    validate_every: int = 0

    def __post_init__(self):
        if not 0 <= self.word_drop < 1:
            raise ValueError("word_drop must be in [0, 1)")
        if self.shuffle_k < 0:
            raise ValueError("shuffle_k must be >= 0")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        base = dict(lr=1e-4, beta1=0.5, batch_size=32, ae_horizon=300_000, temperature_horizon=300_000,
                    steps=300_000)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def lambda_ae_at(t: int, cfg: TrainConfig) -> float:
    if cfg.ae_horizon <= 0:
        return 0.0
    return cfg.lambda_ae * max(0.0, 1.0 - t / cfg.ae_horizon)


def temperature_at(t: int, cfg: TrainConfig) -> float:
    if cfg.temperature_horizon <= 0:
        return cfg.temperature_max
    return cfg.temperature_max * min(1.0, t / cfg.temperature_horizon)


ABLATIONS = ("-pooling", "-temperature", "-attention", "-back-translation", "+adversarial")


def apply_ablation(name: str, model_cfg: ModelConfig, train_cfg: TrainConfig, lambda_adv: float = 1.0):
    """Return (model_cfg, train_cfg) copies with one component removed or added."""
    if name == "-pooling":
        return replace(model_cfg, pool_width=1), train_cfg
    if name == "-temperature":
        return model_cfg, replace(train_cfg, temperature_max=0.0)
    if name == "-attention":
        return replace(model_cfg, pool_width=None), train_cfg
    if name == "-back-translation":
        return model_cfg, replace(train_cfg, lambda_bt=0.0)
    if name == "+adversarial":
        return model_cfg, replace(train_cfg, lambda_adv=lambda_adv)
    raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")


def corrupt(x: Sequence[int], p_wd: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Word drops then a local shuffle moving no token more than ``k`` places.

    At least one token always survives the drops.
    """
    x = np.asarray(x)
    n = len(x)
    if n == 0:
        return x.copy()
    keep = rng.random(n) >= p_wd
    if not keep.any():
        keep[rng.integers(n)] = True
    kept = x[keep]
    if k > 0 and len(kept) > 1:
        keys = np.arange(len(kept)) + rng.uniform(0, k + 1, size=len(kept))
        kept = kept[np.argsort(keys, kind="stable")]
    return kept.copy()


@dataclass
class StepLog:
    step: int
    lambda_ae: float
    temperature: float
    dae_loss: Optional[float]
    bt_loss: Optional[float]
    total: float
    adv_acc: Optional[float] = None

    HEADER = ("step", "lambda_ae", "temperature", "dae_loss", "bt_loss", "total")

    def csv_row(self) -> List[str]:
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        return [str(self.step), fmt(self.lambda_ae), fmt(self.temperature),
                fmt(self.dae_loss), fmt(self.bt_loss), fmt(self.total)]


class Trainer:
    """Owns the model, its optimizer state and all training randomness."""

    def __init__(self, model: AttributeRewriter, seqs: Sequence[np.ndarray], attrs: np.ndarray,
                 schema: AttributeSchema, config: TrainConfig,
                 bpe: Optional[BpeModel] = None, vocab: Optional[Vocabulary] = None):
        self.model = model
        self.seqs = [np.asarray(s, dtype=np.int64) for s in seqs]
        self.attrs = np.asarray(attrs, dtype=np.int64)
        self.schema = schema
        self.config = config
        self.bpe, self.vocab = bpe, vocab
        self.step = 0
        self.rngs = rngmod.streams(config.seed)
        self.sampler = BatchSampler(self.attrs, schema, config.batch_size, config.batch_mode, self.rngs["data"])
        self.adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.empty_generations = 0
        self.disc: Optional[Discriminator] = None
        self.disc_adam: Optional[AdamState] = None
        self.adv_acc_history: List[float] = []
        if config.probe or config.lambda_adv > 0:
            k = config.adv_attribute
            self.disc = Discriminator(2 * model.config.hidden_dim, schema.sizes[k], rng=self.rngs["probe"])
            self.disc_adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.history: List[StepLog] = []

    # -- loss terms ------------------------------------------------------------------

    def next_batch(self):
        idx = self.sampler.sample_indices()
        return [self.seqs[i] for i in idx], self.attrs[idx]

    def dae_loss(self, seqs, attrs, latent_hook=None):
        """Teacher-forced NLL of ``seqs`` from their corruptions, per sentence."""
        cfg = self.config
        noisy = [corrupt(s, cfg.word_drop, cfg.shuffle_k, self.rngs["noise"]) for s in seqs]
        src = pad_batch(noisy, attrs)
        latent = self.model.encode(src.ids, src.lengths)
        if latent_hook is not None:
            latent_hook(latent)
        tgt = pad_batch(seqs, attrs)
        nll = self.model.decode_teacher_forced(latent, attrs, tgt.ids, tgt.lengths)
        return ops.mul(nll, 1.0 / len(seqs))

    def bt_generate(self, seqs, temperature: float):
        """Rewrite under uniformly drawn targets with no gradient recording."""
        rng = self.rngs["bt"]
        y_tilde = sample_target_attrs(self.schema, len(seqs), rng)
        src = pad_batch(seqs, y_tilde)
        with no_grad():
            latent = self.model.encode(src.ids, src.lengths)
            out = self.model.generate(latent, y_tilde, temperature, rng, max_len=default_gen_cap(src.lengths))
        fixed = []
        for o in out:
            if len(o) == 0:
                self.empty_generations += 1
                o = np.array([UNK], dtype=np.int64)
            fixed.append(o)
        return fixed, y_tilde

    def bt_loss_from(self, generated, seqs, attrs):
        src = pad_batch(generated, attrs)
        latent = self.model.encode(src.ids, src.lengths)
        tgt = pad_batch(seqs, attrs)
        nll = self.model.decode_teacher_forced(latent, attrs, tgt.ids, tgt.lengths)
        return ops.mul(nll, 1.0 / len(seqs))

    def bt_loss(self, seqs, attrs, temperature: float):
        generated, _ = self.bt_generate(seqs, temperature)
        return self.bt_loss_from(generated, seqs, attrs)

    # -- one optimisation step ---------------------------------------------------------

    def train_step(self) -> StepLog:
        cfg = self.config
        t = self.step
        lam_ae = lambda_ae_at(t, cfg)
        temp = temperature_at(t, cfg)
        seqs, attrs = self.next_batch()
        self.model.zero_grad()
        if self.disc is not None:
            self.disc.zero_grad()

        total = None
        dae_v = bt_v = adv_acc = None
        adv_terms = []

        def hook(latent):
            if self.disc is not None:
                loss, acc = adversarial_loss(self.disc, latent_summary(latent),
                                             attrs[:, cfg.adv_attribute], cfg.lambda_adv)
                adv_terms.append((loss, acc))

        if cfg.lambda_bt > 0:
            generated, _ = self.bt_generate(seqs, temp)
        if lam_ae > 0 or self.disc is not None:
            dae = self.dae_loss(seqs, attrs, latent_hook=hook)
            dae_v = float(dae.data)
            if lam_ae > 0:
                total = ops.mul(dae, lam_ae)
        if cfg.lambda_bt > 0:
            bt = self.bt_loss_from(generated, seqs, attrs)
            bt_v = float(bt.data)
            term = ops.mul(bt, cfg.lambda_bt)
            total = term if total is None else ops.add(total, term)
        if adv_terms:
            loss, adv_acc = adv_terms[0]
            self.adv_acc_history.append(adv_acc)
            total = loss if total is None else ops.add(total, loss)
        if total is None:
            raise ValueError("every loss term is switched off")
        total_v = float(total.data)
        if not np.isfinite(total_v):
            raise FloatingPointError(f"non-finite loss at step {t}")
        backward(total)
        clip_grad_norm(self.model.params, cfg.clip_norm)
        adam_step(self.model.params, self.adam)
        if self.disc is not None:
            clip_grad_norm(self.disc.params, cfg.clip_norm)
            adam_step(self.disc.params, self.disc_adam)
        self.step += 1
        entry = StepLog(t, lam_ae, temp, dae_v, bt_v, total_v, adv_acc)
        self.history.append(entry)
        return entry

    def discriminator_train_accuracy(self, window: float = 0.1) -> float:
        """Mean adversarial-discriminator batch accuracy over the last ``window`` of steps."""
        h = self.adv_acc_history
        if not h:
            raise ValueError("no adversarial steps recorded")
        n = max(1, int(round(len(h) * window)))
        return float(np.mean(h[-n:]))

    # -- checkpoints ----------------------------------------------------------------

    def state_dict(self, metrics: Optional[dict] = None) -> tuple:
        meta = {
            "step": self.step,
            "lambda_ae": lambda_ae_at(self.step, self.config),
            "temperature": temperature_at(self.step, self.config),
            "metrics": metrics or {},
            "rng": {k: rngmod.get_state(g) for k, g in self.rngs.items()},
            "model_config": self.model.config.to_dict(),
            "train_config": self.config.to_dict(),
            "schema": json.loads(self.schema.to_json()),
            "adam": self.adam.hyper(),
            "empty_generations": self.empty_generations,
            "fallbacks": self.sampler.fallbacks,
            "adv_acc_history": self.adv_acc_history,
            "dtype": str(next(iter(self.model.params.values())).data.dtype),
        }
        if self.bpe is not None:
            meta["bpe"] = self.bpe.to_text()
            meta["bpe_sha256"] = self.bpe.digest()
        if self.vocab is not None:
            meta["vocab"] = self.vocab.to_text()
            meta["vocab_sha256"] = self.vocab.digest()
        arrays = {f"model/{k}": v for k, v in self.model.state_arrays().items()}
        for k, v in self.adam.m.items():
            arrays[f"adam_m/{k}"] = v
            arrays[f"adam_v/{k}"] = self.adam.v[k]
        if self.disc is not None:
            meta["disc_adam"] = self.disc_adam.hyper()
            for k, p in self.disc.params.items():
                arrays[f"disc/{k}"] = p.data
            for k, v in self.disc_adam.m.items():
                arrays[f"disc_m/{k}"] = v
                arrays[f"disc_v/{k}"] = self.disc_adam.v[k]
        return meta, arrays

    def save_checkpoint(self, path, metrics: Optional[dict] = None) -> str:
        meta, arrays = self.state_dict(metrics)
        write_checkpoint(path, meta, arrays)
        return str(path)

    def load_state(self, meta: dict, arrays: Dict[str, np.ndarray]) -> None:
        self.model.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("model/")})
        self.step = int(meta["step"])
        for k, st in meta["rng"].items():
            if k in self.rngs:
                rngmod.set_state(self.rngs[k], st)
        a = meta["adam"]
        self.adam.step = int(a["step"])
        self.adam.m = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")}
        self.adam.v = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")}
        self.empty_generations = int(meta.get("empty_generations", 0))
        self.sampler.fallbacks = int(meta.get("fallbacks", 0))
        self.adv_acc_history = list(meta.get("adv_acc_history", []))
        if self.disc is not None:
            for k, p in self.disc.params.items():
                p.data = arrays[f"disc/{k}"].astype(p.data.dtype)
            self.disc_adam.step = int(meta["disc_adam"]["step"])
            self.disc_adam.m = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("disc_m/")}
            self.disc_adam.v = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("disc_v/")}

    # -- loop ---------------------------------------------------------------------

    def train(self, steps: Optional[int] = None, run_dir=None,
              validate: Optional[Callable[["Trainer"], dict]] = None,
              log_file=None) -> List[dict]:
        """Run until ``steps`` total steps; returns a record per checkpoint written/validated."""
        cfg = self.config
        target = cfg.steps if steps is None else steps
        run_dir = Path(run_dir) if run_dir is not None else None
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
        writer = None
        if log_file is not None:
            writer = csv.writer(log_file, lineterminator="\n")
        records = []
        last_good = None
        # validation defaults to ten evenly spaced points over the run
        val_every = (cfg.validate_every or max(1, target // 10)) if validate is not None else 0
        while self.step < target:
            try:
                entry = self.train_step()
            except FloatingPointError as err:
                raise TrainingDiverged(str(err), last_good) from err
            if writer is not None:
                writer.writerow(entry.csv_row())
            s = self.step
            at_val = bool(val_every) and s % val_every == 0
            at_ckpt = bool(cfg.checkpoint_every) and s % cfg.checkpoint_every == 0
            if at_val or at_ckpt or s == target:
                metrics = validate(self) if (validate is not None and (at_val or s == target)) else {}
                rec = {"step": s, "metrics": metrics, "path": None}
                if run_dir is not None:
                    rec["path"] = last_good = self.save_checkpoint(run_dir / f"ckpt_{s:07d}.bin", metrics)
                records.append(rec)
        return records


# -- checkpoint file ---------------------------------------------------------------

def write_checkpoint(path, meta: dict, arrays: Dict[str, np.ndarray]) -> None:
    """``ATRC`` | uint16 version | uint32 json length | JSON | parameter store bytes."""
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(store.dumps(arrays))
    os.replace(tmp, path)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise store.StoreFormatError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise store.StoreFormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(buf[10:10 + n].decode("utf-8"))
    arrays = store.loads(buf[10 + n:])
    return meta, arrays


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


@dataclass
class LoadedCheckpoint:
    meta: dict
    model: AttributeRewriter
    schema: AttributeSchema
    bpe: Optional[BpeModel]
    vocab: Optional[Vocabulary]


def load_checkpoint(path, bpe: Optional[BpeModel] = None, vocab: Optional[Vocabulary] = None) -> LoadedCheckpoint:
    """Rebuild the model from a checkpoint.

    When ``bpe`` / ``vocab`` are supplied their hashes must match the ones the
    checkpoint was trained with; otherwise :class:`AssetMismatch` is raised.
    """
    meta, arrays = read_checkpoint(path)
    for asset, key in ((bpe, "bpe_sha256"), (vocab, "vocab_sha256")):
        if asset is not None and key in meta and asset.digest() != meta[key]:
            raise AssetMismatch(f"{key.split('_')[0]} asset does not match checkpoint")
    mcfg = ModelConfig(**meta["model_config"])
    from .autodiff import precision
    mode = "high" if meta.get("dtype") == "float64" else "standard"
    with precision(mode):
        model = AttributeRewriter(mcfg)
    model.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("model/")})
    schema = AttributeSchema.from_json(json.dumps(meta["schema"]))
    bpe = bpe if bpe is not None else (BpeModel.from_text(meta["bpe"]) if "bpe" in meta else None)
    vocab = vocab if vocab is not None else (Vocabulary.from_text(meta["vocab"]) if "vocab" in meta else None)
    return LoadedCheckpoint(meta, model, schema, bpe, vocab)


def resume_trainer(path, seqs, attrs, schema: AttributeSchema, bpe=None, vocab=None,
                   config_overrides: Optional[dict] = None) -> Trainer:
    ck = load_checkpoint(path, bpe, vocab)
    cfg = TrainConfig.from_dict({**ck.meta["train_config"], **(config_overrides or {})})
    meta, arrays = read_checkpoint(path)
    trainer = Trainer(ck.model, seqs, attrs, schema, cfg, ck.bpe, ck.vocab)
    trainer.load_state(meta, arrays)
    return trainer


# -- model selection -----------------------------------------------------------------

def harmonic_mean(acc: float, self_bleu: float) -> float:
    b = self_bleu / 100.0
    if acc <= 0 or b <= 0:
        return 0.0
    return 2 * acc * b / (acc + b)


def select_model(checkpoints: Sequence[dict], min_accuracy: float, min_self_bleu: float) -> dict:
    """Best checkpoint by harmonic mean among those meeting both thresholds.

    Each record needs ``step``, ``accuracy`` and ``self_bleu``. Ties go to the
    earlier step. If none qualifies, the one with the smallest threshold
    shortfall is returned and a warning is logged.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    ok = [c for c in checkpoints if c["accuracy"] >= min_accuracy and c["self_bleu"] >= min_self_bleu]
    if ok:
        return max(ok, key=lambda c: (harmonic_mean(c["accuracy"], c["self_bleu"]), -c["step"]))
    log.warning("no checkpoint meets accuracy >= %s and self-BLEU >= %s", min_accuracy, min_self_bleu)

    def shortfall(c):
        return (max(0.0, min_accuracy - c["accuracy"]) + max(0.0, min_self_bleu - c["self_bleu"]) / 100.0,
                c["step"])

    return min(checkpoints, key=shortfall)
