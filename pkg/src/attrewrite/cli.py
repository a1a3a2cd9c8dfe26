"""Command line: ``attrewrite <command> [flags]``.

Every command that takes ``--out`` writes into that run directory a
``manifest.json`` holding the command, the fully resolved configuration and
the SHA-256 of every input and output file. Reruns with the same manifest
reproduce the same outputs byte for byte.

Failures print one JSON line to stderr, for example::

    {"error": "unknown_attribute", "exit": 2, "message": "..."}

Exit codes: 0 success, 1 bad input, 2 unknown attribute or value,
3 asset hash mismatch, 4 numeric failure during training (the JSON line then
carries ``last_good``, the newest checkpoint written before the failure).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import rng as rngmod
from .data import (DEFAULT_LEXICONS, AttributeSchema, CorpusFormatError, UnknownAttributeValue,
                   default_schema, load_corpus, synth_corpus_generate)
from .eval import AttributeClassifiers, bleu, evaluate_model, tradeoff_csv, tradeoff_curve
from .eval.lm import KneserNeyLM
from .model import AttributeRewriter, ModelConfig
from .probe import postfit_probe, reports_to_csv
from .eval.report import config_fingerprint, encode_sentences
from .text import BpeModel, BpeTokenizer, Vocabulary, normalize_tokenize
from .train import (AssetMismatch, TrainConfig, Trainer, TrainingDiverged, file_sha256,
                    load_checkpoint, resume_trainer, select_model)
from .validation import assignments_to_values, parse_assignments

EXIT_INPUT, EXIT_ATTRIBUTE, EXIT_HASH, EXIT_NUMERIC = 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_INPUT, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


# -- helpers -------------------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing_file", f"{p} does not exist")
    return p


def write_manifest(out: Path, command: str, config: dict, inputs: List, outputs: List) -> None:
    body = {
        "command": command,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    _write_text(out / "manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def _tokenizer(args, ckpt=None) -> BpeTokenizer:
    """Tokenizer from --bpe/--vocab, falling back to the assets stored in a checkpoint."""
    bpe = BpeModel.load(_existing(args.bpe)) if getattr(args, "bpe", None) else None
    vocab = Vocabulary.load(_existing(args.vocab)) if getattr(args, "vocab", None) else None
    if ckpt is not None:
        bpe = bpe or ckpt.bpe
        vocab = vocab or ckpt.vocab
    if bpe is None or vocab is None:
        raise CliError("missing_asset", "BPE merges and vocabulary are required (--bpe, --vocab)")
    return BpeTokenizer.from_assets(bpe, vocab)


def _load_ckpt(args):
    bpe = BpeModel.load(_existing(args.bpe)) if getattr(args, "bpe", None) else None
    vocab = Vocabulary.load(_existing(args.vocab)) if getattr(args, "vocab", None) else None
    return load_checkpoint(_existing(args.checkpoint), bpe, vocab)


def _pool_width(text: str):
    """Integer width, or the string ``"inf"`` for a single window."""
    if str(text).lower() in ("inf", "none"):
        return "inf"
    w = int(text)
    if w < 1:
        raise argparse.ArgumentTypeError("pool width must be >= 1 or 'inf'")
    return w


# -- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = default_schema(args.attributes)
    gen = rngmod.stream(args.seed, "data")
    corpus = synth_corpus_generate(schema, args.n, DEFAULT_LEXICONS, gen)
    train, test = corpus.split(args.n_test, gen)
    schema.save(out / "schema.json")
    train.save(out / "train.tsv")
    test.save(out / "test.tsv")
    cfg = {"attributes": args.attributes, "n": args.n, "n_test": args.n_test, "seed": args.seed}
    write_manifest(out, "synth", cfg, [], [out / "schema.json", out / "train.tsv", out / "test.tsv"])
    return 0


def cmd_learn_bpe(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = AttributeSchema.load(_existing(args.schema))
    corpus = load_corpus(_existing(args.corpus), schema)
    tok = BpeTokenizer(args.merges).fit(corpus.texts())
    tok.bpe_.save(out / "bpe.txt")
    tok.vocab_.save(out / "vocab.txt")
    write_manifest(out, "learn-bpe", {"merges": args.merges}, [args.schema, args.corpus],
                   [out / "bpe.txt", out / "vocab.txt"])
    return 0


MODEL_FLAGS = ("emb_dim", "hidden_dim", "attn_dim", "pool_width", "use_output_bias", "max_gen_len")
TRAIN_FLAGS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


def _resolve_configs(args, vocab_size: int, schema: AttributeSchema):
    """Defaults, then a --config JSON file, then explicit flags."""
    file_cfg = {}
    if args.config:
        with open(_existing(args.config), encoding="utf-8") as fh:
            file_cfg = json.load(fh)
    model_kw = dict(file_cfg.get("model", {}))
    train_kw = dict(file_cfg.get("train", {}))
    for name in MODEL_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            model_kw[name] = v
    if isinstance(model_kw.get("pool_width"), str):
        w = _pool_width(model_kw["pool_width"])
        model_kw["pool_width"] = None if w == "inf" else w
    for name in TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            train_kw[name] = v
    train_kw["seed"] = args.seed
    base = ModelConfig.desk_scale(vocab_size, schema.sizes)
    try:
        mcfg = ModelConfig(**{**base.to_dict(), **model_kw, "vocab_size": vocab_size,
                              "attr_sizes": schema.sizes})
        tcfg = TrainConfig.from_dict(train_kw)
    except (TypeError, ValueError) as err:
        raise CliError("bad_config", str(err)) from None
    return mcfg, tcfg


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = AttributeSchema.load(_existing(args.schema))
    corpus = load_corpus(_existing(args.corpus), schema)
    if len(corpus) == 0:
        raise CliError("empty_corpus", f"{args.corpus} holds no sentences")
    tok = _tokenizer(args)
    seqs = encode_sentences(tok, corpus.sentences)
    if args.resume:
        overrides = {"steps": args.steps} if args.steps is not None else None
        trainer = resume_trainer(_existing(args.resume), seqs, corpus.attrs, schema, tok.bpe_, tok.vocab_,
                                 config_overrides=overrides)
        mcfg, tcfg = trainer.model.config, trainer.config
    else:
        mcfg, tcfg = _resolve_configs(args, len(tok.vocab_), schema)
        model = AttributeRewriter(mcfg, rngmod.stream(tcfg.seed, "init"))
        trainer = Trainer(model, seqs, corpus.attrs, schema, tcfg, tok.bpe_, tok.vocab_)
    validate = _validator(args, tok, corpus, schema) if args.valid else None
    log_path = out / "log.csv"
    mode = "a" if args.resume else "w"
    with open(log_path, mode, encoding="utf-8", newline="\n") as fh:
        if not args.resume:
            fh.write("step,lambda_ae,temperature,dae_loss,bt_loss,total\n")
        try:
            records = trainer.train(run_dir=out, log_file=fh, validate=validate)
        except TrainingDiverged as err:
            raise CliError("numeric_failure", str(err), EXIT_NUMERIC, last_good=err.last_good) from None
    ckpts = [r["path"] for r in records if r["path"]]
    outputs = [log_path] + ckpts
    cfg = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "resume": args.resume}
    best = ckpts[-1] if ckpts else ""
    if validate is not None:
        rows = [{"step": r["step"], "path": r["path"], **r["metrics"]} for r in records if r["metrics"]]
        lines = ["step,accuracy,self_bleu\n"] + [f"{r['step']},{r['accuracy']:.6f},{r['self_bleu']:.6f}\n" for r in rows]
        _write_text(out / "valid.csv", "".join(lines))
        outputs.append(out / "valid.csv")
        best = select_model(rows, args.min_accuracy, args.min_self_bleu)["path"]
        cfg["selection"] = {"min_accuracy": args.min_accuracy, "min_self_bleu": args.min_self_bleu,
                            "selected": Path(best).name}
    inputs = [args.schema, args.corpus, args.bpe, args.vocab] + ([args.resume] if args.resume else [])
    inputs += [args.valid] if args.valid else []
    write_manifest(out, "train", cfg, inputs, outputs)
    print(best)
    return 0


def _validator(args, tok, train_corpus, schema, limit: int = 100):
    """Accuracy and self-BLEU on the validation corpus, averaged over attributes."""
    valid = load_corpus(_existing(args.valid), schema)
    valid = valid.subset(range(min(limit, len(valid))))
    clf = AttributeClassifiers(schema).fit(train_corpus.sentences, train_corpus.attrs)

    def run(trainer) -> dict:
        rep = evaluate_model(trainer.model, tok, valid, clf, joint=False)
        scores = list(rep.scores.values())
        return {"accuracy": float(np.mean([s.accuracy for s in scores])),
                "self_bleu": float(np.mean([s.self_bleu for s in scores]))}

    return run


def _read_lines(path) -> List[str]:
    if path in (None, "-"):
        return [ln.rstrip("\n") for ln in sys.stdin]
    with open(_existing(path), encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh]


def cmd_rewrite(args) -> int:
    ck = _load_ckpt(args)
    tok = _tokenizer(args, ck)
    schema = ck.schema
    try:
        assign = parse_assignments(args.set or [])
    except ValueError as err:
        raise CliError("bad_flag", str(err)) from None
    values = assignments_to_values(assign, schema)
    target = np.asarray(schema.encode(values), dtype=np.int64)
    lines = _read_lines(args.input)
    sents = [normalize_tokenize(s) for s in lines]
    seqs = encode_sentences(tok, sents)
    outputs = []
    for s in range(0, len(seqs), 64):
        chunk = seqs[s:s + 64]
        gens = ck.model.rewrite(chunk, np.tile(target, (len(chunk), 1)))
        outputs.extend(tok.decode(g) for g in gens)
    text = "".join(o + "\n" for o in outputs)
    if args.output:
        _write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "rewrites.txt", text)
        inputs = [args.checkpoint] + ([args.input] if args.input not in (None, "-") else [])
        write_manifest(out, "rewrite", {"set": dict(zip(schema.names, values))}, inputs,
                       [out / "rewrites.txt"])
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.candidates:
        if not args.references:
            raise CliError("bad_flag", "--candidates needs --references")
        cands = [normalize_tokenize(s) for s in _read_lines(args.candidates)]
        refs = [normalize_tokenize(s) for s in _read_lines(args.references)]
        if len(cands) != len(refs):
            raise CliError("bad_input", f"{len(cands)} candidates vs {len(refs)} references")
        score = bleu(cands, refs)
        _write_text(out / "report.csv", f"metric,value\nbleu,{score:.6f}\n")
        write_manifest(out, "eval", {"mode": "bleu"}, [args.candidates, args.references],
                       [out / "report.csv"])
        print(f"bleu {score:.2f}")
        return 0
    if not (args.checkpoint and args.train and args.test):
        raise CliError("bad_flag", "model evaluation needs --checkpoint, --train and --test")
    ck = _load_ckpt(args)
    tok = _tokenizer(args, ck)
    train = load_corpus(_existing(args.train), ck.schema)
    test = load_corpus(_existing(args.test), ck.schema)
    if args.limit:
        test = test.subset(range(min(args.limit, len(test))))
    clf = AttributeClassifiers(ck.schema).fit(train.sentences, train.attrs)
    lm = KneserNeyLM(args.lm_order).fit(train.sentences) if args.lm_order > 0 else None
    fp = config_fingerprint(ck.meta["model_config"], ck.meta["train_config"], ck.meta["step"])
    rep = evaluate_model(ck.model, tok, test, clf, lm=lm, joint=not args.no_joint, fingerprint=fp)
    _write_text(out / "report.csv", rep.to_csv())
    _write_text(out / "report.json", json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "eval", {"lm_order": args.lm_order, "limit": args.limit, "joint": not args.no_joint},
                   [args.checkpoint, args.train, args.test], [out / "report.csv", out / "report.json"])
    sys.stdout.write(rep.to_table())
    return 0


def cmd_probe(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ck = _load_ckpt(args)
    tok = _tokenizer(args, ck)
    hist = ck.meta.get("adv_acc_history") or []
    if not hist:
        raise CliError("bad_input", "checkpoint was trained without a discriminator (use --probe or --lambda-adv)")
    k = ck.meta["train_config"]["adv_attribute"]
    train = load_corpus(_existing(args.train), ck.schema)
    test = load_corpus(_existing(args.test), ck.schema)
    n = max(1, int(round(len(hist) * 0.1)))
    disc_acc = float(np.mean(hist[-n:]))
    clf = AttributeClassifiers(ck.schema).fit(train.sentences, train.attrs)
    text_acc = float(np.mean(clf.predict(test.sentences, k) == test.attrs[:, k]))
    rep = postfit_probe(ck.model, encode_sentences(tok, train.sentences), train.attrs[:, k],
                        encode_sentences(tok, test.sentences), test.attrs[:, k],
                        disc_acc, ck.meta["train_config"]["lambda_adv"], text_acc)
    _write_text(out / "probe.csv", reports_to_csv([rep]))
    write_manifest(out, "probe", {"attribute": ck.schema.names[k]},
                   [args.checkpoint, args.train, args.test], [out / "probe.csv"])
    sys.stdout.write(reports_to_csv([rep]))
    return 0


def cmd_tradeoff(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    loaded = []
    for path in args.checkpoint:
        ck = load_checkpoint(_existing(path))
        loaded.append((path, ck))
    tok = BpeTokenizer.from_assets(loaded[0][1].bpe, loaded[0][1].vocab)
    for path, ck in loaded[1:]:
        if ck.meta.get("vocab_sha256") != loaded[0][1].meta.get("vocab_sha256"):
            raise CliError("asset_mismatch", f"{path} uses a different vocabulary", EXIT_HASH)
    schema = loaded[0][1].schema
    train = load_corpus(_existing(args.train), schema)
    test = load_corpus(_existing(args.test), schema)
    if args.limit:
        test = test.subset(range(min(args.limit, len(test))))
    clf = AttributeClassifiers(schema).fit(train.sentences, train.attrs)
    k = schema.position(args.attribute) if args.attribute else 0
    models = []
    for path, ck in loaded:
        w = ck.model.config.pool_width
        models.append((Path(path).parent.name + "/" + Path(path).name, float("inf") if w is None else w, ck.model))
    try:
        points = tradeoff_curve(models, tok, test, clf, attribute=k)
    except ValueError as err:
        raise CliError("bad_input", str(err)) from None
    text = tradeoff_csv(points)
    _write_text(out / "tradeoff.csv", text)
    write_manifest(out, "tradeoff", {"attribute": schema.names[k], "limit": args.limit},
                   list(args.checkpoint) + [args.train, args.test], [out / "tradeoff.csv"])
    sys.stdout.write(text)
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attrewrite", description="Attribute-controlled sentence rewriting.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic marker-word corpus")
    s.add_argument("--attributes", type=int, choices=(1, 2), default=1)
    s.add_argument("--n", type=int, default=3000, help="total sentences")
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("learn-bpe", help="learn BPE merges and a subword vocabulary")
    s.add_argument("--corpus", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--merges", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn_bpe)

    s = sub.add_parser("train", help="train a rewriter")
    s.add_argument("--corpus", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--bpe", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--config", help="JSON file with 'model' and 'train' sections")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--valid", help="validation corpus; checkpoints and scores every --validate-every steps")
    s.add_argument("--min-accuracy", type=float, default=0.0, help="selection threshold")
    s.add_argument("--min-self-bleu", type=float, default=0.0, help="selection threshold")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    g = s.add_argument_group("model")
    g.add_argument("--emb-dim", dest="emb_dim", type=int)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    g.add_argument("--attn-dim", dest="attn_dim", type=int)
    g.add_argument("--pool-width", dest="pool_width", type=_pool_width, help="integer or 'inf'")
    g.add_argument("--no-output-bias", dest="use_output_bias", action="store_const", const=False)
    g.add_argument("--max-gen-len", dest="max_gen_len", type=int)
    g = s.add_argument_group("training")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            g.add_argument(flag, dest=f.name, action="store_const", const=True)
        else:
            kind = {"int": int, "float": float, "str": str}.get(f.type if isinstance(f.type, str) else f.type.__name__)
            g.add_argument(flag, dest=f.name, type=kind)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("rewrite", help="rewrite sentences towards target attribute values")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--set", action="append", metavar="NAME=VALUE", help="target value, repeat per attribute")
    s.add_argument("--input", help="one sentence per line; default standard input")
    s.add_argument("--output", help="default standard output")
    s.add_argument("--bpe", help="verify merges against the checkpoint")
    s.add_argument("--vocab", help="verify vocabulary against the checkpoint")
    s.add_argument("--out", help="optional run directory for a manifest")
    s.set_defaults(func=cmd_rewrite)

    s = sub.add_parser("eval", help="score a checkpoint, or BLEU of candidates against references")
    s.add_argument("--checkpoint")
    s.add_argument("--train", help="corpus for the attribute classifiers and the LM")
    s.add_argument("--test")
    s.add_argument("--bpe")
    s.add_argument("--vocab")
    s.add_argument("--lm-order", type=int, default=5, help="0 disables perplexity")
    s.add_argument("--limit", type=int, default=0, help="evaluate only the first N test sentences")
    s.add_argument("--no-joint", action="store_true")
    s.add_argument("--candidates")
    s.add_argument("--references")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("probe", help="post-fit latent classifier against the adversarial discriminator")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--bpe")
    s.add_argument("--vocab")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("tradeoff", help="accuracy and self-BLEU per checkpoint, ordered by pool width")
    s.add_argument("--checkpoint", action="append", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--attribute")
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tradeoff)
    return p


def _fail(kind: str, message: str, code: int, **extra) -> int:
    body = {"error": kind, "exit": code, "message": message, **extra}
    sys.stderr.write(json.dumps(body, sort_keys=True) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        return _fail(err.kind, str(err), err.code, **err.extra)
    except UnknownAttributeValue as err:
        return _fail("unknown_attribute", str(err), EXIT_ATTRIBUTE)
    except AssetMismatch as err:
        return _fail("asset_mismatch", str(err), EXIT_HASH)
    except FloatingPointError as err:
        return _fail("numeric_failure", str(err), EXIT_NUMERIC, last_good=None)
    except (CorpusFormatError, ValueError, OSError) as err:
        return _fail("bad_input", str(err), EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
