import copy
import logging

import numpy as np
import pytest

from attrewrite.autodiff import active_tape
from attrewrite.eval.report import encode_sentences
from attrewrite.model import AttributeRewriter, ModelConfig
from attrewrite.text import EOS, UNK
from attrewrite.train import (ABLATIONS, AssetMismatch, TrainConfig, Trainer, TrainingDiverged,
                              apply_ablation, corrupt, harmonic_mean, lambda_ae_at, load_checkpoint,
                              resume_trainer, select_model, temperature_at)
from attrewrite.text import BpeModel


def make_trainer(small_synth, seed=0, **cfg):
    schema, corpus, tok = small_synth
    seqs = encode_sentences(tok, corpus.sentences)
    mcfg = ModelConfig(len(tok.vocab_), schema.sizes, emb_dim=8, hidden_dim=8, attn_dim=8, pool_width=1)
    model = AttributeRewriter(mcfg, np.random.default_rng(seed))
    base = dict(batch_size=4, seed=seed, ae_horizon=20, temperature_horizon=20)
    base.update(cfg)
    return Trainer(model, seqs, corpus.attrs, schema, TrainConfig(**base), tok.bpe_, tok.vocab_)


# -- corruption -------------------------------------------------------------------

def test_corrupt_identity_without_noise(rng):
    x = np.arange(4, 20)
    assert np.array_equal(corrupt(x, 0.0, 0, rng), x)


def test_corrupt_drop_only_keeps_order(rng):
    x = np.arange(4, 40)
    for _ in range(50):
        y = corrupt(x, 0.3, 0, rng)
        assert np.all(np.diff(y) > 0) and set(y) <= set(x)


def test_corrupt_never_drops_everything(rng):
    for _ in range(200):
        assert len(corrupt(np.array([5, 6]), 0.99, 2, rng)) >= 1


def test_corrupt_statistics_over_many_trials():
    rng = np.random.default_rng(0)
    x = np.arange(12)
    dropped = total = 0
    worst = 0
    for _ in range(100_000):
        y = corrupt(x, 0.1, 3, rng)
        dropped += len(x) - len(y)
        total += len(x)
        # displacement among survivors: position in y versus rank among kept tokens
        rank = np.argsort(np.argsort(y))
        worst = max(worst, int(np.abs(rank - np.arange(len(y))).max()))
    assert abs(dropped / total - 0.1) < 0.01
    assert worst <= 3


# -- schedules ------------------------------------------------------------------------

@pytest.mark.parametrize("h", [1000, 1500, 300_000])
def test_schedule_endpoints_and_midpoint(h):
    cfg = TrainConfig(ae_horizon=h, temperature_horizon=h)
    assert [lambda_ae_at(t, cfg) for t in (0, h // 2, h)] == [1.0, 0.5, 0.0]
    assert [temperature_at(t, cfg) for t in (0, h // 2, h)] == [0.0, 0.25, 0.5]
    assert lambda_ae_at(2 * h, cfg) == 0.0 and temperature_at(2 * h, cfg) == 0.5


def test_full_scale_preset():
    cfg = TrainConfig.full_scale()
    assert (cfg.lr, cfg.beta1, cfg.batch_size, cfg.ae_horizon, cfg.lambda_bt) == (1e-4, 0.5, 32, 300_000, 1.0)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"stepz": 3})


# -- loss terms -------------------------------------------------------------------------

def test_generation_records_nothing_on_tape(small_synth):
    tr = make_trainer(small_synth)
    seqs, _ = tr.next_batch()
    before = len(active_tape())
    tr.bt_generate(seqs, 0.5)
    assert len(active_tape()) == before
    assert all(p.grad is None for p in tr.model.params.values())


def test_bt_gradient_independent_of_generation_temperature(small_synth):
    tr = make_trainer(small_synth)
    seqs, attrs = tr.next_batch()
    gen, _ = tr.bt_generate(seqs, 0.0)

    def grads():
        tr.model.zero_grad()
        from attrewrite.autodiff import backward
        backward(tr.bt_loss_from(gen, seqs, attrs))
        return {k: p.grad.copy() for k, p in tr.model.params.items() if p.grad is not None}

    g1 = grads()
    tr.bt_generate(seqs, 0.5)  # a sampled generation in between must not leak into the gradient
    g2 = grads()
    assert g1.keys() == g2.keys()
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_copy_generation_gives_autoencoding_loss(small_synth):
    tr = make_trainer(small_synth, word_drop=0.0, shuffle_k=0)
    seqs, attrs = tr.next_batch()
    dae = float(tr.dae_loss(seqs, attrs).data)
    bt = float(tr.bt_loss_from(seqs, seqs, attrs).data)
    assert dae == bt and dae >= 0


def test_first_step_generation_is_greedy(small_synth):
    tr = make_trainer(small_synth)
    assert temperature_at(0, tr.config) == 0.0
    seqs, _ = tr.next_batch()
    probe = copy.deepcopy(tr)
    gen, y_tilde = probe.bt_generate(seqs, temperature_at(0, tr.config))
    greedy = tr.model.rewrite(seqs, y_tilde)
    assert all(np.array_equal(g, r if len(r) else np.array([UNK])) for g, r in zip(gen, greedy))


def test_empty_generation_replaced_by_unk(small_synth):
    tr = make_trainer(small_synth)
    tr.model.p("proj.b").data[EOS] = 1e3
    seqs, _ = tr.next_batch()
    gen, _ = tr.bt_generate(seqs, 0.0)
    assert all(g.tolist() == [UNK] for g in gen)
    assert tr.empty_generations == len(seqs)


def test_total_loss_decomposes(small_synth):
    tr = make_trainer(small_synth)
    for _ in range(3):
        tr.train_step()
    twin = copy.deepcopy(tr)
    entry = tr.train_step()
    lam = lambda_ae_at(twin.step, twin.config)
    seqs, attrs = twin.next_batch()
    gen, _ = twin.bt_generate(seqs, temperature_at(twin.step, twin.config))
    dae = float(twin.dae_loss(seqs, attrs).data)
    bt = float(twin.bt_loss_from(gen, seqs, attrs).data)
    assert entry.dae_loss == dae and entry.bt_loss == bt
    assert entry.total == pytest.approx(lam * dae + twin.config.lambda_bt * bt, rel=1e-6)


def test_no_back_translation_is_pure_denoising(small_synth):
    tr = make_trainer(small_synth, lambda_bt=0.0)
    e = tr.train_step()
    assert e.bt_loss is None and e.total == pytest.approx(e.dae_loss * e.lambda_ae, rel=1e-6)


def test_past_horizon_is_pure_back_translation(small_synth):
    tr = make_trainer(small_synth, ae_horizon=2)
    logs = [tr.train_step() for _ in range(3)]
    assert logs[2].lambda_ae == 0.0 and logs[2].dae_loss is None
    assert logs[2].total == pytest.approx(logs[2].bt_loss, rel=1e-6)


def test_denoising_loss_falls_on_single_sentence(small_synth):
    schema, corpus, tok = small_synth
    one = corpus.subset([0, 1])
    one.attrs[:] = [[0], [1]]
    seqs = encode_sentences(tok, one.sentences)
    mcfg = ModelConfig(len(tok.vocab_), schema.sizes, emb_dim=16, hidden_dim=16, attn_dim=16, pool_width=1)
    tr = Trainer(AttributeRewriter(mcfg, np.random.default_rng(0)), seqs, one.attrs, schema,
                 TrainConfig(batch_size=2, lambda_bt=0.0, ae_horizon=10 ** 6, lr=1e-2))
    losses = [tr.train_step().dae_loss for _ in range(200)]
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])


def test_ablations_cover_the_table():
    m, t = ModelConfig(10, [2]), TrainConfig()
    out = {name: apply_ablation(name, m, t) for name in ABLATIONS}
    assert out["-pooling"][0].pool_width == 1
    assert out["-attention"][0].pool_width is None
    assert out["-temperature"][1].temperature_max == 0.0
    assert out["-back-translation"][1].lambda_bt == 0.0
    assert out["+adversarial"][1].lambda_adv == 1.0
    with pytest.raises(ValueError):
        apply_ablation("-everything", m, t)


# -- checkpoints -------------------------------------------------------------------------

def test_same_seed_gives_identical_checkpoints(small_synth, tmp_path):
    for name in ("a", "b"):
        make_trainer(small_synth).train(6, run_dir=tmp_path / name)
    assert (tmp_path / "a" / "ckpt_0000006.bin").read_bytes() == (tmp_path / "b" / "ckpt_0000006.bin").read_bytes()


def test_resume_matches_uninterrupted_run(small_synth, tmp_path):
    schema, corpus, tok = small_synth
    full = make_trainer(small_synth, checkpoint_every=4)
    full.train(8, run_dir=tmp_path / "full")
    seqs = encode_sentences(tok, corpus.sentences)
    half = resume_trainer(tmp_path / "full" / "ckpt_0000004.bin", seqs, corpus.attrs, schema, tok.bpe_, tok.vocab_)
    assert half.step == 4
    half.train(8, run_dir=tmp_path / "resumed")
    a = (tmp_path / "full" / "ckpt_0000008.bin").read_bytes()
    b = (tmp_path / "resumed" / "ckpt_0000008.bin").read_bytes()
    assert a == b


def test_checkpoint_refuses_other_assets(small_synth, tmp_path):
    tr = make_trainer(small_synth)
    path = tr.save_checkpoint(tmp_path / "c.bin")
    with pytest.raises(AssetMismatch):
        load_checkpoint(path, bpe=BpeModel([("x", "y")]))
    ck = load_checkpoint(path)
    assert ck.schema == small_synth[0] and ck.bpe.merges == tr.bpe.merges


def test_non_finite_loss_aborts_with_last_good(small_synth, tmp_path, monkeypatch):
    tr = make_trainer(small_synth, checkpoint_every=2)
    real = tr.train_step

    def flaky():
        if tr.step == 3:
            raise FloatingPointError("non-finite loss")
        return real()

    monkeypatch.setattr(tr, "train_step", flaky)
    with pytest.raises(TrainingDiverged) as err:
        tr.train(10, run_dir=tmp_path)
    assert err.value.last_good.endswith("ckpt_0000002.bin")


# -- selection ------------------------------------------------------------------------

def test_select_single_qualifier():
    ck = [{"step": 1, "accuracy": 0.95, "self_bleu": 50.0}, {"step": 2, "accuracy": 0.5, "self_bleu": 90.0}]
    assert select_model(ck, 0.9, 40)["step"] == 1


def test_select_warns_when_none_qualify(caplog):
    ck = [{"step": 1, "accuracy": 0.5, "self_bleu": 10.0}, {"step": 2, "accuracy": 0.85, "self_bleu": 35.0}]
    with caplog.at_level(logging.WARNING):
        assert select_model(ck, 0.9, 40)["step"] == 2
    assert "no checkpoint" in caplog.text


def test_select_prefers_dominating_checkpoint_and_earlier_ties(rng):
    for _ in range(100):
        a, b = rng.uniform(0.1, 1), rng.uniform(1, 99)
        worse = {"step": 1, "accuracy": a, "self_bleu": b}
        better = {"step": 2, "accuracy": min(1.0, a + 0.05), "self_bleu": b + 1}
        assert select_model([worse, better], 0, 0)["step"] == 2
    same = [{"step": 5, "accuracy": 0.9, "self_bleu": 50.0}, {"step": 3, "accuracy": 0.9, "self_bleu": 50.0}]
    assert select_model(same, 0, 0)["step"] == 3
    assert harmonic_mean(0.0, 50) == 0.0
