import numpy as np
import pytest

from attrewrite.autodiff import AdamState, Tensor, adam_step, backward, ops
from attrewrite.eval.report import encode_sentences
from attrewrite.model import AttributeRewriter, Latent, ModelConfig
from attrewrite.probe import (Discriminator, LatentProbe, ProbeReport, adversarial_loss, latent_summary,
                              postfit_probe, reports_to_csv)
from attrewrite.train import TrainConfig, Trainer


def latent(z, mask):
    mask = np.asarray(mask)
    return Latent(Tensor(np.asarray(z, dtype=np.float64), requires_grad=True), mask, mask.sum(axis=1))


def test_summary_of_single_row_is_that_row():
    z = np.arange(6.0).reshape(1, 1, 6)
    np.testing.assert_array_equal(latent_summary(latent(z, [[True]])).data, z[:, 0])


def test_summary_of_constant_rows_is_the_constant(rng):
    row = rng.normal(size=4)
    z = np.tile(row, (2, 5, 1))
    mask = np.array([[True] * 5, [True, True, False, False, False]])
    z[1, 2:] = 99.0  # padding rows must not count
    np.testing.assert_allclose(latent_summary(latent(z, mask)).data, np.tile(row, (2, 1)))


def test_summary_is_masked_mean(rng):
    z = rng.normal(size=(3, 4, 2))
    mask = np.array([[1, 1, 1, 1], [1, 0, 0, 0], [1, 1, 0, 0]], dtype=bool)
    expected = np.stack([z[i, mask[i]].mean(axis=0) for i in range(3)])
    np.testing.assert_allclose(latent_summary(latent(z, mask)).data, expected)


def test_discriminator_shape():
    d = Discriminator(6, 3, hidden=128)
    assert [d.params[f"l{i}.W"].shape for i in range(3)] == [(6, 128), (128, 128), (128, 3)]


@pytest.mark.parametrize("lam", [0.0, 0.5, 10.0])
def test_reversal_sends_negated_scaled_gradient(lam, rng):
    d = Discriminator(4, 2, hidden=8, rng=rng)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 2, size=5)

    def input_grad(scale, reverse):
        d.zero_grad()
        s = Tensor(x.copy(), requires_grad=True)
        if reverse:
            loss, _ = adversarial_loss(d, s, y, scale)
        else:
            loss = ops.mul(ops.log_softmax_nll(d(s), y), 1.0 / len(y))
        backward(loss)
        return s.grad, {k: p.grad.copy() for k, p in d.params.items()}

    g_rev, disc_rev = input_grad(lam, True)
    g_plain, disc_plain = input_grad(None, False)
    np.testing.assert_allclose(g_rev, -lam * g_plain, rtol=1e-12, atol=0)
    for k in disc_plain:  # the discriminator itself always descends
        np.testing.assert_allclose(disc_rev[k], disc_plain[k], rtol=1e-12)


def test_discriminator_separates_separable_data():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=400)
    X = rng.normal(size=(400, 8)) + 3.0 * (2 * y[:, None] - 1)
    d = Discriminator(8, 2, rng=rng)
    state = AdamState(lr=1e-3)
    accs = []
    for step in range(200):
        idx = rng.integers(0, 400, size=32)
        d.zero_grad()
        loss, acc = adversarial_loss(d, Tensor(X[idx], requires_grad=True), y[idx], 0.0)
        backward(loss)
        adam_step(d.params, state)
        accs.append(acc)
    assert np.mean(accs[-20:]) >= 0.95


def test_zero_weight_probe_leaves_training_bit_identical(small_synth):
    schema, corpus, tok = small_synth
    seqs = encode_sentences(tok, corpus.sentences)
    mcfg = ModelConfig(len(tok.vocab_), schema.sizes, emb_dim=8, hidden_dim=8, attn_dim=8, pool_width=1)

    def run(probe):
        cfg = TrainConfig(batch_size=4, probe=probe, lambda_adv=0.0, ae_horizon=10, temperature_horizon=10)
        tr = Trainer(AttributeRewriter(mcfg, np.random.default_rng(0)), seqs, corpus.attrs, schema, cfg)
        for _ in range(12):  # crosses the horizon so both loss terms are exercised
            tr.train_step()
        return tr

    plain, probed = run(False), run(True)
    assert len(probed.adv_acc_history) == 12 and probed.disc is not None
    for k, p in plain.model.params.items():
        assert np.array_equal(p.data, probed.model.p(k).data), k
    assert 0.0 <= probed.discriminator_train_accuracy() <= 1.0


def test_latent_probe_is_estimator(rng):
    X = np.vstack([rng.normal(-2, 1, size=(60, 3)), rng.normal(2, 1, size=(60, 3))])
    y = np.array([0] * 60 + [1] * 60)
    p = LatentProbe(hidden=16, epochs=20)
    assert p.get_params()["hidden"] == 16
    assert p.fit(X, y).score(X, y) >= 0.95


def test_untrained_probe_is_at_chance(rng):
    X = rng.normal(size=(2000, 6))
    y = np.tile([0, 1], 1000)
    assert abs(LatentProbe(hidden=16, epochs=0).fit(X, y).score(X, y) - 0.5) < 0.05


def test_postfit_probe_on_untrained_encoder(small_synth):
    schema, corpus, tok = small_synth
    seqs = encode_sentences(tok, corpus.sentences)
    m = AttributeRewriter(ModelConfig(len(tok.vocab_), schema.sizes, emb_dim=8, hidden_dim=8, attn_dim=8),
                          np.random.default_rng(0))
    y = corpus.attrs[:, 0]
    rep = postfit_probe(m, seqs[:200], y[:200], seqs[200:], y[200:], 0.5, 0.0, 1.0,
                        probe=LatentProbe(hidden=16, epochs=5))
    assert 0.0 <= rep.postfit_test_acc <= 1.0
    assert reports_to_csv([rep]).splitlines()[0] == ",".join(ProbeReport.FIELDS)


def test_probe_report_bounds():
    with pytest.raises(ValueError):
        ProbeReport(1.0, 1.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        ProbeReport(1.0, 0.5, -0.1, 0.5)
