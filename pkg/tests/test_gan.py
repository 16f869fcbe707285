import numpy as np
import pytest
from numpy.testing import assert_allclose

from mlzgen import diffmath as dm
from mlzgen import gan
from mlzgen.classifiers import ClassifierConfig, fit_linear
from mlzgen.data import (
    ClassSpace,
    EmbeddingTable,
    SyntheticConfig,
    feature_matrix,
    generate_synthetic,
    label_matrix,
)
from mlzgen.fusion import (
    generator_param_dict,
    init_generator,
    make_synthesis_inputs,
    synthesize_batch,
)
from mlzgen.nn import LinearParams, MlpParams, mlp_forward, mlp_param_dict
from oracles import (
    fd_grad,
    hand_clamped_bce,
    hand_critic_loss,
    hand_kl,
    hand_bce_logits,
    rel_err,
)


def linear_slope_critic(d, d_e, slope):
    """Critic scoring slope * x[0] + const: one hidden unit kept strictly positive."""
    w1 = np.zeros((d + d_e, 1))
    w1[0, 0] = 1.0
    layer1 = LinearParams(w1, np.full((1, 1), 10.0))  # bias holds lrelu in its linear region
    layer2 = LinearParams(np.full((1, 1), slope), np.zeros((1, 1)))
    return MlpParams(layer1, layer2, "lrelu", "none")


def random_critic(rng, d, d_e, hidden=6):
    critic = gan.init_critic(d, d_e, hidden, seed=int(rng.integers(1000)))
    critic.layer1.bias = rng.normal(size=critic.layer1.bias.shape) * 0.3
    critic.layer2.bias = rng.normal(size=critic.layer2.bias.shape) * 0.3
    return critic


def test_penalty_closed_form_for_linear_critics():
    rng = np.random.default_rng(0)
    d, d_e, b = 5, 3, 8
    real = rng.uniform(size=(b, d))
    synth = rng.uniform(size=(b, d))
    cond = rng.normal(size=(b, d_e))
    for slope in (1.0, 2.0, 3.0, 0.5):
        critic = linear_slope_critic(d, d_e, slope)
        pen = gan.gradient_penalty(critic, real, synth, cond, rng=np.random.default_rng(1))
        assert pen == (slope - 1.0) ** 2  # exact: gradient is slope * e1 everywhere


def test_zero_critic_loss_is_minus_lambda():
    # all-zero critic: gap 0, gradient norm 0, penalty (0-1)^2 = 1
    d, d_e, b = 4, 3, 6
    critic = linear_slope_critic(d, d_e, 0.0)
    critic.layer1.weight = np.zeros_like(critic.layer1.weight)
    critic.layer1.bias = np.zeros_like(critic.layer1.bias)
    rng = np.random.default_rng(2)
    for lam in (10.0, 2.5):
        loss = gan.critic_loss(
            critic, rng.uniform(size=(b, d)), rng.uniform(size=(b, d)),
            rng.normal(size=(b, d_e)), penalty_weight=lam, rng=np.random.default_rng(3),
        )
        assert loss == -lam


def test_critic_loss_matches_hand_computation():
    rng = np.random.default_rng(4)
    for _ in range(10):
        b = int(rng.integers(2, 7))
        d, d_e = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        critic = random_critic(rng, d, d_e)
        real = rng.uniform(size=(b, d))
        synth = rng.uniform(size=(b, d))
        cond = rng.normal(size=(b, d_e))
        eps = rng.uniform(size=(b, 1))
        lam = float(rng.uniform(1.0, 12.0))
        ours = gan.critic_loss(critic, real, synth, cond, penalty_weight=lam, eps=eps)
        hand = hand_critic_loss(critic, real, synth, cond, eps, lam)
        assert rel_err(np.array([ours]), np.array([hand])) < 1e-10


def test_critic_loss_decomposes_with_shared_eps():
    rng = np.random.default_rng(5)
    b, d, d_e = 6, 4, 3
    critic = random_critic(rng, d, d_e)
    real = rng.uniform(size=(b, d))
    synth = rng.uniform(size=(b, d))
    cond = rng.normal(size=(b, d_e))
    eps = rng.uniform(size=(b, 1))
    lam = 7.0
    scores_real = mlp_forward(critic, np.hstack([real, cond]))
    scores_synth = mlp_forward(critic, np.hstack([synth, cond]))
    gap = scores_real.mean() - scores_synth.mean()
    pen = gan.gradient_penalty(critic, real, synth, cond, eps=eps)
    total = gan.critic_loss(critic, real, synth, cond, penalty_weight=lam, eps=eps)
    assert_allclose(total, gap - lam * pen, rtol=1e-12, atol=1e-12)


def test_critic_objective_gradients_include_penalty_term():
    # one numeric backward pass differentiates the penalty w.r.t. critic weights
    rng = np.random.default_rng(6)
    b, d, d_e = 4, 3, 2
    critic = random_critic(rng, d, d_e, hidden=4)
    graph = gan._CriticGraph(critic, b, d, d_e, lam=5.0).graph
    real = rng.uniform(size=(b, d))
    synth = rng.uniform(size=(b, d))
    e = rng.uniform(size=(b, 1))
    bindings = {
        "x_real": real,
        "x_synth": synth,
        "interp": e * real + (1.0 - e) * synth,
        "pooled": rng.normal(size=(b, d_e)),
        **mlp_param_dict("critic", critic),
    }
    dm.evaluate(graph, bindings)
    grads = dm.backward(graph)
    for leaf in bindings:
        assert rel_err(fd_grad(graph, bindings, leaf), grads[leaf]) < 1e-5, leaf


def test_gradient_penalty_validations():
    rng = np.random.default_rng(7)
    critic = random_critic(rng, 3, 2)
    ok = rng.uniform(size=(4, 3))
    cond = rng.normal(size=(4, 2))
    with pytest.raises(ValueError, match="align"):
        gan.gradient_penalty(critic, ok, ok[:3], cond)
    with pytest.raises(ValueError, match="0,1"):
        gan.gradient_penalty(critic, ok, ok, cond, eps=np.full((4, 1), 1.5))
    with pytest.raises(ValueError, match="align"):
        gan.critic_loss(critic, ok, ok, cond[:2])


def test_classifier_regularizer_matches_hand_bce():
    rng = np.random.default_rng(8)
    d, s, b = 5, 4, 7
    clf = gan.SeenClassifierParams(rng.normal(size=(d, s)), rng.normal(size=(1, s)))
    x = rng.uniform(size=(b, d))
    y = (rng.uniform(size=(b, s)) < 0.4).astype(np.float64)
    ours = gan.classifier_regularizer(clf, x, y)
    hand = hand_bce_logits(x @ clf.weight + clf.bias, y)
    assert_allclose(ours, hand, rtol=1e-12, atol=1e-12)
    # a zero classifier is maximally uncertain: BCE = ln 2 for any targets
    zero = gan.SeenClassifierParams(np.zeros((d, s)), np.zeros((1, s)))
    assert_allclose(gan.classifier_regularizer(zero, x, y), np.log(2.0), rtol=1e-15)
    with pytest.raises(ValueError, match="batch"):
        gan.classifier_regularizer(clf, x, y[:, :2])


def constant_encoder(d, d_e, mu, logvar):
    """Encoder emitting fixed (mu, logvar) regardless of its input."""
    d_z = len(mu)
    layer1 = LinearParams(np.zeros((d + d_e, 3)), np.zeros((1, 3)))
    layer2 = LinearParams(np.zeros((3, 2 * d_z)), np.array([list(mu) + list(logvar)]))
    return MlpParams(layer1, layer2, "lrelu", "none")


def test_kl_frozen_example_and_mc_oracle():
    rng = np.random.default_rng(9)
    d, d_e, d_z = 4, 3, 2
    table = EmbeddingTable.from_raw(rng.normal(size=(3, d_e)))
    generator = init_generator("ALF", d, d_e, d_z, hidden=5, seed=0)
    enc = constant_encoder(d, d_e, mu=(1.0, 0.0), logvar=(0.0, 0.0))
    x = rng.uniform(size=(2, d))
    kl, _ = gan.vae_losses(enc, generator, x, [(0,), (1, 2)], table, rng=np.random.default_rng(0))
    assert_allclose(kl, 0.5, rtol=1e-12)
    assert_allclose(kl, hand_kl(np.array([[1.0, 0.0]] * 2), np.zeros((2, 2))), rtol=1e-12)

    # Monte Carlo estimate of KL(N(mu, diag(var)) || N(0, I)) for a generic case
    mu = np.array([0.7, -0.4])
    logvar = np.array([0.3, -0.5])
    std = np.exp(0.5 * logvar)
    samples = mu + std * rng.normal(size=(1_000_000, 2))
    log_q = -0.5 * np.sum((samples - mu) ** 2 / np.exp(logvar) + logvar + np.log(2 * np.pi), axis=1)
    log_p = -0.5 * np.sum(samples ** 2 + np.log(2 * np.pi), axis=1)
    mc = float(np.mean(log_q - log_p))
    exact = hand_kl(mu[None], logvar[None])
    assert abs(mc - exact) / exact < 0.01
    enc2 = constant_encoder(d, d_e, mu=tuple(mu), logvar=tuple(logvar))
    kl2, _ = gan.vae_losses(enc2, generator, x, [(0,), (1,)], table, rng=np.random.default_rng(0))
    assert_allclose(kl2, exact, rtol=1e-12)


def test_reconstruction_matches_hand_bce():
    rng = np.random.default_rng(10)
    d, d_e, d_z = 5, 3, 2
    table = EmbeddingTable.from_raw(rng.normal(size=(4, d_e)))
    for mode in ("ALF", "FLF", "CLF"):
        generator = init_generator(mode, d, d_e, d_z, hidden=6, heads=1, mix_hidden=4,
                                   seed=int(rng.integers(1000)))
        encoder = gan.init_encoder(d, d_e, d_z, hidden=5, seed=int(rng.integers(1000)))
        x = rng.uniform(size=(3, d))
        label_sets = [(0,), (1, 3), (2,)]
        eta = rng.normal(size=(3, d_z))
        kl, rec = gan.vae_losses(encoder, generator, x, label_sets, table, eta=eta)
        pooled = make_synthesis_inputs(label_sets, table).pooled
        enc_out = mlp_forward(encoder, np.hstack([x, pooled]))
        mu, logvar = enc_out[:, :d_z], enc_out[:, d_z:]
        z = mu + np.exp(0.5 * logvar) * eta
        recon = synthesize_batch(generator, z, label_sets, table)
        assert_allclose(rec, hand_clamped_bce(recon, x), rtol=1e-10, err_msg=mode)
        assert_allclose(kl, hand_kl(mu, logvar), rtol=1e-10, err_msg=mode)


def test_vae_losses_validations():
    rng = np.random.default_rng(11)
    table = EmbeddingTable.from_raw(rng.normal(size=(3, 3)))
    generator = init_generator("ALF", 4, 3, 2, hidden=5, seed=0)
    encoder = gan.init_encoder(4, 3, 2, hidden=5, seed=0)
    with pytest.raises(ValueError, match="0,1"):
        gan.vae_losses(encoder, generator, np.full((2, 4), 1.5), [(0,), (1,)], table)
    with pytest.raises(ValueError, match="label set"):
        gan.vae_losses(encoder, generator, np.full((2, 4), 0.5), [(0,)], table)


def test_generator_objective_gradients_match_fd():
    # total generator loss (adversarial + classifier + KL + reconstruction)
    rng = np.random.default_rng(12)
    b, d, d_e, d_z, width, seen = 3, 4, 3, 2, 2, 3
    generator = init_generator("CLF", d, d_e, d_z, hidden=4, heads=2, mix_hidden=3, seed=1)
    generator.mixer.output = rng.normal(size=(d, d)) * 0.3
    generator.mixer.mix.layer2.weight = rng.normal(size=(3, d)) * 0.3
    critic = random_critic(rng, d, d_e, hidden=4)
    encoder = gan.init_encoder(d, d_e, d_z, hidden=4, seed=2)
    gg = gan._GeneratorGraph("VAEGAN", generator, critic, encoder, b, d, d_e, d_z,
                             width, seen, alpha=0.1, kl_w=1.0, rec_w=0.1)
    table = EmbeddingTable.from_raw(rng.normal(size=(5, d_e)))
    inputs = make_synthesis_inputs([(0, 2), (1,), (3, 4)], table, width=width)
    bindings = {
        "z": rng.normal(size=(b, d_z)),
        "y": (rng.uniform(size=(b, seen)) < 0.5).astype(np.float64),
        "pooled": inputs.pooled,
        "pairs": inputs.pair_embeddings,
        "expand": inputs.expand,
        "weights": inputs.pool_weights,
        "x_real": rng.uniform(0.05, 0.95, size=(b, d)),
        "eta": rng.normal(size=(b, d_z)),
    }
    bindings.update(generator_param_dict("gen", generator))
    bindings.update(mlp_param_dict("enc", encoder))
    bindings.update(mlp_param_dict("critic", critic))
    clf = gan.SeenClassifierParams(rng.normal(size=(d, seen)) * 0.3, np.zeros((1, seen)))
    bindings.update(clf.param_dict())
    dm.evaluate(gg.graph, bindings)
    grads = dm.backward(gg.graph)
    for prefix in ("gen.", "enc."):
        for leaf in [k for k in bindings if k.startswith(prefix)]:
            assert rel_err(fd_grad(gg.graph, bindings, leaf), grads[leaf]) < 1e-5, leaf


def tiny_corpus(seed=0, **kw):
    cfg = SyntheticConfig(seen_count=4, unseen_count=2, embed_dim=5, feature_dim=6,
                          train_count=48, test_count=12, max_labels=2, seed=seed, **kw)
    return generate_synthetic(cfg)


def tiny_config(**kw):
    base = dict(mode="CLF", heads=2, gen_hidden=8, critic_hidden=8, mix_hidden=8,
                encoder_hidden=8, epochs=2, batch_size=16, critic_steps=2,
                pretrain_epochs=3, learning_rate=1e-3, seed=0)
    base.update(kw)
    return gan.TrainConfig(**base)


def test_train_smoke_both_objectives():
    corpus = tiny_corpus()
    for objective in gan.OBJECTIVES:
        result = gan.train(objective, corpus, tiny_config())
        assert len(result.trace) == 2
        for row in result.trace:
            for field in ("critic_loss", "generator_loss", "kl", "reconstruction",
                          "classifier_term", "wasserstein_gap", "penalty"):
                assert np.isfinite(getattr(row, field)), (objective, field)
        models = result.models
        assert models.generator.mode == "CLF"
        assert (models.encoder is not None) == (objective == "VAEGAN")
        assert models.seen_classifier.frozen
        if objective == "CLSWGAN":
            assert result.trace[0].kl == 0.0 and result.trace[0].reconstruction == 0.0


def test_train_is_deterministic():
    corpus = tiny_corpus()
    a = gan.train("VAEGAN", corpus, tiny_config(mode="FLF"))
    b = gan.train("VAEGAN", corpus, tiny_config(mode="FLF"))
    pa = gan.generator_param_dict("gen", a.models.generator)
    pb = gan.generator_param_dict("gen", b.models.generator)
    for key in pa:
        assert pa[key].tobytes() == pb[key].tobytes(), key
    assert a.trace[-1].generator_loss == b.trace[-1].generator_loss


def test_seen_classifier_matches_direct_pretrain():
    corpus = tiny_corpus()
    config = tiny_config(mode="ALF", epochs=0)
    result = gan.train("CLSWGAN", corpus, config)
    x = feature_matrix(corpus.train_seen)
    y = label_matrix(corpus.train_seen, corpus.class_space.seen_indices)
    cfg = ClassifierConfig(epochs=config.pretrain_epochs, learning_rate=5e-2,
                           batch_size=64, seed=config.seed)
    w, b = fit_linear(x, y, cfg)
    assert result.models.seen_classifier.weight.tobytes() == w.tobytes()
    assert result.models.seen_classifier.bias.tobytes() == b.tobytes()


def test_train_validations():
    corpus = tiny_corpus()
    with pytest.raises(ValueError, match="objective"):
        gan.train("WGAN", corpus, tiny_config())
    with pytest.raises(ValueError, match="critic_steps"):
        gan.train("CLSWGAN", corpus, tiny_config(critic_steps=0))
    with pytest.raises(ValueError, match="batch_size"):
        gan.train("CLSWGAN", corpus, tiny_config(batch_size=0))
    empty = tiny_corpus()
    empty.train_seen = []
    with pytest.raises(ValueError, match="seen instance"):
        gan.train("CLSWGAN", empty, tiny_config())


def test_train_diverges_loudly():
    corpus = tiny_corpus()
    with pytest.raises(gan.TrainingDivergedError):
        gan.train("CLSWGAN", corpus, tiny_config(learning_rate=1e200, epochs=1))


def test_synthesize_unseen_counts_and_anchoring():
    rng = np.random.default_rng(13)
    corpus = tiny_corpus()
    generator = init_generator("ALF", 6, 5, 5, hidden=8, seed=3)
    out = gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings,
                                count_per_class=10, max_labels=2, seed=4)
    assert len(out) == 2 * 10
    unseen = set(corpus.class_space.unseen_indices)
    for i, inst in enumerate(out):
        anchor = 4 if i < 10 else 5  # blocks are anchored per class in order
        assert anchor in inst.labels
        assert set(inst.labels) <= unseen
        assert 1 <= len(inst.labels) <= 2
        assert inst.feature.shape == (6,)
    sizes = {len(inst.labels) for inst in out}
    assert sizes == {1, 2}  # set sizes are drawn across [1, max_labels]


def test_synthesize_unseen_deterministic_and_chunked():
    corpus = tiny_corpus()
    generator = init_generator("FLF", 6, 5, 5, hidden=8, seed=5)
    kw = dict(count_per_class=9, max_labels=2, seed=6)
    a = gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings, **kw)
    b = gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings, **kw)
    assert feature_matrix(a).tobytes() == feature_matrix(b).tobytes()
    # chunking changes batch shapes, not results (up to BLAS summation order)
    c = gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings, chunk=5, **kw)
    assert [i.labels for i in a] == [i.labels for i in c]
    assert_allclose(feature_matrix(a), feature_matrix(c), rtol=1e-12)


def test_synthesize_unseen_validations():
    corpus = tiny_corpus()
    generator = init_generator("ALF", 6, 5, 5, hidden=8, seed=7)
    with pytest.raises(ValueError, match="count_per_class"):
        gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings,
                              count_per_class=0)
    with pytest.raises(ValueError, match="max_labels"):
        gan.synthesize_unseen(generator, corpus.class_space, corpus.embeddings,
                              count_per_class=5, max_labels=3)
    none = gan.synthesize_unseen(generator, ClassSpace(4, 0), corpus.embeddings,
                                 count_per_class=5)
    assert none == []


def test_write_trace_csv(tmp_path):
    rows = [gan.EpochStats(0, -1.5, 0.7, 0.1, 0.2, 0.69, -1.2, 0.03),
            gan.EpochStats(1, -1.1, 0.6, 0.1, 0.2, 0.68, -0.9, 0.02)]
    path = tmp_path / "trace.csv"
    gan.write_trace_csv(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,critic_loss,generator_loss,kl,reconstruction,classifier_term"
    assert len(lines) == 3
    parsed = lines[1].split(",")
    assert int(parsed[0]) == 0
    assert float(parsed[1]) == -1.5
