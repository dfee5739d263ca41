import dataclasses
import math

import numpy as np
import pytest

from lexifuse.errors import ConfigError, NumericError, UsageError
from lexifuse.lexica import (
    LexiconView,
    PolarityLabel,
    binary,
    build_vocabulary,
    compute_prior,
    pair_continuous,
    rater_histogram,
    signed_continuous,
)
from lexifuse.model import (
    load_checkpoint,
    observations_from_views,
    pack_state,
)
from lexifuse.rng import RngStream, stream_for
from lexifuse.training import (
    AdamState,
    TrainConfig,
    adam_from_extra,
    adam_step,
    batch_gradient,
    config_hash,
    frozen_noise,
    init_model,
    load_train_config,
    train,
)

ALL_SCALES = {
    "bin": binary(),
    "sig": signed_continuous(),
    "pair": pair_continuous(),
    "rater": rater_histogram(10, 9),
}


def make_corpus(n_words=10, seed=0, vids=("bin", "sig")):
    rng = RngStream(seed)
    words = [f"w{i:03d}" for i in range(n_words)]
    views = []
    for vid in vids:
        scale = ALL_SCALES[vid]
        entries = {}
        for w in words:
            if vid == "bin":
                entries[w] = PolarityLabel(scale, int(rng.integers(0, 2)))
            elif vid == "sig":
                entries[w] = PolarityLabel(scale, rng.uniform(-1.0, 1.0))
            elif vid == "pair":
                entries[w] = PolarityLabel(scale, (rng.uniform(0, 1), rng.uniform(0, 1)))
            else:
                entries[w] = PolarityLabel(
                    scale, tuple(int(rng.integers(0, 9)) for _ in range(10))
                )
        views.append(LexiconView(vid, scale, entries))
    vocab = build_vocabulary(views)
    priors = {w: compute_prior(w, views, vocab) for w in vocab.sorted_words()}
    return vocab, observations_from_views(views, vocab, priors)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-2
        assert cfg.batch_size == 256
        assert cfg.hidden_dim == 32

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"learning_rate": -1e-3},
            {"batch_size": 0},
            {"epochs": 0},
            {"n_mc": 0},
            {"hidden_dim": 0},
            {"adam_beta1": 1.0},
            {"adam_beta2": 0.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_load_file(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text(
            "# training setup\n"
            "learning_rate = 0.05   # step size\n"
            "epochs = 7\n"
            "\n"
            "seed=3\n"
        )
        cfg = load_train_config(p)
        assert cfg.learning_rate == 0.05
        assert cfg.epochs == 7
        assert cfg.seed == 3
        assert cfg.batch_size == 256

    def test_load_rejects_unknown_key(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("momentum = 0.9\n")
        with pytest.raises(ConfigError, match="momentum"):
            load_train_config(p)

    def test_load_rejects_bad_value(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("epochs = soon\n")
        with pytest.raises(ConfigError, match="epochs"):
            load_train_config(p)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_train_config(tmp_path / "absent.cfg")

    def test_hash_stable_and_sensitive(self):
        a = config_hash(TrainConfig())
        assert a == config_hash(TrainConfig())
        assert a != config_hash(TrainConfig(seed=1))
        assert len(a) == 12


class TestAdam:
    def test_first_step_hand_value(self):
        cfg = TrainConfig(learning_rate=0.1)
        params = np.array([1.0, -2.0, 0.5])
        grads = np.array([0.3, -0.7, 0.0])
        st = AdamState.zeros(3)
        new = adam_step(params, grads, st, cfg)
        # after bias correction the first step is lr * g / (|g| + eps)
        want = params - cfg.learning_rate * grads / (np.abs(grads) + cfg.adam_eps)
        np.testing.assert_allclose(new, want, rtol=1e-12)
        assert st.step == 1

    def test_zero_gradient_leaves_params(self):
        cfg = TrainConfig()
        params = np.array([1.0, 2.0])
        new = adam_step(params, np.zeros(2), AdamState.zeros(2), cfg)
        np.testing.assert_array_equal(new, params)

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            adam_step(np.zeros(3), np.zeros(2), AdamState.zeros(3), TrainConfig())

    def test_moments_accumulate(self):
        cfg = TrainConfig()
        st = AdamState.zeros(1)
        p = np.array([0.0])
        g = np.array([1.0])
        p = adam_step(p, g, st, cfg)
        np.testing.assert_allclose(st.m, [0.1])
        np.testing.assert_allclose(st.v, [0.001])
        p = adam_step(p, g, st, cfg)
        np.testing.assert_allclose(st.m, [0.19])
        assert st.step == 2


class TestInitModel:
    def test_head_dims_for_standard_views(self):
        scales = {
            "gi": binary(),
            "huliu": binary(),
            "mpqa": binary(),
            "sentic": signed_continuous(),
            "swn": pair_continuous(),
            "vader": rater_histogram(10, 9),
        }
        state = init_model(scales, TrainConfig(), stream_for(0, "init"))
        enc_in = {vid: h.input_dim for vid, h in state.encoders.items()}
        dec_out = {vid: h.output_dim for vid, h in state.decoders.items()}
        assert enc_in == {"gi": 1, "huliu": 1, "mpqa": 1, "sentic": 1, "swn": 2, "vader": 10}
        assert dec_out == {"gi": 1, "huliu": 1, "mpqa": 1, "sentic": 2, "swn": 2, "vader": 9}
        assert all(h.output_dim == 3 for h in state.encoders.values())
        assert all(h.input_dim == 3 for h in state.decoders.values())
        assert all(h.hidden_dim == 32 for h in state.encoders.values())

    def test_same_seed_identical(self):
        scales = {"a": binary(), "b": signed_continuous()}
        s1 = init_model(scales, TrainConfig(), stream_for(7, "init"))
        s2 = init_model(scales, TrainConfig(), stream_for(7, "init"))
        np.testing.assert_array_equal(pack_state(s1), pack_state(s2))
        s3 = init_model(scales, TrainConfig(), stream_for(8, "init"))
        assert not np.array_equal(pack_state(s1), pack_state(s3))

    def test_init_bounds(self):
        cfg = TrainConfig(weight_init_scale=0.1, hidden_dim=16)
        state = init_model({"sig": signed_continuous()}, cfg, stream_for(0, "init"))
        head = state.encoders["sig"]
        assert np.abs(head.w1).max() <= 0.1 / math.sqrt(1)
        assert np.abs(head.w2).max() <= 0.1 / math.sqrt(16)
        assert np.all(head.b1 == 0.0) and np.all(head.b2 == 0.0)

    def test_empty_views(self):
        with pytest.raises(ConfigError):
            init_model({}, TrainConfig(), stream_for(0, "init"))


class TestFrozenNoise:
    def test_deterministic_and_per_word(self):
        cfg = TrainConfig(n_mc=2, seed=5)
        n1 = frozen_noise(cfg, ["alpha", "beta"])
        n2 = frozen_noise(cfg, ["beta", "alpha"])
        assert n1 == n2
        assert n1["alpha"] != n1["beta"]
        assert len(n1["alpha"]) == 2 and len(n1["alpha"][0]) == 3


class TestBatchGradient:
    def test_disjoint_batch_partition(self):
        # gradient of the full objective equals the batch-size-weighted mean
        # of per-batch scaled gradients
        vocab, obs = make_corpus(9, seed=1)
        cfg = TrainConfig(hidden_dim=4)
        state = init_model(
            {"bin": binary(), "sig": signed_continuous()}, cfg, stream_for(0, "init")
        )
        noise = frozen_noise(cfg, [o.word for o in obs])
        n = len(obs)
        full, _ = batch_gradient(state, obs, noise, scale=1.0)
        combined = np.zeros_like(full)
        for lo in range(0, n, 4):
            batch = obs[lo : lo + 4]
            g, _ = batch_gradient(state, batch, noise, scale=n / len(batch))
            combined += (len(batch) / n) * g
        np.testing.assert_allclose(combined, full, rtol=1e-9, atol=1e-12)

    def test_nan_param_names_word(self):
        vocab, obs = make_corpus(3, seed=2)
        cfg = TrainConfig(hidden_dim=4)
        state = init_model(
            {"bin": binary(), "sig": signed_continuous()}, cfg, stream_for(0, "init")
        )
        state.encoders["bin"].w1[0, 0] = float("nan")
        noise = frozen_noise(cfg, [o.word for o in obs])
        with pytest.raises(NumericError, match="w000"):
            batch_gradient(state, obs, noise, scale=1.0)


class TestTrain:
    def test_zero_lr_keeps_params_and_objective(self):
        vocab, obs = make_corpus(6, seed=3)
        cfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=4, hidden_dim=4)
        init = init_model(
            {"bin": binary(), "sig": signed_continuous()}, cfg, stream_for(cfg.seed, "init")
        )
        before = pack_state(init)
        result = train(vocab, obs, cfg)
        np.testing.assert_array_equal(pack_state(result.state), before)
        elbos = [r["mean_elbo"] for r in result.log]
        for e in elbos[1:]:
            assert e == pytest.approx(elbos[0], rel=1e-12)

    def test_objective_improves(self):
        vocab, obs = make_corpus(12, seed=4, vids=("bin", "sig", "pair"))
        cfg = TrainConfig(learning_rate=0.02, epochs=10, batch_size=64, hidden_dim=4)
        result = train(vocab, obs, cfg)
        assert result.log[-1]["mean_elbo"] > result.log[0]["mean_elbo"]
        assert result.epochs_run == 10

    def test_same_seed_bitwise_reproducible(self):
        vocab, obs = make_corpus(8, seed=5)
        cfg = TrainConfig(epochs=3, batch_size=3, hidden_dim=4, seed=11)
        r1 = train(vocab, obs, cfg)
        r2 = train(vocab, obs, cfg)
        np.testing.assert_array_equal(pack_state(r1.state), pack_state(r2.state))
        assert [row["mean_elbo"] for row in r1.log] == [row["mean_elbo"] for row in r2.log]

    def test_resume_matches_uninterrupted(self, tmp_path):
        vocab, obs = make_corpus(8, seed=6)
        cfg4 = TrainConfig(epochs=4, batch_size=3, hidden_dim=4, seed=2)
        straight = train(vocab, obs, cfg4)

        cfg2 = dataclasses.replace(cfg4, epochs=2)
        ckpt = tmp_path / "mid.json"
        train(vocab, obs, cfg2, checkpoint_path=ckpt)
        state, meta = load_checkpoint(ckpt)
        adam, next_epoch = adam_from_extra(meta["extra"])
        assert next_epoch == 2
        resumed = train(
            vocab, obs, cfg4, init_state=state, init_adam=adam, start_epoch=next_epoch
        )
        np.testing.assert_array_equal(pack_state(resumed.state), pack_state(straight.state))
        assert resumed.epochs_run == 2

    def test_checkpoint_and_log_written(self, tmp_path):
        vocab, obs = make_corpus(4, seed=7)
        cfg = TrainConfig(epochs=2, batch_size=4, hidden_dim=4)
        ckpt = tmp_path / "model.json"
        logp = tmp_path / "train.csv"
        train(vocab, obs, cfg, checkpoint_path=ckpt, log_path=logp)
        state, meta = load_checkpoint(ckpt)
        assert meta["config_hash"] == config_hash(cfg)
        lines = logp.read_text().splitlines()
        assert lines[0] == "epoch,mean_elbo,recon_term,kl_term,wall_time_s"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "0"
        assert math.isfinite(float(first[1]))

    def test_duplicate_words_rejected(self):
        vocab, obs = make_corpus(3, seed=8)
        with pytest.raises(ConfigError):
            train(vocab, obs + [obs[0]], TrainConfig(epochs=1, hidden_dim=4))

    def test_empty_observations_rejected(self):
        vocab, obs = make_corpus(2, seed=9)
        with pytest.raises(ConfigError):
            train(vocab, [], TrainConfig(epochs=1, hidden_dim=4))

    def test_resume_state_roundtrip_helpers(self):
        adam = AdamState(m=np.array([1.0, 2.0]), v=np.array([3.0, 4.0]), step=7)
        from lexifuse.training import training_extra

        extra = training_extra(adam, epoch=5, seed=3)
        back, next_epoch = adam_from_extra(extra)
        np.testing.assert_array_equal(back.m, adam.m)
        np.testing.assert_array_equal(back.v, adam.v)
        assert back.step == 7 and next_epoch == 5
        with pytest.raises(ConfigError):
            adam_from_extra({"adam_m": [0.0]})
