"""End-to-end acceptance suite.

One test per criterion, each printing a `[criterion N] name: PASS/FAIL`
line (run with -s to watch them stream).  The five trained synthetic
models are built once in a session fixture and shared by the recovery,
downstream-accuracy, coverage, and restriction criteria.
"""

import contextlib
import copy
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np
import pytest
import scipy.stats

from lexifuse.distributions import dirichlet_kl, reparam_grad_elbo, sample_dirichlet
from lexifuse.evaluation import (
    ConcatFeaturizer,
    FusedBetaFeaturizer,
    FusedMeanFeaturizer,
    LabeledCorpus,
    SingleLexiconFeaturizer,
    coverage,
    evaluate,
    read_corpus,
    restrict_vocabulary,
    split_corpus,
    synth_generate,
)
from lexifuse.lexica import (
    COMPONENTS,
    DirichletPrior,
    LexiconView,
    PolarityLabel,
    binary,
    build_vocabulary,
    compute_prior,
    pair_continuous,
    parse_lexicon,
    rater_histogram,
    signed_continuous,
)
from lexifuse.model import (
    ModelBinding,
    WordObservation,
    decode,
    decode_vars,
    emission_for_scale,
    emission_ll_var,
    emission_log_likelihood,
    encode,
    encode_vars,
    observations_from_views,
    pack_state,
    posterior_params,
    unpack_state,
)
from lexifuse.rng import RngStream, stream_for
from lexifuse.special import digamma
from lexifuse.tape import Tape, weighted_sum
from lexifuse.training import TrainConfig, init_model, train
from lexifuse.unified import UnifiedLexicon, export_lexicon

ALL_SCALES = {
    "bin": binary(),
    "sig": signed_continuous(),
    "pair": pair_continuous(),
    "rater": rater_histogram(10, 9),
}


@contextlib.contextmanager
def criterion(n, name, budget_s=None, extra_s=0.0):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"[criterion {n}] {name}: FAIL")
        raise
    elapsed = time.perf_counter() - t0 + extra_s
    print(f"[criterion {n}] {name}: PASS ({elapsed:.1f}s)")
    if budget_s is not None:
        assert elapsed < budget_s, f"criterion {n} took {elapsed:.1f}s, budget {budget_s}s"


def random_label(scale, gen):
    tag = scale.tag
    if tag == "Binary":
        return PolarityLabel(scale, int(gen.integers(0, 2)))
    if tag == "SignedContinuous":
        return PolarityLabel(scale, float(gen.uniform(-1, 1)))
    if tag == "PairContinuous":
        return PolarityLabel(scale, (float(gen.uniform(0, 1)), float(gen.uniform(0, 1))))
    return PolarityLabel(
        scale, tuple(int(r) for r in gen.integers(0, scale.n_points, size=scale.n_raters))
    )


# ---------------------------------------------------------------------------
# Shared synthetic pipeline runs (criteria 4-7)

N_SEEDS = 5


@dataclass(eq=False)
class SynthRun:
    seed: int
    data: object
    obs: list
    state: object
    lexicon: UnifiedLexicon


@pytest.fixture(scope="session")
def synth_runs():
    t0 = time.perf_counter()
    runs = []
    for seed in range(N_SEEDS):
        data = synth_generate(500, 1, 0.1, 2500, 20, RngStream(seed))
        vocab = build_vocabulary(data.views)
        priors = {w: compute_prior(w, data.views, vocab) for w in vocab.sorted_words()}
        obs = observations_from_views(data.views, vocab, priors)
        result = train(vocab, obs, TrainConfig(seed=seed))
        lexicon = UnifiedLexicon(export_lexicon(result.state, obs))
        runs.append(SynthRun(seed=seed, data=data, obs=obs, state=result.state, lexicon=lexicon))
    elapsed = time.perf_counter() - t0
    return runs, elapsed


class TestCriterion1:
    def test_pseudocount_identity(self):
        with criterion(1, "pseudocount identity", budget_s=1.0):
            state = init_model(ALL_SCALES, TrainConfig(hidden_dim=4), stream_for(0, "init"))
            gen = np.random.default_rng(0)
            vids = sorted(ALL_SCALES)
            for _ in range(1000):
                k = int(gen.integers(1, len(vids) + 1))
                subset = list(gen.choice(vids, size=k, replace=False))
                labels = {vid: random_label(ALL_SCALES[vid], gen) for vid in subset}
                obs = WordObservation("w", labels, DirichletPrior((1.0, 1.0, 1.0)))
                post = posterior_params(obs, state.encoders)
                n_views = len(labels)
                assert abs(sum(b - 1.0 for b in post.beta) - n_views) < 1e-9
                assert abs(sum(post.beta) - (3.0 + n_views)) < 1e-9


class TestCriterion2:
    def test_dirichlet_kl_against_monte_carlo(self):
        with criterion(2, "Dirichlet KL vs Monte Carlo", budget_s=30.0):
            gen = np.random.default_rng(7)
            n = 1_000_000
            for _ in range(20):
                beta = gen.uniform(0.8, 5.0, size=3)
                alpha = gen.uniform(0.8, 5.0, size=3)
                z = gen.dirichlet(beta, size=n)
                z = np.clip(z, 1e-12, None)
                z /= z.sum(axis=1, keepdims=True)
                diff = scipy.stats.dirichlet.logpdf(z.T, beta) - scipy.stats.dirichlet.logpdf(
                    z.T, alpha
                )
                mc = diff.mean()
                se = diff.std() / math.sqrt(n)
                closed = dirichlet_kl(tuple(beta), tuple(alpha))
                assert abs(closed - mc) < 3 * se, (beta, alpha, closed, mc, se)

            for _ in range(1000):
                beta = tuple(gen.uniform(0.5, 8.0, size=3))
                alpha = tuple(gen.uniform(0.5, 8.0, size=3))
                assert dirichlet_kl(beta, alpha) > 0.0
                assert abs(dirichlet_kl(beta, beta)) < 1e-12


class TestCriterion3:
    def test_gradient_integrity(self):
        with criterion(3, "gradient integrity", budget_s=120.0):
            self._heads_and_emissions_match_fd()
            self._reparam_matches_analytic_and_score()

    def _heads_and_emissions_match_fd(self):
        h = 1e-6
        for vid, scale in ALL_SCALES.items():
            state = init_model({vid: scale}, TrainConfig(hidden_dim=4, seed=3), stream_for(3, "init"))
            enc = state.encoders[vid]
            n_enc = enc.w1.size + enc.b1.size + enc.w2.size + enc.b2.size
            label = random_label(scale, np.random.default_rng(1))
            fam = emission_for_scale(scale)
            z0 = (0.5, 0.3, 0.2)

            # encoder network through the softmax, weighted readout objective
            tape = Tape()
            binding = ModelBinding(tape, state)
            omegas = encode_vars(label, binding.heads[("enc", vid)])
            root = weighted_sum(list(omegas), [1.0, 2.0, 3.0])
            grad = binding.gradient(tape.backward(root))[:n_enc]

            base = pack_state(state)

            def enc_value(vec):
                s2 = copy.deepcopy(state)
                unpack_state(s2, vec)
                om = encode(label, s2.encoders[vid])
                return om[0] + 2.0 * om[1] + 3.0 * om[2]

            fd = np.array([
                (enc_value(_shift(base, i, h)) - enc_value(_shift(base, i, -h))) / (2 * h)
                for i in range(n_enc)
            ])
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)

            # decoder network composed with the emission log-likelihood
            tape = Tape()
            binding = ModelBinding(tape, state)
            zs = [tape.leaf(v) for v in z0]
            rho = decode_vars(zs, binding.heads[("dec", vid)], fam)
            root = emission_ll_var(label, rho, fam)
            adjoints = tape.backward(root)
            grad_dec = binding.gradient(adjoints)[n_enc:]
            grad_z = np.array([adjoints[z.idx] for z in zs])

            def dec_value(vec, z=z0):
                s2 = copy.deepcopy(state)
                unpack_state(s2, vec)
                r = decode(z, s2.decoders[vid], fam)
                return emission_log_likelihood(label, r, fam)

            fd_dec = np.array([
                (dec_value(_shift(base, n_enc + i, h)) - dec_value(_shift(base, n_enc + i, -h)))
                / (2 * h)
                for i in range(base.size - n_enc)
            ])
            np.testing.assert_allclose(grad_dec, fd_dec, rtol=1e-4, atol=1e-8)

            fd_z = np.array([
                (
                    dec_value(base, _shift(np.array(z0), i, h))
                    - dec_value(base, _shift(np.array(z0), i, -h))
                )
                / (2 * h)
                for i in range(3)
            ])
            np.testing.assert_allclose(grad_z, fd_z, rtol=1e-4, atol=1e-8)

    def _reparam_matches_analytic_and_score(self):
        # E[z_1] = beta_1 / sum(beta): compare pathwise estimate to the exact
        # gradient
        beta = (2.0, 1.5, 1.2)
        total = sum(beta)
        analytic = np.array(
            [
                (total - beta[0]) / total**2,
                -beta[0] / total**2,
                -beta[0] / total**2,
            ]
        )
        rng = RngStream(11)
        n = 20_000
        samples = np.array(
            [reparam_grad_elbo(lambda zs: zs[0], beta, 1, rng) for _ in range(n)]
        )
        mean = samples.mean(axis=0)
        se = samples.std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(mean - analytic) < 3 * se + 1e-12), (mean, analytic, se)

        # sum(z^2) objective at beta = (3, 2, 4): pathwise vs score function
        beta = (3.0, 2.0, 4.0)
        n_path, n_score = 20_000, 200_000
        rng = RngStream(12)
        path = np.array(
            [
                reparam_grad_elbo(
                    lambda zs: zs[0] * zs[0] + zs[1] * zs[1] + zs[2] * zs[2], beta, 1, rng
                )
                for _ in range(n_path)
            ]
        )
        sgen = RngStream(13)
        psi_total = digamma(sum(beta))
        score = np.empty((n_score, 3))
        for i in range(n_score):
            z = sample_dirichlet(beta, sgen)
            f = z[0] ** 2 + z[1] ** 2 + z[2] ** 2
            for k in range(3):
                score[i, k] = f * (psi_total - digamma(beta[k]) + math.log(z[k]))
        mp, sp = path.mean(axis=0), path.std(axis=0) / math.sqrt(n_path)
        ms, ss = score.mean(axis=0), score.std(axis=0) / math.sqrt(n_score)
        assert np.all(np.abs(mp - ms) < 3 * np.hypot(sp, ss)), (mp, ms, sp, ss)


def _shift(vec, i, h):
    out = vec.copy()
    out[i] += h
    return out


class TestCriterion4:
    def test_synthetic_recovery(self, synth_runs):
        runs, fixture_s = synth_runs
        with criterion(4, "synthetic ground-truth recovery", budget_s=300.0, extra_s=fixture_s):
            rates = []
            for run in runs:
                hits = n = 0
                for obs in run.obs:
                    if len(obs.labels) < 2:
                        continue
                    post = posterior_params(obs, run.state.encoders)
                    pred = max(range(3), key=lambda k: post.mean[k])
                    n += 1
                    hits += pred == run.data.word_classes[obs.word]
                rates.append(hits / n)
            mean_rate = sum(rates) / len(rates)
            print(f"  recovery per seed: {[f'{r:.3f}' for r in rates]}, mean {mean_rate:.3f}")
            assert mean_rate >= 0.90, rates


class TestCriterion5:
    def test_downstream_dominance(self, synth_runs):
        runs, _ = synth_runs
        with criterion(5, "fused representation beats single lexica", budget_s=180.0):
            sums: dict[str, float] = {}
            for run in runs:
                tr, te = split_corpus(run.data.corpus, 2000)
                modes = {
                    "fused-mean": FusedMeanFeaturizer(run.lexicon),
                    "fused-beta": FusedBetaFeaturizer(run.lexicon),
                }
                for view in run.data.views:
                    modes[f"single:{view.id}"] = SingleLexiconFeaturizer(view)
                for name, feat in modes.items():
                    sums[name] = sums.get(name, 0.0) + evaluate(tr, te, feat)
            avg = {name: s / len(runs) for name, s in sums.items()}
            best_single = max(v for k, v in avg.items() if k.startswith("single:"))
            print("  seed-averaged accuracy: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(avg.items())))
            assert avg["fused-beta"] >= best_single - 0.02, avg


class TestCriterion6:
    def test_coverage_dominance(self, synth_runs):
        runs, _ = synth_runs
        with criterion(6, "fused coverage dominates every view", budget_s=1.0):
            for run in runs:
                union = set()
                for view in run.data.views:
                    union |= set(view.entries)
                assert {e.word for e in run.lexicon.entries()} == union
                fused_cov = coverage(union, run.data.corpus)
                for view in run.data.views:
                    assert fused_cov >= coverage(set(view.entries), run.data.corpus)


class TestCriterion7:
    def test_restricted_vocabulary_protocol(self, synth_runs):
        runs, _ = synth_runs
        with criterion(7, "restricted-vocabulary evaluation", budget_s=60.0):
            run = runs[0]
            view = run.data.views[0]
            restricted = restrict_vocabulary(run.lexicon, view)
            fused_words = {e.word for e in run.lexicon.entries()}
            assert len(restricted) == len(set(view.entries) & fused_words)
            tr, te = split_corpus(run.data.corpus, 2000)
            acc = evaluate(tr, te, FusedBetaFeaturizer(restricted))
            assert 0.0 <= acc <= 1.0


class TestCriterion8:
    def test_concat_dimension(self):
        with criterion(8, "concatenation feature dimension", budget_s=1.0):
            views = [
                LexiconView("gi", binary(), {"good": PolarityLabel(binary(), 1)}),
                LexiconView("huliu", binary(), {"bad": PolarityLabel(binary(), 0)}),
                LexiconView("mpqa", binary(), {"good": PolarityLabel(binary(), 1)}),
                LexiconView(
                    "sentic",
                    signed_continuous(),
                    {"good": PolarityLabel(signed_continuous(), 0.7)},
                ),
                LexiconView(
                    "swn",
                    pair_continuous(),
                    {"good": PolarityLabel(pair_continuous(), (0.75, 0.125))},
                ),
                LexiconView(
                    "vader",
                    rater_histogram(10, 9),
                    {"good": PolarityLabel(rater_histogram(10, 9), (5,) * 10)},
                ),
            ]
            assert ConcatFeaturizer(views).dim == 16


class TestCriterion9:
    def test_pipeline_determinism(self, tmp_path):
        with criterion(9, "byte-identical pipeline reruns", budget_s=600.0):
            outputs = []
            for tag, hashseed in (("a", "0"), ("b", "424242")):
                root = tmp_path / tag
                env = dict(os.environ)
                env["PYTHONHASHSEED"] = hashseed
                cfg = tmp_path / "train.cfg"
                cfg.write_text("epochs = 8\nhidden_dim = 8\n")

                def cli(*args):
                    r = subprocess.run(
                        [sys.executable, "-m", "lexifuse.cli", *args],
                        capture_output=True,
                        text=True,
                        env=env,
                    )
                    assert r.returncode == 0, r.stderr
                    return r

                cli(
                    "synth", "--out", str(root / "data"), "--seed", "7",
                    "--n-words", "80", "--n-texts", "300", "--text-len", "10",
                    "--train-fraction", "0.8",
                )
                views = sorted(str(p) for p in (root / "data").glob("view_*.tsv"))
                cli(
                    "train", "--views", *views, "--config", str(cfg),
                    "--seed", "7", "--out", str(root / "run"),
                )
                cli(
                    "export", "--checkpoint", str(root / "run" / "checkpoint.json"),
                    "--views", *views, "--out", str(root / "run" / "unified.tsv"),
                )
                cli(
                    "eval", "--mode", "fused-beta",
                    "--unified", str(root / "run" / "unified.tsv"),
                    "--corpus", str(root / "data" / "corpus_train.tsv"),
                    str(root / "data" / "corpus_test.tsv"),
                    "--out", str(root / "run" / "report.csv"),
                    "--dataset", "synth", "--seed", "7",
                )
                outputs.append(
                    (
                        (root / "run" / "unified.tsv").read_bytes(),
                        (root / "run" / "report.csv").read_bytes(),
                        (root / "run" / "checkpoint.json").read_bytes(),
                    )
                )
            assert outputs[0][0] == outputs[1][0], "unified lexicon files differ"
            assert outputs[0][1] == outputs[1][1], "evaluation reports differ"
            assert outputs[0][2] == outputs[1][2], "checkpoints differ"


class TestCriterion10:
    def test_real_data_reproduction_note(self, tmp_path):
        root = os.environ.get("LEXIFUSE_REAL_DATA")
        if not root:
            print("[criterion 10] real-data reproduction: SKIP (LEXIFUSE_REAL_DATA not set)")
            pytest.skip("real lexica not supplied; set LEXIFUSE_REAL_DATA to run")
        with criterion(10, "real-data reproduction note"):
            base = os.path.join(root, "")
            names = ["gi", "huliu", "mpqa", "sentic", "swn", "vader"]
            views = [parse_lexicon(os.path.join(base, f"{n}.tsv")) for n in names]
            vocab = build_vocabulary(views)
            priors = {w: compute_prior(w, views, vocab) for w in vocab.sorted_words()}
            obs = observations_from_views(views, vocab, priors)
            result = train(vocab, obs, TrainConfig(seed=0))
            lexicon = UnifiedLexicon(export_lexicon(result.state, obs))
            tr = read_corpus(os.path.join(base, "corpus_train.tsv"))
            te = read_corpus(os.path.join(base, "corpus_test.tsv"))
            acc = evaluate(tr, te, FusedBetaFeaturizer(lexicon))
            assert 0.0 <= acc <= 1.0
            window = "within" if abs(acc - 0.734) <= 0.05 else "OUTSIDE"
            print(
                f"  reproduction note: fused-beta accuracy {acc:.3f}, "
                f"{window} the expected 0.734 +/- 0.05 window (non-gating)"
            )
