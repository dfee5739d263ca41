"""Stochastic variational inference over words: minibatch the vocabulary,
differentiate the summed per-word ELBOs, apply Adam.

Reproducibility scheme: all randomness is addressed, never consumed from a
shared stream.  Initial weights come from (seed, "init"), the epoch-e
shuffle from (seed, "shuffle", e), and each word's Monte Carlo uniforms
from (seed, "noise", word).  Word noise is frozen for the whole run, which
makes the objective a fixed deterministic function of the parameters:
gradients of disjoint minibatches then add up exactly to the full-batch
gradient, and resuming from a checkpoint needs no RNG state beyond the seed
and the epoch number.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericError, UsageError
from .lexica import CombinedVocabulary, LexiconView, ScaleFamily
from .model import (
    MlpHead,
    ModelBinding,
    ModelState,
    WordObservation,
    elbo_noise,
    elbo_word_on,
    emission_for_scale,
    encoder_input_dim,
    pack_state,
    save_checkpoint,
    unpack_state,
)
from .rng import RngStream, stream_for
from .tape import Tape, vsum

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 50
    n_mc: int = 1
    seed: int = 0
    weight_init_scale: float = 0.1
    hidden_dim: int = 32

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps", "weight_init_scale"):
            if not getattr(self, name) >= 0.0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("batch_size", "epochs", "n_mc", "hidden_dim"):
            if not getattr(self, name) >= 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {getattr(self, name)}")


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a `key = value` config file; keys are TrainConfig field names."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            kwargs[key] = int(value) if types[key] == "int" else float(value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from e
    return TrainConfig(**kwargs)


def config_hash(config: TrainConfig) -> str:
    """Short stable digest of the full configuration."""
    blob = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, config: TrainConfig
) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise UsageError(
            f"adam_step shape mismatch: params {params.shape}, grads {grads.shape}, moments {state.m.shape}"
        )
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    return params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _init_head(in_dim: int, out_dim: int, config: TrainConfig, gen: np.random.Generator) -> MlpHead:
    h = config.hidden_dim
    s1 = config.weight_init_scale / np.sqrt(in_dim)
    s2 = config.weight_init_scale / np.sqrt(h)
    return MlpHead(
        input_dim=in_dim,
        output_dim=out_dim,
        hidden_dim=h,
        w1=gen.uniform(-s1, s1, size=(h, in_dim)),
        b1=np.zeros(h),
        w2=gen.uniform(-s2, s2, size=(out_dim, h)),
        b2=np.zeros(out_dim),
    )


def init_model(
    views: list[LexiconView] | dict[str, ScaleFamily], config: TrainConfig, rng: RngStream
) -> ModelState:
    """Fresh heads per view: weights ~ U(-s, s) with s = init_scale/sqrt(fan_in),
    biases zero.  Views may be given as parsed lexica or as id -> scale."""
    if isinstance(views, dict):
        scales = dict(views)
    else:
        scales = {v.id: v.family for v in views}
    if not scales:
        raise ConfigError("init_model needs at least one view")
    gen = rng.numpy()
    encoders = {}
    decoders = {}
    for vid in sorted(scales):
        scale = scales[vid]
        encoders[vid] = _init_head(encoder_input_dim(scale), 3, config, gen)
        decoders[vid] = _init_head(3, emission_for_scale(scale).rho_dim, config, gen)
    return ModelState(scales=scales, encoders=encoders, decoders=decoders)


def frozen_noise(config: TrainConfig, words: list[str]) -> dict[str, list[list[float]]]:
    """Per-word Monte Carlo uniforms, a pure function of (seed, word)."""
    return {
        w: elbo_noise(stream_for(config.seed, "noise", w), config.n_mc) for w in words
    }


def batch_gradient(
    state: ModelState,
    batch: list[WordObservation],
    noise: dict[str, list[list[float]]],
    scale: float,
) -> tuple[np.ndarray, dict[str, float]]:
    """Gradient of loss = -scale * sum over the batch of elbo_word.

    Returns (flat gradient in pack_state order, per-term sums).  Raises
    NumericError naming the offending word when any term is non-finite.
    """
    tape = Tape()
    binding = ModelBinding(tape, state)
    cache: dict = {}
    totals = []
    recon_sum = 0.0
    kl_sum = 0.0
    for obs in batch:
        try:
            we = elbo_word_on(binding, obs, noise[obs.word], encode_cache=cache)
        except (DomainError, NumericError) as e:
            raise NumericError(
                f"ELBO evaluation failed for word {obs.word!r} "
                f"(views {sorted(obs.labels)}): {e}"
            ) from e
        if not np.isfinite(we.total.value):
            raise NumericError(
                f"non-finite ELBO for word {obs.word!r} (views {sorted(obs.labels)}): "
                f"recon={we.recon.value!r}, kl={we.kl.value!r}"
            )
        totals.append(we.total)
        recon_sum += we.recon.value
        kl_sum += we.kl.value
    loss = vsum(totals) * (-scale)
    adjoints = tape.backward(loss)
    grad = binding.gradient(adjoints)
    if not np.isfinite(grad).all():
        raise NumericError(f"non-finite gradient in batch starting at word {batch[0].word!r}")
    stats = {
        "elbo_sum": recon_sum - kl_sum,
        "recon_sum": recon_sum,
        "kl_sum": kl_sum,
    }
    return grad, stats


@dataclass(eq=False)
class TrainResult:
    state: ModelState
    adam: AdamState
    log: list[dict]
    epochs_run: int


def write_training_log(path: str | Path, rows: list[dict]) -> None:
    lines = ["epoch,mean_elbo,recon_term,kl_term,wall_time_s"]
    for r in rows:
        lines.append(
            f"{r['epoch']},{r['mean_elbo']:.12g},{r['recon_term']:.12g},"
            f"{r['kl_term']:.12g},{r['wall_time_s']:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    vocab: CombinedVocabulary,
    observations: list[WordObservation],
    config: TrainConfig,
    *,
    init_state: ModelState | None = None,
    init_adam: AdamState | None = None,
    start_epoch: int = 0,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run SVI for config.epochs epochs (resuming from start_epoch if given).

    Each epoch shuffles the words with a stream addressed by (seed, epoch),
    walks batches of batch_size, and applies one Adam update per batch on
    the loss -(|W|/|batch|) * sum of word ELBOs.  The per-epoch log reports
    the mean ELBO over the epoch's own evaluations.
    """
    if not observations:
        raise ConfigError("train needs at least one observation")
    obs = sorted(observations, key=lambda o: o.word)
    words = [o.word for o in obs]
    if len(set(words)) != len(words):
        raise ConfigError("duplicate words in observations")
    for word in words:
        if word not in vocab:
            raise ConfigError(f"observation word {word!r} missing from the vocabulary")

    scales: dict[str, ScaleFamily] = {}
    for o in obs:
        for vid, label in o.labels.items():
            scales[vid] = label.family

    state = init_state if init_state is not None else init_model(
        scales, config, stream_for(config.seed, "init")
    )
    params = pack_state(state)
    adam = init_adam if init_adam is not None else AdamState.zeros(params.size)
    noise = frozen_noise(config, words)

    n = len(obs)
    rows: list[dict] = []
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        perm = stream_for(config.seed, "shuffle", epoch).permutation(n)
        elbo_acc = recon_acc = kl_acc = 0.0
        for lo in range(0, n, config.batch_size):
            batch = [obs[i] for i in perm[lo : lo + config.batch_size]]
            grad, stats = batch_gradient(state, batch, noise, scale=n / len(batch))
            params = adam_step(params, grad, adam, config)
            unpack_state(state, params)
            elbo_acc += stats["elbo_sum"]
            recon_acc += stats["recon_sum"]
            kl_acc += stats["kl_sum"]
        if not np.isfinite(params).all():
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        row = {
            "epoch": epoch,
            "mean_elbo": elbo_acc / n,
            "recon_term": recon_acc / n,
            "kl_term": kl_acc / n,
            "wall_time_s": time.perf_counter() - t0,
        }
        rows.append(row)
        log.info(
            "epoch %d: mean elbo %.4f (recon %.4f, kl %.4f)",
            epoch, row["mean_elbo"], row["recon_term"], row["kl_term"],
        )

    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            state,
            config_hash=config_hash(config),
            extra=training_extra(adam, config.epochs, config.seed),
        )
    if log_path is not None:
        write_training_log(log_path, rows)
    return TrainResult(state=state, adam=adam, log=rows, epochs_run=config.epochs - start_epoch)


def training_extra(adam: AdamState, epoch: int, seed: int) -> dict:
    """Optimizer state as checkpoint metadata, enough to resume exactly."""
    return {
        "adam_m": adam.m.tolist(),
        "adam_v": adam.v.tolist(),
        "adam_step": adam.step,
        "epoch": epoch,
        "seed": seed,
    }


def adam_from_extra(extra: dict) -> tuple[AdamState, int]:
    """Rebuild (AdamState, next epoch) from checkpoint metadata."""
    try:
        adam = AdamState(
            m=np.array(extra["adam_m"], dtype=float),
            v=np.array(extra["adam_v"], dtype=float),
            step=int(extra["adam_step"]),
        )
        return adam, int(extra["epoch"])
    except KeyError as e:
        raise ConfigError(f"checkpoint lacks optimizer state ({e}); cannot resume") from e
