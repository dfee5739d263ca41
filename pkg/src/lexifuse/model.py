"""Model core: per-lexicon encoder/decoder heads, emission families,
posterior construction, and the per-word ELBO.

Every lexicon view d gets two small MLPs.  The encoder g maps the word's
label in that view to a point omega_d on the polarity simplex; the word's
variational Dirichlet parameter is beta = 1 + sum_d omega_d, so each view
contributes exactly one pseudocount split across the three classes.  The
decoder f maps a latent polarity draw z back to the parameters rho of that
view's emission distribution over labels.

Float and tape routes coexist: encode/decode/emission_log_likelihood are
plain-float (used for export and evaluation, and as oracles), while
ModelBinding + elbo_word build the differentiable training objective.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape as tp
from .distributions import dirichlet_kl_var, dirichlet_sample_vars
from .errors import ConfigError, UsageError
from .lexica import (
    BINARY,
    COMPONENTS,
    PAIR_CONTINUOUS,
    RATER_HISTOGRAM,
    SIGNED_CONTINUOUS,
    DirichletPrior,
    PolarityLabel,
    ScaleFamily,
)
from .rng import RngStream
from .tape import Tape, Var

PAIR_GAUSSIAN_FIXED_VAR = "PairGaussianFixedVar"
TEN_CATEGORICAL = "TenCategorical"
BERNOULLI = "Bernoulli"
GAUSSIAN_MEAN_VAR = "GaussianMeanVar"

# Fixed per-component variance of the pair-continuous emission.
PAIR_VARIANCE = 0.01
# Additive floor keeping the learned variance away from zero.
VARIANCE_FLOOR = 0.01

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmissionFamily:
    """Distribution family of one view's labels plus its parameter arity."""

    tag: str
    rho_dim: int

    def __post_init__(self):
        expected = {
            PAIR_GAUSSIAN_FIXED_VAR: 2,
            BERNOULLI: 1,
            GAUSSIAN_MEAN_VAR: 2,
        }
        if self.tag in expected:
            if self.rho_dim != expected[self.tag]:
                raise ConfigError(f"{self.tag} has rho_dim {expected[self.tag]}, got {self.rho_dim}")
        elif self.tag == TEN_CATEGORICAL:
            if self.rho_dim < 2:
                raise ConfigError(f"{self.tag} needs at least 2 logits, got {self.rho_dim}")
        else:
            raise ConfigError(f"unknown emission family {self.tag!r}")


def emission_for_scale(scale: ScaleFamily) -> EmissionFamily:
    """The emission family matching a label scale."""
    if scale.tag == BINARY:
        return EmissionFamily(BERNOULLI, 1)
    if scale.tag == SIGNED_CONTINUOUS:
        return EmissionFamily(GAUSSIAN_MEAN_VAR, 2)
    if scale.tag == PAIR_CONTINUOUS:
        return EmissionFamily(PAIR_GAUSSIAN_FIXED_VAR, 2)
    return EmissionFamily(TEN_CATEGORICAL, scale.n_points)


def encoder_input(label: PolarityLabel) -> list[float]:
    """A label as the fixed-length float vector its encoder consumes.

    Rater histograms feed the raw ratings rescaled to [0, 1]; the other
    scales pass through unchanged.
    """
    tag = label.family.tag
    if tag == BINARY:
        return [float(label.value)]
    if tag == SIGNED_CONTINUOUS:
        return [label.value]
    if tag == PAIR_CONTINUOUS:
        return [label.value[0], label.value[1]]
    top = label.family.n_points - 1
    return [r / top for r in label.value]


def encoder_input_dim(scale: ScaleFamily) -> int:
    if scale.tag == BINARY or scale.tag == SIGNED_CONTINUOUS:
        return 1
    if scale.tag == PAIR_CONTINUOUS:
        return 2
    return scale.n_raters


@dataclass(eq=False)
class MlpHead:
    """Two affine layers with a tanh between them."""

    input_dim: int
    output_dim: int
    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (output, hidden)
    b2: np.ndarray  # (output,)
    hidden_dim: int = 32

    def __post_init__(self):
        if self.w1.shape != (self.hidden_dim, self.input_dim):
            raise ConfigError(f"w1 shape {self.w1.shape} != {(self.hidden_dim, self.input_dim)}")
        if self.b1.shape != (self.hidden_dim,):
            raise ConfigError(f"b1 shape {self.b1.shape} != {(self.hidden_dim,)}")
        if self.w2.shape != (self.output_dim, self.hidden_dim):
            raise ConfigError(f"w2 shape {self.w2.shape} != {(self.output_dim, self.hidden_dim)}")
        if self.b2.shape != (self.output_dim,):
            raise ConfigError(f"b2 shape {self.b2.shape} != {(self.output_dim,)}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ x + self.b1) + self.b2


@dataclass(frozen=True)
class LatentPosterior:
    """Variational Dirichlet over one word's polarity."""

    beta: tuple[float, float, float]
    mean: tuple[float, float, float]

    @classmethod
    def from_beta(cls, beta) -> "LatentPosterior":
        total = sum(beta)
        return cls(tuple(float(b) for b in beta), tuple(float(b) / total for b in beta))


@dataclass(frozen=True)
class WordObservation:
    """One word's labels across the views that contain it, plus its prior."""

    word: str
    labels: dict[str, PolarityLabel]
    prior: DirichletPrior

    def __post_init__(self):
        if not self.labels:
            raise ConfigError(f"word {self.word!r} has no observations")


@dataclass(eq=False)
class ModelState:
    """All heads, keyed by view id; scales declare each view's label space."""

    scales: dict[str, ScaleFamily]
    encoders: dict[str, MlpHead]
    decoders: dict[str, MlpHead]

    def __post_init__(self):
        if set(self.scales) != set(self.encoders) or set(self.scales) != set(self.decoders):
            raise ConfigError("scales/encoders/decoders must cover the same view ids")

    def view_ids(self) -> list[str]:
        return sorted(self.scales)


def _head_arrays(head: MlpHead) -> list[np.ndarray]:
    return [head.w1, head.b1, head.w2, head.b2]


def _state_arrays(state: ModelState) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for vid in state.view_ids():
        out.extend(_head_arrays(state.encoders[vid]))
        out.extend(_head_arrays(state.decoders[vid]))
    return out


def pack_state(state: ModelState) -> np.ndarray:
    """All parameters as one flat vector in canonical (sorted-view) order."""
    return np.concatenate([a.ravel() for a in _state_arrays(state)])


def unpack_state(state: ModelState, vec: np.ndarray) -> None:
    """Write a flat vector back into the state's arrays (canonical order)."""
    arrays = _state_arrays(state)
    total = sum(a.size for a in arrays)
    if vec.shape != (total,):
        raise UsageError(f"parameter vector has {vec.shape}, state needs ({total},)")
    pos = 0
    for a in arrays:
        a[...] = vec[pos : pos + a.size].reshape(a.shape)
        pos += a.size


def n_params(state: ModelState) -> int:
    return sum(a.size for a in _state_arrays(state))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def encode(label: PolarityLabel, head: MlpHead) -> tuple[float, float, float]:
    """omega_d = softmax(g(x_d)): this view's pseudocount split for the word."""
    x = encoder_input(label)
    if head.input_dim != len(x):
        raise ConfigError(f"encoder expects input_dim {len(x)} for {label.family.tag}, has {head.input_dim}")
    if head.output_dim != 3:
        raise ConfigError(f"encoder output_dim must be 3, got {head.output_dim}")
    omega = _softmax(head.forward(np.array(x)))
    return (float(omega[0]), float(omega[1]), float(omega[2]))


def posterior_params(obs: WordObservation, encoders: dict[str, MlpHead]) -> LatentPosterior:
    """beta = 1 + sum over observed views of omega_d."""
    beta = [1.0, 1.0, 1.0]
    for vid in sorted(obs.labels):
        if vid not in encoders:
            raise ConfigError(f"no encoder for view {vid!r}")
        omega = encode(obs.labels[vid], encoders[vid])
        for k in range(3):
            beta[k] += omega[k]
    return LatentPosterior.from_beta(beta)


def decode(z, head: MlpHead, family: EmissionFamily) -> tuple[float, ...]:
    """rho = f(z) mapped into the family's parameter space.

    Links: PairGaussianFixedVar -> sigmoid means; Bernoulli -> sigmoid
    probability; GaussianMeanVar -> (tanh mean, softplus variance + floor);
    TenCategorical -> raw logits (the softmax lives in the likelihood).
    """
    if len(z) != 3:
        raise ConfigError(f"latent point must have 3 components, got {len(z)}")
    if head.input_dim != 3:
        raise ConfigError(f"decoder input_dim must be 3, got {head.input_dim}")
    if head.output_dim != family.rho_dim:
        raise ConfigError(f"decoder output_dim {head.output_dim} != rho_dim {family.rho_dim}")
    raw = head.forward(np.asarray(z, dtype=float))
    if family.tag == PAIR_GAUSSIAN_FIXED_VAR:
        return (_sigmoid(raw[0]), _sigmoid(raw[1]))
    if family.tag == BERNOULLI:
        return (_sigmoid(raw[0]),)
    if family.tag == GAUSSIAN_MEAN_VAR:
        return (math.tanh(raw[0]), _softplus(raw[1]) + VARIANCE_FLOOR)
    return tuple(float(r) for r in raw)


def _sigmoid(v: float) -> float:
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _softplus(v: float) -> float:
    return max(v, 0.0) + math.log1p(math.exp(-abs(v)))


def _gauss_logpdf(x: float, mean: float, var: float) -> float:
    return -0.5 * (_LOG_2PI + math.log(var)) - (x - mean) ** 2 / (2.0 * var)


def emission_log_likelihood(label: PolarityLabel, rho, family: EmissionFamily) -> float:
    """log P_d(x_d | rho) with rho already in parameter space (see decode)."""
    _check_emission_match(label, family)
    if family.tag == PAIR_GAUSSIAN_FIXED_VAR:
        return _gauss_logpdf(label.value[0], rho[0], PAIR_VARIANCE) + _gauss_logpdf(
            label.value[1], rho[1], PAIR_VARIANCE
        )
    if family.tag == BERNOULLI:
        p = rho[0]
        return math.log(p) if label.value == 1 else math.log(1.0 - p)
    if family.tag == GAUSSIAN_MEAN_VAR:
        return _gauss_logpdf(label.value, rho[0], rho[1])
    logits = np.asarray(rho, dtype=float)
    logz = float(np.logaddexp.reduce(logits))
    return float(sum(logits[r] for r in label.value)) - len(label.value) * logz


def _check_emission_match(label: PolarityLabel, family: EmissionFamily) -> None:
    want = emission_for_scale(label.family).tag
    if family.tag != want:
        raise UsageError(f"label family {label.family.tag} needs emission {want}, got {family.tag}")


# ---------------------------------------------------------------------------
# Tape route: the differentiable twin of the pipeline above.


@dataclass(eq=False)
class HeadLeaves:
    """One head's parameters as tape leaves, shaped like the arrays."""

    w1: list[list[Var]]
    b1: list[Var]
    w2: list[list[Var]]
    b2: list[Var]


class ModelBinding:
    """All model parameters pushed onto one tape, in pack_state order.

    Leaves occupy a contiguous index range, so a backward pass turns into a
    flat gradient via one slice.  Build a fresh binding per optimization
    step (tapes are append-only and single-use).
    """

    def __init__(self, tape: Tape, state: ModelState):
        self.tape = tape
        self.state = state
        self.start = len(tape)
        self.heads: dict[tuple[str, str], HeadLeaves] = {}
        for vid in state.view_ids():
            self.heads[("enc", vid)] = self._push_head(state.encoders[vid])
            self.heads[("dec", vid)] = self._push_head(state.decoders[vid])
        self.count = len(tape) - self.start

    def _push_head(self, head: MlpHead) -> HeadLeaves:
        leaf = self.tape.leaf
        return HeadLeaves(
            w1=[[leaf(v) for v in row] for row in head.w1],
            b1=[leaf(v) for v in head.b1],
            w2=[[leaf(v) for v in row] for row in head.w2],
            b2=[leaf(v) for v in head.b2],
        )

    def gradient(self, adjoints: list[float]) -> np.ndarray:
        """The flat parameter gradient (pack_state order) from adjoints."""
        return np.array(adjoints[self.start : self.start + self.count])


def _mlp_forward_vars(leaves: HeadLeaves, xs) -> list[Var]:
    hidden = [tp.tanh(a) for a in tp.linear_layer(leaves.w1, xs, leaves.b1)]
    return tp.linear_layer(leaves.w2, hidden, leaves.b2)


def encode_vars(label: PolarityLabel, leaves: HeadLeaves) -> tuple[Var, Var, Var]:
    out = _mlp_forward_vars(leaves, encoder_input(label))
    if len(out) != 3:
        raise ConfigError(f"encoder output_dim must be 3, got {len(out)}")
    return tp.softmax3(out[0], out[1], out[2])


def decode_vars(zs, leaves: HeadLeaves, family: EmissionFamily) -> list[Var]:
    raw = _mlp_forward_vars(leaves, zs)
    if len(raw) != family.rho_dim:
        raise ConfigError(f"decoder output_dim {len(raw)} != rho_dim {family.rho_dim}")
    if family.tag == PAIR_GAUSSIAN_FIXED_VAR:
        return [tp.sigmoid(raw[0]), tp.sigmoid(raw[1])]
    if family.tag == BERNOULLI:
        return [tp.sigmoid(raw[0])]
    if family.tag == GAUSSIAN_MEAN_VAR:
        return [tp.tanh(raw[0]), tp.softplus(raw[1]) + VARIANCE_FLOOR]
    return raw


def emission_ll_var(label: PolarityLabel, rho: list[Var], family: EmissionFamily) -> Var:
    _check_emission_match(label, family)
    if family.tag == PAIR_GAUSSIAN_FIXED_VAR:
        c = -0.5 * (_LOG_2PI + math.log(PAIR_VARIANCE))
        inv2v = 0.5 / PAIR_VARIANCE
        d0 = rho[0] - label.value[0]
        d1 = rho[1] - label.value[1]
        return (d0 * d0 + d1 * d1) * (-inv2v) + 2.0 * c
    if family.tag == BERNOULLI:
        return tp.log(rho[0]) if label.value == 1 else tp.log(1.0 - rho[0])
    if family.tag == GAUSSIAN_MEAN_VAR:
        mean, var = rho[0], rho[1]
        d = mean - label.value
        return (tp.log(var) + _LOG_2PI) * -0.5 - d * d / (2.0 * var)
    counts = Counter(label.value)
    ratings = sorted(counts)
    picked = tp.weighted_sum([rho[r] for r in ratings], [float(counts[r]) for r in ratings])
    return picked - float(len(label.value)) * tp.logsumexp(rho)


@dataclass(eq=False)
class WordElbo:
    """One word's ELBO with its two terms exposed: total = recon - kl."""

    total: Var
    recon: Var
    kl: Var
    beta: tuple[Var, Var, Var]


def elbo_word_on(
    binding: ModelBinding,
    obs: WordObservation,
    noise: list[list[float]],
    encode_cache: dict | None = None,
) -> WordElbo:
    """The word's ELBO on an existing binding, with explicit sampling noise.

    noise holds one triple of uniforms per Monte Carlo sample; passing the
    same noise twice makes the objective a deterministic function of the
    parameters (common random numbers), which both the finite-difference
    gradient checks and the frozen-noise training scheme rely on.

    encode_cache (optional, keyed by (view id, label)) shares encoder
    subgraphs between words with identical labels on the same tape; binary
    and histogram views repeat labels constantly, and omega depends on
    nothing else.
    """
    state = binding.state
    vids = sorted(obs.labels)
    for vid in vids:
        if ("enc", vid) not in binding.heads:
            raise ConfigError(f"no encoder for view {vid!r}")

    omegas = []
    for vid in vids:
        label = obs.labels[vid]
        if encode_cache is None:
            omegas.append(encode_vars(label, binding.heads[("enc", vid)]))
            continue
        key = (vid, label)
        if key not in encode_cache:
            encode_cache[key] = encode_vars(label, binding.heads[("enc", vid)])
        omegas.append(encode_cache[key])
    beta = tuple(
        tp.weighted_sum([om[k] for om in omegas], [1.0] * len(omegas), const=1.0)
        for k in range(3)
    )

    kl = dirichlet_kl_var(beta, obs.prior.alpha)

    lls: list[Var] = []
    for us in noise:
        zs = dirichlet_sample_vars(beta, us)
        for vid in vids:
            family = emission_for_scale(state.scales[vid])
            rho = decode_vars(zs, binding.heads[("dec", vid)], family)
            lls.append(emission_ll_var(obs.labels[vid], rho, family))
    recon = tp.vsum(lls) / float(len(noise))

    return WordElbo(total=recon - kl, recon=recon, kl=kl, beta=beta)


def elbo_noise(rng: RngStream, n_mc: int) -> list[list[float]]:
    """n_mc triples of uniforms, nudged off {0, 1} for quantile stability."""
    return [
        [min(max(rng.uniform(), 1e-12), 1.0 - 1e-12) for _ in range(3)] for _ in range(n_mc)
    ]


def elbo_word(obs: WordObservation, state: ModelState, n_mc: int, rng: RngStream) -> WordElbo:
    """Single-word ELBO estimate on a fresh tape (see elbo_word_on)."""
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    tape = Tape()
    binding = ModelBinding(tape, state)
    return elbo_word_on(binding, obs, elbo_noise(rng, n_mc))


def observations_from_views(views, vocab, priors: dict[str, DirichletPrior]) -> list[WordObservation]:
    """One WordObservation per vocabulary word, in sorted word order."""
    by_id = {v.id: v for v in views}
    out = []
    for word in vocab.sorted_words():
        labels = {vid: by_id[vid].entries[word] for vid in vocab.membership[word]}
        out.append(WordObservation(word=word, labels=labels, prior=priors[word]))
    return out


# ---------------------------------------------------------------------------
# Checkpoint I/O

CHECKPOINT_VERSION = 1


def _head_to_json(head: MlpHead) -> dict:
    return {
        "input_dim": head.input_dim,
        "output_dim": head.output_dim,
        "hidden_dim": head.hidden_dim,
        "w1": head.w1.tolist(),
        "b1": head.b1.tolist(),
        "w2": head.w2.tolist(),
        "b2": head.b2.tolist(),
    }


def _head_from_json(d: dict) -> MlpHead:
    return MlpHead(
        input_dim=d["input_dim"],
        output_dim=d["output_dim"],
        hidden_dim=d["hidden_dim"],
        w1=np.array(d["w1"], dtype=float),
        b1=np.array(d["b1"], dtype=float),
        w2=np.array(d["w2"], dtype=float),
        b2=np.array(d["b2"], dtype=float),
    )


def _scale_to_json(scale: ScaleFamily) -> dict:
    d = {"tag": scale.tag}
    if scale.tag == RATER_HISTOGRAM:
        d["n_raters"] = scale.n_raters
        d["n_points"] = scale.n_points
    return d


def save_checkpoint(
    path: str | Path, state: ModelState, config_hash: str = "", extra: dict | None = None
) -> None:
    """Write the model as versioned JSON; floats round-trip exactly."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "component_order": list(COMPONENTS),
        "config_hash": config_hash,
        "scales": {vid: _scale_to_json(s) for vid, s in state.scales.items()},
        "encoders": {vid: _head_to_json(h) for vid, h in state.encoders.items()},
        "decoders": {vid: _head_to_json(h) for vid, h in state.decoders.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelState, dict]:
    """Read a checkpoint; returns (state, metadata including 'extra')."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    if doc.get("component_order") != list(COMPONENTS):
        raise ConfigError(f"checkpoint component order {doc.get('component_order')!r} unsupported")
    scales = {}
    for vid, s in doc["scales"].items():
        if s["tag"] == RATER_HISTOGRAM:
            scales[vid] = ScaleFamily(s["tag"], n_raters=s["n_raters"], n_points=s["n_points"])
        else:
            scales[vid] = ScaleFamily(s["tag"])
    state = ModelState(
        scales=scales,
        encoders={vid: _head_from_json(h) for vid, h in doc["encoders"].items()},
        decoders={vid: _head_from_json(h) for vid, h in doc["decoders"].items()},
    )
    meta = {
        "config_hash": doc.get("config_hash", ""),
        "extra": doc.get("extra", {}),
    }
    return state, meta
