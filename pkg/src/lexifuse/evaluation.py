"""Downstream text-classification protocol and a synthetic benchmark.

Texts become feature vectors by averaging per-word polarity features under
a chosen representation; a multinomial logistic regression is fit on the
training split and scored on the test split.  The synthetic generator
produces views and corpora with known ground-truth word sentiment so the
whole pipeline can be exercised without external datasets.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericError, ParseError, UsageError
from .lexica import (
    BINARY,
    NEGATIVE,
    NEUTRAL,
    PAIR_CONTINUOUS,
    POSITIVE,
    RATER_HISTOGRAM,
    SIGNED_CONTINUOUS,
    LexiconView,
    PolarityLabel,
    ScaleFamily,
    binary,
    pair_continuous,
    rater_histogram,
    signed_continuous,
)
from .rng import RngStream
from .unified import UnifiedLexicon

_TOKEN_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _TOKEN_SPLIT.split(text.casefold()) if t]


@dataclass(frozen=True)
class LabeledCorpus:
    texts: tuple[tuple[str, ...], ...]
    labels: tuple[int, ...]
    n_classes: int

    def __post_init__(self):
        if not self.texts:
            raise ConfigError("corpus must contain at least one text")
        if len(self.texts) != len(self.labels):
            raise ConfigError(
                f"{len(self.texts)} texts but {len(self.labels)} labels"
            )
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        for y in self.labels:
            if not 0 <= y < self.n_classes:
                raise ConfigError(f"label {y} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.texts)

    def types(self) -> set[str]:
        return {t for text in self.texts for t in text}


def read_corpus(path: str | Path, n_classes: int | None = None) -> LabeledCorpus:
    """Read a `label<TAB>text` TSV; `#` lines and blanks are skipped."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"corpus file not found: {path}")
    texts: list[tuple[str, ...]] = []
    labels: list[int] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        if "\t" not in raw:
            raise ParseError("expected `label<TAB>text`", path=str(path), line=lineno)
        head, body = raw.split("\t", 1)
        try:
            label = int(head)
        except ValueError as e:
            raise ParseError(f"bad label {head!r}", path=str(path), line=lineno) from e
        if label < 0:
            raise ParseError(f"negative label {label}", path=str(path), line=lineno)
        labels.append(label)
        texts.append(tuple(tokenize(body)))
    if not labels:
        raise ParseError("corpus has no data rows", path=str(path), line=1)
    k = n_classes if n_classes is not None else max(labels) + 1
    return LabeledCorpus(texts=tuple(texts), labels=tuple(labels), n_classes=k)


def write_corpus(
    path: str | Path,
    corpus: LabeledCorpus,
    *,
    seed: int | None = None,
    config_hash: str | None = None,
) -> None:
    lines = [f"# labeled corpus (lexifuse {__version__})"]
    if seed is not None:
        lines.append(f"# seed: {seed}")
    if config_hash is not None:
        lines.append(f"# config_hash: {config_hash}")
    for label, text in zip(corpus.labels, corpus.texts):
        lines.append(f"{label}\t{' '.join(text)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_corpus(corpus: LabeledCorpus, n_train: int) -> tuple[LabeledCorpus, LabeledCorpus]:
    if not 0 < n_train < len(corpus):
        raise ConfigError(
            f"n_train must be in (0, {len(corpus)}), got {n_train}"
        )
    return (
        LabeledCorpus(corpus.texts[:n_train], corpus.labels[:n_train], corpus.n_classes),
        LabeledCorpus(corpus.texts[n_train:], corpus.labels[n_train:], corpus.n_classes),
    )


# ---------------------------------------------------------------------------
# Featurizers

def _single_dim(family: ScaleFamily) -> int:
    if family.tag == PAIR_CONTINUOUS:
        return 2
    return 1


def _concat_dim(family: ScaleFamily) -> int:
    if family.tag == PAIR_CONTINUOUS:
        return 2
    if family.tag == RATER_HISTOGRAM:
        return family.n_raters
    return 1


def _bucket(rating: int, n_points: int) -> float:
    mid = (n_points - 1) / 2
    if rating < mid:
        return -1.0
    if rating > mid:
        return 1.0
    return 0.0


def _single_feature(label: PolarityLabel) -> np.ndarray:
    tag = label.family.tag
    if tag == BINARY:
        return np.array([1.0 if label.value == 1 else -1.0])
    if tag == SIGNED_CONTINUOUS:
        return np.array([float(label.value)])
    if tag == PAIR_CONTINUOUS:
        return np.array([float(label.value[0]), float(label.value[1])])
    buckets = [_bucket(r, label.family.n_points) for r in label.value]
    return np.array([sum(buckets) / len(buckets)])


def _concat_feature(label: PolarityLabel) -> np.ndarray:
    tag = label.family.tag
    if tag == RATER_HISTOGRAM:
        top = label.family.n_points - 1
        return np.array([2.0 * r / top - 1.0 for r in label.value])
    return _single_feature(label)


class Featurizer:
    """Maps words (and token lists) to fixed-dimension polarity features."""

    mode: str
    dim: int

    def word_feature(self, word: str) -> np.ndarray | None:
        raise NotImplementedError

    def __contains__(self, word: str) -> bool:
        return self.word_feature(word) is not None

    def featurize_text(self, tokens) -> np.ndarray:
        feats = [f for t in tokens if (f := self.word_feature(t)) is not None]
        if not feats:
            return np.zeros(self.dim)
        return np.mean(feats, axis=0)

    def featurize_corpus(self, corpus: LabeledCorpus) -> np.ndarray:
        return np.array([self.featurize_text(text) for text in corpus.texts])


class FusedMeanFeaturizer(Featurizer):
    mode = "fused-mean"
    dim = 3

    def __init__(self, lexicon: UnifiedLexicon):
        self.lexicon = lexicon

    def word_feature(self, word: str) -> np.ndarray | None:
        entry = self.lexicon.lookup(word)
        return None if entry is None else np.array(entry.mean)


class FusedBetaFeaturizer(Featurizer):
    mode = "fused-beta"
    dim = 3

    def __init__(self, lexicon: UnifiedLexicon):
        self.lexicon = lexicon

    def word_feature(self, word: str) -> np.ndarray | None:
        entry = self.lexicon.lookup(word)
        return None if entry is None else np.array(entry.beta)


class SingleLexiconFeaturizer(Featurizer):
    """One view on its own numeric scale; rater histograms collapse to the
    mean of per-rating buckets (below midpoint -1, midpoint 0, above +1)."""

    def __init__(self, view: LexiconView):
        self.view = view
        self.mode = f"single:{view.id}"
        self.dim = _single_dim(view.family)

    def word_feature(self, word: str) -> np.ndarray | None:
        label = self.view.entries.get(word.casefold())
        return None if label is None else _single_feature(label)


class ConcatFeaturizer(Featurizer):
    """All views side by side (id order), each on its raw numeric scale;
    rater histograms stay 10-dimensional, rescaled to [-1, 1].  Views that
    miss a word contribute their neutral value (zeros after centering)."""

    mode = "concat"

    def __init__(self, views: list[LexiconView]):
        if not views:
            raise ConfigError("concat featurizer needs at least one view")
        self.views = sorted(views, key=lambda v: v.id)
        self.dim = sum(_concat_dim(v.family) for v in self.views)

    def word_feature(self, word: str) -> np.ndarray | None:
        word = word.casefold()
        if not any(word in v.entries for v in self.views):
            return None
        parts = []
        for v in self.views:
            label = v.entries.get(word)
            if label is None:
                parts.append(np.zeros(_concat_dim(v.family)))
            else:
                parts.append(_concat_feature(label))
        return np.concatenate(parts)


def make_featurizer(
    mode: str,
    *,
    unified: UnifiedLexicon | None = None,
    views: list[LexiconView] | None = None,
) -> Featurizer:
    """Build the featurizer named by mode: fused-mean, fused-beta,
    single:<view id>, or concat."""
    if mode == "fused-mean" or mode == "fused-beta":
        if unified is None:
            raise ConfigError(f"mode {mode} needs a unified lexicon")
        cls = FusedMeanFeaturizer if mode == "fused-mean" else FusedBetaFeaturizer
        return cls(unified)
    if mode == "concat":
        if not views:
            raise ConfigError("mode concat needs input views")
        return ConcatFeaturizer(views)
    if mode.startswith("single:"):
        vid = mode.split(":", 1)[1]
        for v in views or []:
            if v.id == vid:
                return SingleLexiconFeaturizer(v)
        raise ConfigError(f"mode {mode}: no view with id {vid!r}")
    raise ConfigError(
        f"unknown mode {mode!r} (expected fused-mean, fused-beta, single:<view>, concat)"
    )


# ---------------------------------------------------------------------------
# Multinomial logistic regression

@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: np.ndarray
    l2: float
    converged: bool
    n_iter: int

    def decision(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision(features), axis=1)

    def accuracy(self, features: np.ndarray, labels) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def fit_logistic(
    features: np.ndarray,
    labels,
    l2: float = 1e-4,
    max_iter: int = 2000,
    tol: float = 1e-8,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> LogisticModel:
    """Minimize mean cross-entropy + (l2/2)*||W||^2 by full-batch gradient
    descent with backtracking line search; bias is unpenalized.  Stops when
    the gradient norm drops below tol or after max_iter steps (the model
    records which)."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise UsageError(f"bad shapes: features {x.shape}, labels {y.shape}")
    if np.unique(y).size < 2:
        raise UsageError("fit_logistic needs at least two classes in the labels")
    n, d = x.shape
    k = int(y.max()) + 1
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    if init is not None:
        w, b = (np.array(init[0], dtype=float), np.array(init[1], dtype=float))
        if w.shape != (k, d) or b.shape != (k,):
            raise UsageError(f"init shapes must be ({k}, {d}) and ({k},)")
    else:
        w = np.zeros((k, d))
        b = np.zeros(k)

    def loss_and_grad(w, b):
        logp = _log_softmax(x @ w.T + b)
        nll = -np.mean(logp[np.arange(n), y])
        val = nll + 0.5 * l2 * float(np.sum(w * w))
        resid = (np.exp(logp) - onehot) / n
        gw = resid.T @ x + l2 * w
        gb = resid.sum(axis=0)
        return val, gw, gb

    def loss_only(w, b):
        logp = _log_softmax(x @ w.T + b)
        return -np.mean(logp[np.arange(n), y]) + 0.5 * l2 * float(np.sum(w * w))

    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        val, gw, gb = loss_and_grad(w, b)
        gnorm2 = float(np.sum(gw * gw) + np.sum(gb * gb))
        if math.sqrt(gnorm2) < tol:
            converged = True
            it -= 1
            break
        # Armijo backtracking, with the accepted step carried over (doubled)
        # so flat directions can take large steps
        step = min(step * 2.0, 1e8)
        while True:
            w2 = w - step * gw
            b2 = b - step * gb
            if loss_only(w2, b2) <= val - 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-16:
                break
        if step < 1e-16:
            converged = True
            break
        w, b = w2, b2
    if not (np.isfinite(w).all() and np.isfinite(b).all()):
        raise NumericError("logistic regression produced non-finite parameters")
    return LogisticModel(weights=w, bias=b, l2=l2, converged=converged, n_iter=it)


def evaluate(
    corpus_train: LabeledCorpus,
    corpus_test: LabeledCorpus,
    featurizer: Featurizer,
    l2: float = 1e-4,
    max_iter: int = 2000,
    tol: float = 1e-8,
) -> float:
    """Fit on the training split, return accuracy on the test split."""
    if corpus_train.n_classes != corpus_test.n_classes:
        raise ConfigError(
            f"train has {corpus_train.n_classes} classes, test has {corpus_test.n_classes}"
        )
    model = fit_logistic(
        featurizer.featurize_corpus(corpus_train),
        corpus_train.labels,
        l2=l2,
        max_iter=max_iter,
        tol=tol,
    )
    return model.accuracy(featurizer.featurize_corpus(corpus_test), corpus_test.labels)


def coverage(words, corpus: LabeledCorpus) -> float:
    """Percentage of the corpus's unique token types found in `words`
    (anything supporting `in`: a set, view entries, lexicon, featurizer)."""
    types = corpus.types()
    if not types:
        return 0.0
    hit = sum(1 for t in types if t in words)
    return 100.0 * hit / len(types)


def restrict_vocabulary(fused: UnifiedLexicon, view: LexiconView) -> UnifiedLexicon:
    """Fused entries limited to the view's words."""
    kept = [e for e in fused.entries() if e.word in view.entries]
    return UnifiedLexicon(kept, fused.meta)


# ---------------------------------------------------------------------------
# Report output

REPORT_COLUMNS = ("mode", "dataset", "n_train", "n_test", "accuracy", "coverage", "feature_dim")


def write_report(path: str | Path, rows: list[dict], *, seed=None, config_hash=None) -> None:
    lines = [f"# evaluation report (lexifuse {__version__})"]
    if seed is not None:
        lines.append(f"# seed: {seed}")
    if config_hash is not None:
        lines.append(f"# config_hash: {config_hash}")
    lines.append(",".join(REPORT_COLUMNS))
    for r in rows:
        lines.append(
            f"{r['mode']},{r['dataset']},{r['n_train']},{r['n_test']},"
            f"{r['accuracy']:.12g},{r['coverage']:.12g},{r['feature_dim']}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic benchmark

_POLAR = (POSITIVE, NEGATIVE)


@dataclass(eq=False)
class SynthData:
    views: list[LexiconView]
    corpus: LabeledCorpus
    word_classes: dict[str, int]


def _emit_label(family: ScaleFamily, cls: int, rng: RngStream) -> PolarityLabel:
    tag = family.tag
    if tag == BINARY:
        return PolarityLabel(family, 1 if cls == POSITIVE else 0)
    if tag == SIGNED_CONTINUOUS:
        if cls == POSITIVE:
            return PolarityLabel(family, rng.uniform(0.1, 1.0))
        if cls == NEGATIVE:
            return PolarityLabel(family, rng.uniform(-1.0, -0.1))
        return PolarityLabel(family, rng.uniform(-0.04, 0.04))
    if tag == PAIR_CONTINUOUS:
        if cls == POSITIVE:
            return PolarityLabel(family, (rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.3)))
        if cls == NEGATIVE:
            return PolarityLabel(family, (rng.uniform(0.0, 0.3), rng.uniform(0.6, 1.0)))
        center = rng.uniform(0.1, 0.4)
        delta = rng.uniform(-0.02, 0.02)
        return PolarityLabel(family, (center + delta, center - delta))
    # rater histogram: ratings concentrated above/below the midpoint for
    # polar classes, symmetric around it for neutral
    mid = (family.n_points - 1) // 2
    if cls == POSITIVE:
        ratings = tuple(int(rng.integers(mid + 2, family.n_points)) for _ in range(family.n_raters))
    elif cls == NEGATIVE:
        ratings = tuple(int(rng.integers(0, mid - 1)) for _ in range(family.n_raters))
    else:
        half = min(mid, family.n_points - 1 - mid)
        pairs = []
        for _ in range(family.n_raters // 2):
            d = int(rng.integers(0, half + 1))
            pairs.extend((mid - d, mid + d))
        if family.n_raters % 2:
            pairs.append(mid)
        ratings = tuple(pairs)
    return PolarityLabel(family, ratings)


def _synth_families() -> list[tuple[str, ScaleFamily]]:
    return [
        ("bin", binary()),
        ("pair", pair_continuous()),
        ("rater", rater_histogram(10, 9)),
        ("sig", signed_continuous()),
    ]


def synth_generate(
    n_words: int,
    n_views_per_family: int,
    label_noise: float,
    n_texts: int,
    text_len: int,
    rng: RngStream,
) -> SynthData:
    """Views plus a labeled corpus with known per-word ground truth.

    Each word draws a ground-truth class uniformly from {positive,
    negative, neutral}.  Every view covers a uniform 40-70% subset of the
    words it can express (binary views list polar words only) and emits a
    label for the truth class, flipped to a uniform expressible class with
    probability label_noise.  Texts are uniform bags of words labeled by
    the majority ground-truth polarity of their tokens; ties are resampled
    so the corpus is a clean two-class problem.
    """
    if n_words < 1 or n_views_per_family < 1 or n_texts < 1 or text_len < 1:
        raise ConfigError("synth sizes must be positive")
    if not 0.0 <= label_noise < 0.5:
        raise ConfigError(f"label_noise must be in [0, 0.5), got {label_noise}")

    words = [f"word{i:04d}" for i in range(n_words)]
    truth_rng = rng.split("truth")
    word_classes = {w: int(truth_rng.integers(0, 3)) for w in words}

    views = []
    for stem, family in _synth_families():
        for j in range(n_views_per_family):
            vid = f"{stem}{j}"
            view_rng = rng.split(f"view:{vid}")
            if family.tag == BINARY:
                eligible = [w for w in words if word_classes[w] in _POLAR]
                expressible = _POLAR
            else:
                eligible = words
                expressible = (POSITIVE, NEGATIVE, NEUTRAL)
            frac = view_rng.uniform(0.4, 0.7)
            n_cov = max(1, round(frac * len(eligible)))
            order = view_rng.permutation(len(eligible))
            covered = sorted(eligible[i] for i in order[:n_cov])
            entries = {}
            for w in covered:
                cls = word_classes[w]
                if view_rng.uniform(0.0, 1.0) < label_noise:
                    cls = expressible[int(view_rng.integers(0, len(expressible)))]
                entries[w] = _emit_label(family, cls, view_rng)
            views.append(LexiconView(vid, family, entries))

    text_rng = rng.split("texts")
    texts = []
    labels = []
    for _ in range(n_texts):
        while True:
            tokens = tuple(words[int(text_rng.integers(0, n_words))] for _ in range(text_len))
            n_pos = sum(1 for t in tokens if word_classes[t] == POSITIVE)
            n_neg = sum(1 for t in tokens if word_classes[t] == NEGATIVE)
            if n_pos != n_neg:
                break
        texts.append(tokens)
        labels.append(POSITIVE if n_pos > n_neg else NEGATIVE)
    corpus = LabeledCorpus(texts=tuple(texts), labels=tuple(labels), n_classes=2)
    return SynthData(views=views, corpus=corpus, word_classes=word_classes)
