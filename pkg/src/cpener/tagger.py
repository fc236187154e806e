"""Trainable BIO sequence tagger with exact Viterbi decoding.

The model is an averaged structured perceptron over position-local features
with a learned label-bigram transition table. Transitions into I-x from
anything other than B-x/I-x are pinned to minus infinity (also at sentence
start), so decoded sequences are BIO-valid by construction.

Decoding returns the exact argmax of

    sum_i emission(features(i), y_i) + sum_i transition(y_{i-1}, y_i)

over all label sequences; among equal-scoring sequences the one that is
lexicographically smallest in label-set order wins. The backward dynamic
program computes, for every position and label, the best achievable suffix
score; the forward reconstruction then greedily picks the smallest label
that still attains the optimum, which yields exactly that tie-break.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Literal, Sequence

import httpx

from . import annotate as _annotate
from .corpus import (
    BioLabel,
    EntitySpan,
    LABEL_STRINGS,
    TaggedSentence,
    Token,
    bio_to_spans,
    corpus_fingerprint,
    is_dotted_numeric,
    repair_bio,
    tokenize,
)
from .nvd import CpeName

NEG_INF = float("-inf")

MODEL_FORMAT_VERSION = 1


class TrainingDataError(ValueError):
    """The training corpus uses labels outside the tagger vocabulary."""


class ModelFormatError(ValueError):
    """A model file is truncated or structurally invalid."""


class ModelVersionError(ModelFormatError):
    """A model file was written by an incompatible format version."""


class ExternalTaggerError(RuntimeError):
    """An external tagging endpoint failed or broke its wire contract."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TaggerModel:
    """Averaged perceptron weights plus the label vocabulary they index."""

    label_set: tuple[str, ...] = LABEL_STRINGS
    emissions: dict[str, list[float]] = field(default_factory=dict)
    transitions: list[list[float]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.label_set = tuple(self.label_set)
        if not self.transitions:
            self.transitions = blank_transitions(self.label_set)

    def emission_scores(self, features: Sequence[str]) -> list[float]:
        scores = [0.0] * len(self.label_set)
        for f in features:
            row = self.emissions.get(f)
            if row:
                for k, w in enumerate(row):
                    scores[k] += w
        return scores


def _valid_transition(a: str, b: str) -> bool:
    if not b.startswith("I-"):
        return True
    entity = b[2:]
    return a == f"B-{entity}" or a == f"I-{entity}"


def blank_transitions(label_set: Sequence[str]) -> list[list[float]]:
    """Zero weights for legal label bigrams, minus infinity for illegal ones."""
    return [
        [0.0 if _valid_transition(a, b) else NEG_INF for b in label_set]
        for a in label_set
    ]


def _start_mask(label_set: Sequence[str]) -> list[float]:
    return [NEG_INF if lab.startswith("I-") else 0.0 for lab in label_set]


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def _shape(text: str) -> str:
    if not any(c.isalnum() for c in text):
        return "punct"
    if text.isdigit():
        return "dd"
    if text.isalpha():
        return "Xx" if text[0].isupper() else "xx"
    return "mixed"


def extract_features(texts: Sequence[str]) -> list[list[str]]:
    """Position-local features: token, shape, affixes, +-1 context, flags."""
    n = len(texts)
    lowered = [t.lower() for t in texts]
    out: list[list[str]] = []
    for i, text in enumerate(texts):
        low = lowered[i]
        feats = [f"w={low}", f"shape={_shape(text)}"]
        for k in (1, 2, 3):
            if len(low) >= k:
                feats.append(f"pre{k}={low[:k]}")
                feats.append(f"suf{k}={low[-k:]}")
        feats.append(f"prev={lowered[i - 1]}" if i > 0 else "prev=<s>")
        feats.append(f"next={lowered[i + 1]}" if i + 1 < n else "next=</s>")
        if is_dotted_numeric(text):
            feats.append("dotted")
        if i == 0:
            feats.append("first")
        out.append(feats)
    return out


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def _decode_indices(
    emissions: dict[str, list[float]],
    transitions: list[list[float]],
    feats: Sequence[Sequence[str]],
    k: int,
    inside_mask: Sequence[bool] | None = None,
) -> list[int]:
    n = len(feats)
    if n == 0:
        return []
    if inside_mask is None:
        inside_mask = _CANONICAL_INSIDE
    em_scores: list[list[float]] = []
    for pos_feats in feats:
        vec = [0.0] * k
        for f in pos_feats:
            row = emissions.get(f)
            if row:
                for y in range(k):
                    vec[y] += row[y]
        em_scores.append(vec)

    # suffix[i][y]: best score of positions i..n-1 given label y at i
    suffix = em_scores[n - 1][:]
    suffixes = [None] * n
    suffixes[n - 1] = suffix
    for i in range(n - 2, -1, -1):
        nxt = suffixes[i + 1]
        cur = [0.0] * k
        ei = em_scores[i]
        for y in range(k):
            row = transitions[y]
            best = NEG_INF
            for y2 in range(k):
                v = row[y2] + nxt[y2]
                if v > best:
                    best = v
            cur[y] = ei[y] + best
        suffixes[i] = cur

    def argmax_first(scores: list[float]) -> int:
        best_y, best_v = 0, NEG_INF
        for y, v in enumerate(scores):
            if v > best_v:
                best_y, best_v = y, v
        return best_y

    first = suffixes[0]
    start = [NEG_INF if inside_mask[y] else first[y] for y in range(k)]
    path = [argmax_first(start)]
    for i in range(1, n):
        row = transitions[path[-1]]
        nxt = suffixes[i]
        path.append(argmax_first([row[y] + nxt[y] for y in range(k)]))
    return path


_CANONICAL_INSIDE = tuple(lab.startswith("I-") for lab in LABEL_STRINGS)


def viterbi_decode(model: TaggerModel, tokens: Sequence[Token | str]) -> list[BioLabel]:
    """Exact best-path decode; ties break toward the earlier label-set entry."""
    texts = [t.text if isinstance(t, Token) else t for t in tokens]
    if not texts:
        return []
    feats = extract_features(texts)
    inside = tuple(lab.startswith("I-") for lab in model.label_set)
    path = _decode_indices(
        model.emissions, model.transitions, feats, len(model.label_set), inside
    )
    return [BioLabel.from_string(model.label_set[y]) for y in path]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(corpus: Sequence[TaggedSentence], config: TrainConfig = TrainConfig()) -> TaggerModel:
    """Averaged structured perceptron over Viterbi best paths.

    Per epoch, per (optionally shuffled) sentence: decode with the current
    weights and, on a sequence mismatch, add the gold emission and transition
    counts and subtract the predicted ones. The returned model holds the
    average of the weight vector over all steps, which is what decodes well
    on held-out text.
    """
    if not corpus:
        raise TrainingDataError("training corpus is empty")
    label_index = {lab: i for i, lab in enumerate(LABEL_STRINGS)}
    offenders = sorted(
        {str(lab) for s in corpus for lab in s.labels if str(lab) not in label_index}
    )
    if offenders:
        raise TrainingDataError(f"labels outside tagger vocabulary: {offenders}")

    k = len(LABEL_STRINGS)
    sentences: list[tuple[list[list[str]], list[int]]] = []
    for s in corpus:
        texts = [t.text for t in s.tokens]
        sentences.append(
            (extract_features(texts), [label_index[str(lab)] for lab in s.labels])
        )

    emissions: dict[str, list[float]] = {}
    em_acc: dict[str, list[float]] = {}
    em_stamp: dict[str, int] = {}
    transitions = blank_transitions(LABEL_STRINGS)
    tr_acc = [[0.0] * k for _ in range(k)]
    tr_stamp = [[0] * k for _ in range(k)]

    step = 0

    def bump_emission(feat: str, y: int, delta: float):
        row = emissions.get(feat)
        if row is None:
            row = emissions[feat] = [0.0] * k
            em_acc[feat] = [0.0] * k
            em_stamp[feat] = step - 1
        elapsed = step - 1 - em_stamp[feat]
        if elapsed:
            acc = em_acc[feat]
            for i in range(k):
                acc[i] += elapsed * row[i]
        em_stamp[feat] = step - 1
        row[y] += delta

    def bump_transition(a: int, b: int, delta: float):
        elapsed = step - 1 - tr_stamp[a][b]
        if elapsed:
            tr_acc[a][b] += elapsed * transitions[a][b]
        tr_stamp[a][b] = step - 1
        transitions[a][b] += delta

    rng = random.Random(config.seed)
    mismatch_history: list[int] = []
    for _ in range(config.epochs):
        order = list(range(len(sentences)))
        if config.shuffle:
            rng.shuffle(order)
        mismatches = 0
        for si in order:
            step += 1
            feats, gold = sentences[si]
            pred = _decode_indices(emissions, transitions, feats, k)
            if pred == gold:
                continue
            mismatches += 1
            for i, (g, p) in enumerate(zip(gold, pred)):
                if g != p:
                    for f in feats[i]:
                        bump_emission(f, g, 1.0)
                        bump_emission(f, p, -1.0)
            for i in range(1, len(gold)):
                g_pair = (gold[i - 1], gold[i])
                p_pair = (pred[i - 1], pred[i])
                if g_pair != p_pair:
                    bump_transition(*g_pair, 1.0)
                    bump_transition(*p_pair, -1.0)
        mismatch_history.append(mismatches)

    total = step
    averaged: dict[str, list[float]] = {}
    for feat, row in emissions.items():
        acc = em_acc[feat]
        stamp = em_stamp[feat]
        avg = [(acc[i] + (total - stamp) * row[i]) / total for i in range(k)]
        if any(avg):
            averaged[feat] = avg
    avg_transitions = blank_transitions(LABEL_STRINGS)
    for a in range(k):
        for b in range(k):
            if transitions[a][b] == NEG_INF:
                continue
            avg_transitions[a][b] = (
                tr_acc[a][b] + (total - tr_stamp[a][b]) * transitions[a][b]
            ) / total

    return TaggerModel(
        label_set=LABEL_STRINGS,
        emissions=averaged,
        transitions=avg_transitions,
        meta={
            "epochs": config.epochs,
            "seed": config.seed,
            "shuffle": config.shuffle,
            "sentences": len(corpus),
            "corpus_fingerprint": corpus_fingerprint(corpus),
            "mismatch_history": mismatch_history,
        },
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(model: TaggerModel) -> bytes:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "label_set": list(model.label_set),
        "emissions": model.emissions,
        "transitions": [
            [None if w == NEG_INF else w for w in row] for row in model.transitions
        ],
        "meta": model.meta,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> TaggerModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    try:
        label_set = tuple(str(x) for x in doc["label_set"])
        k = len(label_set)
        emissions = {
            str(f): [float(w) for w in row] for f, row in doc["emissions"].items()
        }
        transitions = [
            [NEG_INF if w is None else float(w) for w in row]
            for row in doc["transitions"]
        ]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelFormatError(f"bad model structure: {exc}") from exc
    if len(transitions) != k or any(len(row) != k for row in transitions):
        raise ModelFormatError("transition table does not match the label set")
    if any(len(row) != k for row in emissions.values()):
        raise ModelFormatError("emission rows do not match the label set")
    return TaggerModel(
        label_set=label_set,
        emissions=emissions,
        transitions=transitions,
        meta=dict(doc.get("meta", {})),
    )


# ---------------------------------------------------------------------------
# External tagger client
# ---------------------------------------------------------------------------


@dataclass
class HttpTagger:
    """JSON-over-HTTP tagging endpoint: {tokens} -> {labels}."""

    url: str
    timeout: float = 10.0

    def tag(self, tokens: list[str]) -> list[str]:
        try:
            resp = httpx.post(self.url, json={"tokens": tokens}, timeout=self.timeout)
            resp.raise_for_status()
            labels = resp.json()["labels"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ExternalTaggerError(f"external tagger at {self.url}: {exc}") from exc
        return [str(lab) for lab in labels]

    def __call__(self, tokens: Sequence[Token]) -> list[BioLabel]:
        texts = [t.text for t in tokens]
        return parse_external_labels(self.tag(texts), len(texts), self.url)


def parse_external_labels(
    raw: Sequence[str], expected: int, endpoint: str
) -> list[BioLabel]:
    if len(raw) != expected:
        raise ExternalTaggerError(
            f"external tagger at {endpoint} returned {len(raw)} labels for {expected} tokens"
        )
    labels = []
    for s in raw:
        if s not in LABEL_STRINGS:
            raise ExternalTaggerError(
                f"external tagger at {endpoint} returned unknown label {s!r}"
            )
        labels.append(BioLabel.from_string(s))
    return labels


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

TaggerKind = Literal["learned", "gazetteer", "external"]


def predict(text: str, kind: TaggerKind, handle) -> list[EntitySpan]:
    """Tokenize, label with the chosen tagger, repair, and decode to spans.

    ``handle`` is a :class:`TaggerModel` for ``learned``, a gazetteer for
    ``gazetteer``, and an endpoint URL or :class:`HttpTagger` for
    ``external``. Spans carry character offsets into ``text``.
    """
    tokens = tokenize(text)
    if not tokens:
        return []
    if kind == "learned":
        labels = viterbi_decode(handle, tokens)
    elif kind == "gazetteer":
        labels = list(_annotate.annotate_sentence(tokens, handle).labels)
    elif kind == "external":
        client = handle if isinstance(handle, HttpTagger) else HttpTagger(str(handle))
        labels = client(tokens)
    else:
        raise ValueError(f"unknown tagger kind: {kind!r}")
    return bio_to_spans(repair_bio(labels), tokens)


# ---------------------------------------------------------------------------
# CPE reconstruction
# ---------------------------------------------------------------------------

_CPE_FIELDS = ("vendor", "product", "version", "update", "edition")


@dataclass(frozen=True)
class CpeMatch:
    name: CpeName
    verified: bool


def cpe_reconstruct(
    spans: Sequence[EntitySpan], dictionary: Sequence[CpeName]
) -> list[CpeMatch]:
    """Assemble a candidate CPE name from spans and verify it against a dictionary.

    The first span of each entity type fills the matching field (lowercased,
    spaces become underscores); untouched fields stay wildcards. Dictionary
    entries agreeing on every non-wildcard candidate field are returned as
    verified matches; with no match (or no spans at all) the bare candidate
    comes back flagged unverified.
    """
    fields: dict[str, str] = {}
    for span in spans:
        if span.entity in _CPE_FIELDS and span.entity not in fields:
            fields[span.entity] = span.text.lower().replace(" ", "_")
    candidate = CpeName(**fields)
    if not fields:
        return [CpeMatch(candidate, False)]
    matches = [
        name
        for name in dictionary
        if all(getattr(name, f) == v for f, v in fields.items())
    ]
    if matches:
        return [CpeMatch(name, True) for name in matches]
    return [CpeMatch(candidate, False)]
