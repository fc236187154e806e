"""Tokenization, BIO labels, and corpus transforms for CVE summary text.

A corpus is a list of :class:`TaggedSentence`. Sentences are stored and
exchanged in a CoNLL-style tab-separated format (one ``token<TAB>label``
line per token, blank line between sentences, a ``# source:`` comment
carrying the sentence id).
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

ENTITY_TYPES = ("edition", "product", "update", "vendor", "version")

PAD_TOKEN = "[PAD]"
DEFAULT_MAX_LEN = 128


class BioSequenceError(ValueError):
    """A label sequence violates the BIO scheme."""


class SpanOverlapError(ValueError):
    """Two entity spans claim the same token."""


class ConllParseError(ValueError):
    """A corpus file line cannot be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Token:
    """One token, optionally anchored to character offsets in its source text.

    Offsets are ``-1`` when unknown (tokens read from corpus files, padding,
    synthetic replacements). ``is_pad`` marks padding appended by
    :func:`pad_or_trim`; padding is excluded from statistics and evaluation.
    """

    text: str
    char_start: int = -1
    char_end: int = -1
    is_pad: bool = False

    def __post_init__(self):
        if not self.text or re.search(r"\s", self.text):
            raise ValueError(f"token text must be non-empty without whitespace: {self.text!r}")
        if self.char_start >= 0 and self.char_end >= 0 and self.char_start >= self.char_end:
            raise ValueError(f"bad token offsets [{self.char_start}, {self.char_end})")


@dataclass(frozen=True)
class BioLabel:
    """A BIO tag: ``O``, or ``B``/``I`` with an entity type."""

    prefix: str
    entity: str | None = None

    def __post_init__(self):
        if self.prefix not in ("B", "I", "O"):
            raise ValueError(f"bad BIO prefix: {self.prefix!r}")
        if self.prefix == "O" and self.entity is not None:
            raise ValueError("O label cannot carry an entity")
        if self.prefix != "O" and not self.entity:
            raise ValueError(f"{self.prefix} label requires an entity")

    @classmethod
    def from_string(cls, s: str) -> "BioLabel":
        if s == "O":
            return OUTSIDE
        m = re.fullmatch(r"([BI])-(\S+)", s)
        if not m:
            raise ValueError(f"bad BIO label string: {s!r}")
        return cls(m.group(1), m.group(2))

    def __str__(self) -> str:
        return self.prefix if self.prefix == "O" else f"{self.prefix}-{self.entity}"


OUTSIDE = BioLabel("O")

#: Canonical tagger label vocabulary: O first (tie-break order), then B/I per entity.
LABEL_SET: tuple[BioLabel, ...] = (OUTSIDE,) + tuple(
    BioLabel(p, e) for e in ENTITY_TYPES for p in ("B", "I")
)
LABEL_STRINGS: tuple[str, ...] = tuple(str(l) for l in LABEL_SET)


def is_bio_valid(labels: Sequence[BioLabel]) -> bool:
    prev: BioLabel | None = None
    for lab in labels:
        if lab.prefix == "I":
            if prev is None or prev.prefix == "O" or prev.entity != lab.entity:
                return False
        prev = lab
    return True


def repair_bio(labels: Sequence[BioLabel]) -> list[BioLabel]:
    """Lenient BIO repair: an I without a matching B/I predecessor becomes B.

    Idempotent; valid sequences pass through unchanged.
    """
    out: list[BioLabel] = []
    prev: BioLabel | None = None
    for lab in labels:
        if lab.prefix == "I" and (
            prev is None or prev.prefix == "O" or prev.entity != lab.entity
        ):
            lab = BioLabel("B", lab.entity)
        out.append(lab)
        prev = lab
    return out


@dataclass(frozen=True)
class TaggedSentence:
    """A token sequence with aligned BIO labels.

    Always BIO-valid; producers of possibly invalid sequences must repair
    before constructing (see :func:`repair_bio`).
    """

    tokens: tuple[Token, ...]
    labels: tuple[BioLabel, ...]
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels ({self.source_id!r})"
            )
        if not is_bio_valid(self.labels):
            raise BioSequenceError(f"invalid BIO sequence in {self.source_id!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EntitySpan:
    """A contiguous run of tokens tagged with one entity type.

    ``text`` is the space-joined covered token text. Character offsets refer
    to the original source string and are ``-1`` when the tokens carry none.
    """

    entity: str
    token_start: int
    token_end: int
    text: str
    char_start: int = -1
    char_end: int = -1

    def __post_init__(self):
        if self.token_start >= self.token_end:
            raise ValueError(f"empty span [{self.token_start}, {self.token_end})")


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    length_min: int
    length_max: int
    fraction_below_max_len: float
    tokens_per_entity: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "sentence_count": self.sentence_count,
            "length_min": self.length_min,
            "length_max": self.length_max,
            "fraction_below_max_len": self.fraction_below_max_len,
            "tokens_per_entity": dict(sorted(self.tokens_per_entity.items())),
        }


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

_CHUNK = re.compile(r"\S+")
_DOTTED_NUMERIC = re.compile(r"(?=.*\d)[\d.]+$")


def is_dotted_numeric(text: str) -> bool:
    """True for tokens made of digits and dots with at least one digit ("11.6", "2021")."""
    return bool(_DOTTED_NUMERIC.fullmatch(text))


def _is_punct(c: str) -> bool:
    return not c.isalnum()


def tokenize(text: str) -> list[Token]:
    """Split text into tokens with character offsets.

    Whitespace separates chunks; leading and trailing punctuation characters
    of each chunk become single-character tokens (so ".." yields two "."
    tokens). Interior characters are never split, which keeps dotted version
    strings such as "11.5.9.615" and names such as "node.js" whole.
    """
    tokens: list[Token] = []
    for m in _CHUNK.finditer(text):
        chunk, offset = m.group(), m.start()
        i, j = 0, len(chunk)
        lead: list[Token] = []
        while i < j and _is_punct(chunk[i]):
            lead.append(Token(chunk[i], offset + i, offset + i + 1))
            i += 1
        trail: list[Token] = []
        while j > i and _is_punct(chunk[j - 1]):
            j -= 1
            trail.append(Token(chunk[j], offset + j, offset + j + 1))
        tokens.extend(lead)
        if i < j:
            tokens.append(Token(chunk[i:j], offset + i, offset + j))
        tokens.extend(reversed(trail))
    return tokens


# ---------------------------------------------------------------------------
# Spans <-> labels
# ---------------------------------------------------------------------------


def spans_to_bio(tokens: Sequence[Token], spans: Sequence[EntitySpan]) -> list[BioLabel]:
    """Project non-overlapping spans onto a BIO label sequence."""
    n = len(tokens)
    ordered = sorted(spans, key=lambda s: s.token_start)
    for a, b in zip(ordered, ordered[1:]):
        if b.token_start < a.token_end:
            raise SpanOverlapError(f"overlapping spans: {a} and {b}")
    labels = [OUTSIDE] * n
    for span in ordered:
        if span.token_start < 0 or span.token_end > n:
            raise ValueError(f"span out of range for {n} tokens: {span}")
        labels[span.token_start] = BioLabel("B", span.entity)
        for i in range(span.token_start + 1, span.token_end):
            labels[i] = BioLabel("I", span.entity)
    return labels


def bio_to_spans(labels: Sequence[BioLabel], tokens: Sequence[Token]) -> list[EntitySpan]:
    """Decode maximal B-x (I-x)* runs into entity spans. Strict: invalid BIO raises."""
    if len(labels) != len(tokens):
        raise ValueError(f"{len(labels)} labels for {len(tokens)} tokens")
    spans: list[EntitySpan] = []
    start: int | None = None
    entity: str | None = None

    def flush(end: int):
        nonlocal start, entity
        if start is None:
            return
        covered = tokens[start:end]
        char_start = covered[0].char_start
        char_end = covered[-1].char_end
        if char_start < 0 or char_end < 0:
            char_start = char_end = -1
        spans.append(
            EntitySpan(
                entity=entity,
                token_start=start,
                token_end=end,
                text=" ".join(t.text for t in covered),
                char_start=char_start,
                char_end=char_end,
            )
        )
        start = entity = None

    for i, lab in enumerate(labels):
        if lab.prefix == "B":
            flush(i)
            start, entity = i, lab.entity
        elif lab.prefix == "I":
            if entity != lab.entity or start is None:
                raise BioSequenceError(f"orphan {lab} at position {i}")
        else:
            flush(i)
    flush(len(labels))
    return spans


# ---------------------------------------------------------------------------
# Label policy
# ---------------------------------------------------------------------------


def remap_labels(
    sentence: TaggedSentence,
    keep: Iterable[str],
    renames: dict[str, str] | None = None,
) -> TaggedSentence:
    """Apply a label policy: rename entities, drop everything not kept to O.

    Renamed entities keep their prefix. An entity is retained when it is a
    rename source or a member of ``keep``; all other labels become O. The
    result is BIO-repaired.
    """
    renames = renames or {}
    keep = set(keep)
    out: list[BioLabel] = []
    for lab in sentence.labels:
        if lab.prefix == "O":
            out.append(lab)
        elif lab.entity in renames:
            out.append(BioLabel(lab.prefix, renames[lab.entity]))
        elif lab.entity in keep:
            out.append(lab)
        else:
            out.append(OUTSIDE)
    return TaggedSentence(sentence.tokens, tuple(repair_bio(out)), sentence.source_id)


# ---------------------------------------------------------------------------
# Padding / trimming
# ---------------------------------------------------------------------------

_PAD = Token(PAD_TOKEN, is_pad=True)


def pad_or_trim(sentence: TaggedSentence, max_len: int = DEFAULT_MAX_LEN) -> TaggedSentence:
    """Force a sentence to exactly ``max_len`` tokens.

    Longer sentences keep their first ``max_len`` tokens; shorter ones are
    extended with O-labeled ``[PAD]`` tokens.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    n = len(sentence)
    if n > max_len:
        return TaggedSentence(
            sentence.tokens[:max_len], sentence.labels[:max_len], sentence.source_id
        )
    if n < max_len:
        pad = max_len - n
        return TaggedSentence(
            sentence.tokens + (_PAD,) * pad,
            sentence.labels + (OUTSIDE,) * pad,
            sentence.source_id,
        )
    return sentence


def sentence_length(sentence: TaggedSentence) -> int:
    """Token count excluding padding."""
    return sum(1 for t in sentence.tokens if not t.is_pad)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def compute_stats(corpus: Sequence[TaggedSentence], max_len: int = DEFAULT_MAX_LEN) -> CorpusStats:
    """Exact corpus statistics by a single brute-force pass (padding excluded)."""
    counts: dict[str, int] = {e: 0 for e in ENTITY_TYPES}
    lengths: list[int] = []
    for s in corpus:
        lengths.append(sentence_length(s))
        for tok, lab in zip(s.tokens, s.labels):
            if lab.prefix != "O" and not tok.is_pad:
                counts[lab.entity] = counts.get(lab.entity, 0) + 1
    n = len(lengths)
    if n == 0:
        return CorpusStats(0, 0, 0, 0.0, counts)
    below = sum(1 for length in lengths if length < max_len)
    return CorpusStats(n, min(lengths), max(lengths), below / n, counts)


# ---------------------------------------------------------------------------
# CoNLL-style serialization
# ---------------------------------------------------------------------------

_SOURCE_PREFIX = "# source:"


def write_conll(corpus: Sequence[TaggedSentence]) -> bytes:
    lines: list[str] = []
    for s in corpus:
        lines.append(f"{_SOURCE_PREFIX} {s.source_id}")
        for tok, lab in zip(s.tokens, s.labels):
            lines.append(f"{tok.text}\t{lab}")
        lines.append("")
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_conll(data: bytes, strict: bool = True) -> list[TaggedSentence]:
    """Parse CoNLL-style bytes.

    In strict mode, an I label without a matching predecessor is an error at
    its line; in lenient mode it is repaired to B. Padding tokens are
    recognized by the reserved ``[PAD]`` text and must be labeled O.
    """
    sentences: list[TaggedSentence] = []
    tokens: list[Token] = []
    labels: list[BioLabel] = []
    source: str | None = None

    def flush():
        nonlocal tokens, labels, source
        if tokens:
            sid = source if source is not None else f"s{len(sentences)}"
            sentences.append(TaggedSentence(tuple(tokens), tuple(labels), sid))
        tokens, labels, source = [], [], None

    for lineno, line in enumerate(data.decode("utf-8").split("\n"), 1):
        if line.startswith(_SOURCE_PREFIX):
            source = line[len(_SOURCE_PREFIX):].strip()
            continue
        if not line.strip():
            flush()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConllParseError(f"expected 'token<TAB>label', got {line!r}", lineno)
        text, label_str = parts
        try:
            lab = BioLabel.from_string(label_str)
        except ValueError as exc:
            raise ConllParseError(str(exc), lineno) from exc
        if lab.prefix == "I":
            prev = labels[-1] if labels else None
            if prev is None or prev.prefix == "O" or prev.entity != lab.entity:
                if strict:
                    raise ConllParseError(f"orphan label {label_str}", lineno)
                lab = BioLabel("B", lab.entity)
        is_pad = text == PAD_TOKEN
        if is_pad and lab.prefix != "O":
            raise ConllParseError(f"padding token labeled {label_str}", lineno)
        try:
            tokens.append(Token(text, is_pad=is_pad))
        except ValueError as exc:
            raise ConllParseError(str(exc), lineno) from exc
        labels.append(lab)
    flush()
    return sentences


# ---------------------------------------------------------------------------
# Train/test splitting
# ---------------------------------------------------------------------------


def holdout_count(n: int, test_fraction: float) -> int:
    return round(test_fraction * n)


def split_train_test(
    corpus: Sequence[TaggedSentence], test_fraction: float, seed: int
) -> tuple[list[TaggedSentence], list[TaggedSentence]]:
    """Seeded shuffle split. ``|test| = round(test_fraction * N)``."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(corpus)
    if n < 2:
        raise ValueError("need at least 2 sentences to split")
    idx = list(range(n))
    random.Random(seed).shuffle(idx)
    n_test = holdout_count(n, test_fraction)
    test = [corpus[i] for i in idx[:n_test]]
    train = [corpus[i] for i in idx[n_test:]]
    return train, test


def corpus_fingerprint(corpus: Sequence[TaggedSentence]) -> str:
    return hashlib.sha256(write_conll(corpus)).hexdigest()[:16]
