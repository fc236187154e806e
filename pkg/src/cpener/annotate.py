"""Automatic labeling of raw CVE summaries.

Each entry is labeled against a gazetteer built from its own linked CPE
names (scoped matching, not a global dictionary), plus a version heuristic
for dotted-numeric tokens. A pluggable tagger hook allows an external or
learned model to do the labeling instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .corpus import (
    BioLabel,
    EntitySpan,
    TaggedSentence,
    Token,
    is_dotted_numeric,
    repair_bio,
    spans_to_bio,
    tokenize,
)
from .nvd import CpeError, CpeName, CveEntry, parse_cpe_uri

#: Entities a gazetteer can assert, in tie-break priority order.
GAZETTEER_ENTITIES = ("product", "vendor", "update", "edition")

_PRIORITY = {e: i for i, e in enumerate(GAZETTEER_ENTITIES)}

#: CPE field values that assert no matchable text.
_NO_VALUE = ("*", "-")

TermSet = frozenset[tuple[str, ...]]


@dataclass(frozen=True)
class Gazetteer:
    """Lowercased token sequences to match per entity type."""

    vendor_terms: TermSet = frozenset()
    product_terms: TermSet = frozenset()
    update_terms: TermSet = frozenset()
    edition_terms: TermSet = frozenset()

    def terms_for(self, entity: str) -> TermSet:
        return getattr(self, f"{entity}_terms")

    def is_empty(self) -> bool:
        return not any(self.terms_for(e) for e in GAZETTEER_ENTITIES)


EMPTY_GAZETTEER = Gazetteer()


@dataclass
class AnnotationReport:
    sentences_in: int = 0
    sentences_out: int = 0
    tokens_labeled_per_entity: dict[str, int] = field(default_factory=dict)
    unmatched_cpe_fields: int = 0

    def to_json(self) -> dict:
        return {
            "sentences_in": self.sentences_in,
            "sentences_out": self.sentences_out,
            "tokens_labeled_per_entity": dict(sorted(self.tokens_labeled_per_entity.items())),
            "unmatched_cpe_fields": self.unmatched_cpe_fields,
        }


def _field_term(value: str) -> tuple[str, ...] | None:
    """Turn a CPE field value into a lowercase token sequence ('_' means space)."""
    if value in _NO_VALUE:
        return None
    term = tuple(t.text.lower() for t in tokenize(value.replace("_", " ")))
    return term or None


def build_gazetteer(cpe_names: Iterable[CpeName]) -> Gazetteer:
    terms: dict[str, set[tuple[str, ...]]] = {e: set() for e in GAZETTEER_ENTITIES}
    for name in cpe_names:
        for entity in GAZETTEER_ENTITIES:
            term = _field_term(getattr(name, entity))
            if term:
                terms[entity].add(term)
    return Gazetteer(**{f"{e}_terms": frozenset(terms[e]) for e in GAZETTEER_ENTITIES})


def annotate_sentence(
    tokens: Sequence[Token], gaz: Gazetteer, source_id: str = ""
) -> TaggedSentence:
    """Label tokens by case-insensitive longest gazetteer match plus a version rule.

    Overlaps resolve left-to-right, longest-first; equal-length candidates at
    the same position fall back to the fixed priority product > vendor >
    update > edition. Tokens made of digits and dots become B-version.
    """
    texts = [t.text.lower() for t in tokens]
    n = len(texts)
    candidates: list[tuple[int, int, int, str]] = []
    for entity in GAZETTEER_ENTITIES:
        prio = _PRIORITY[entity]
        for term in gaz.terms_for(entity):
            width = len(term)
            term_list = list(term)
            for start in range(0, n - width + 1):
                if texts[start : start + width] == term_list:
                    candidates.append((start, -width, prio, entity))
    candidates.sort()
    taken = [False] * n
    spans: list[EntitySpan] = []
    for start, neg_width, _, entity in candidates:
        end = start - neg_width
        if any(taken[start:end]):
            continue
        for i in range(start, end):
            taken[i] = True
        spans.append(
            EntitySpan(
                entity=entity,
                token_start=start,
                token_end=end,
                text=" ".join(t.text for t in tokens[start:end]),
                char_start=tokens[start].char_start,
                char_end=tokens[end - 1].char_end,
            )
        )
    for i, text in enumerate(texts):
        if not taken[i] and is_dotted_numeric(text):
            taken[i] = True
            spans.append(
                EntitySpan(
                    entity="version",
                    token_start=i,
                    token_end=i + 1,
                    text=tokens[i].text,
                    char_start=tokens[i].char_start,
                    char_end=tokens[i].char_end,
                )
            )
    labels = spans_to_bio(tokens, spans)
    return TaggedSentence(tuple(tokens), tuple(labels), source_id)


def annotate_corpus(
    entries: Sequence[CveEntry],
) -> tuple[list[TaggedSentence], AnnotationReport]:
    """Label every entry's summary against its own linked CPE names.

    Unparsable CPE identifiers contribute nothing to the gazetteer and are
    tallied in ``unmatched_cpe_fields``.
    """
    report = AnnotationReport(sentences_in=len(entries))
    corpus: list[TaggedSentence] = []
    for entry in entries:
        names: list[CpeName] = []
        for uri in entry.cpe_uris:
            try:
                names.append(parse_cpe_uri(uri))
            except CpeError:
                report.unmatched_cpe_fields += 1
        sentence = annotate_sentence(
            tokenize(entry.summary), build_gazetteer(names), source_id=entry.cve_id
        )
        corpus.append(sentence)
        for lab in sentence.labels:
            if lab.prefix != "O":
                report.tokens_labeled_per_entity[lab.entity] = (
                    report.tokens_labeled_per_entity.get(lab.entity, 0) + 1
                )
    report.sentences_out = len(corpus)
    return corpus, report


#: A tagger hook maps tokens to one BIO label per token (strings or labels).
TaggerHook = Callable[[Sequence[Token]], Sequence["BioLabel | str"]]


def annotate_with_tagger(
    tokens: Sequence[Token], tagger: TaggerHook, source_id: str = ""
) -> TaggedSentence:
    """Label tokens with an arbitrary tagger, repairing any invalid BIO output.

    Transport errors from external taggers propagate to the caller, which
    should leave the sentence unlabeled and report it.
    """
    raw = tagger(tokens)
    if len(raw) != len(tokens):
        raise ValueError(f"tagger returned {len(raw)} labels for {len(tokens)} tokens")
    labels = [lab if isinstance(lab, BioLabel) else BioLabel.from_string(lab) for lab in raw]
    return TaggedSentence(tuple(tokens), tuple(repair_bio(labels)), source_id)
