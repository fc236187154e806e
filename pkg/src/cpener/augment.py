"""Label-preserving data augmentation by masked-token replacement.

New sentences are generated from sentences containing rare entities by
replacing a handful of O-labeled tokens with synonyms. Labels, sentence
length, and entity tokens are never touched, so every generated sentence is
a valid training row with the same entity annotations as its source.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .corpus import TaggedSentence, Token


class ProviderContractError(ValueError):
    """A synonym provider broke its contract (arity or token shape)."""


class ProviderTransportError(RuntimeError):
    """An external fill provider could not be reached."""


class SynonymProvider(Protocol):
    def fill(self, tokens: list[str], mask_positions: list[int]) -> list[str]:
        """Return one replacement token per masked position."""
        ...


@dataclass(frozen=True)
class AugmentConfig:
    mask_count: int = 7
    target_entities: frozenset[str] = frozenset({"edition", "vendor", "update"})
    multiplier: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_entities", frozenset(self.target_entities))
        if self.mask_count < 1:
            raise ValueError("mask_count must be >= 1")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")


@dataclass
class AugmentReport:
    requested: int = 0
    generated: int = 0
    no_ops: int = 0
    tokens_replaced: int = 0

    def to_json(self) -> dict:
        return {
            "requested": self.requested,
            "generated": self.generated,
            "no_ops": self.no_ops,
            "tokens_replaced": self.tokens_replaced,
        }


class IdentityProvider:
    """Returns the original tokens; useful for plumbing tests."""

    def fill(self, tokens: list[str], mask_positions: list[int]) -> list[str]:
        return [tokens[p] for p in mask_positions]


@dataclass
class DictionaryProvider:
    """Deterministic dictionary lookup; unknown tokens fall back to themselves."""

    synonyms: Mapping[str, Sequence[str]]

    def fill(self, tokens: list[str], mask_positions: list[int]) -> list[str]:
        out = []
        for p in mask_positions:
            options = self.synonyms.get(tokens[p].lower())
            out.append(options[0] if options else tokens[p])
        return out


@dataclass
class HttpFillProvider:
    """JSON-over-HTTP provider: {tokens, mask_positions} -> {replacements}."""

    url: str
    timeout: float = 10.0

    def fill(self, tokens: list[str], mask_positions: list[int]) -> list[str]:
        try:
            resp = httpx.post(
                self.url,
                json={"tokens": tokens, "mask_positions": mask_positions},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderTransportError(f"fill provider at {self.url}: {exc}") from exc
        return list(resp.json()["replacements"])


#: Small curated synonym table for common CVE summary vocabulary.
DEFAULT_SYNONYMS: dict[str, list[str]] = {
    "allows": ["permits"],
    "remote": ["distant"],
    "attackers": ["adversaries"],
    "attacker": ["adversary"],
    "via": ["through"],
    "crafted": ["malformed"],
    "execute": ["run"],
    "arbitrary": ["unrestricted"],
    "vulnerability": ["flaw"],
    "issue": ["flaw"],
    "buffer": ["memory"],
    "overflow": ["overrun"],
    "earlier": ["prior"],
    "cause": ["trigger"],
    "causes": ["triggers"],
    "denial": ["disruption"],
    "service": ["operation"],
    "code": ["instructions"],
    "user": ["client"],
    "users": ["clients"],
    "unspecified": ["unknown"],
    "information": ["data"],
    "obtain": ["acquire"],
    "sensitive": ["confidential"],
    "bypass": ["evade"],
    "inject": ["insert"],
    "requests": ["queries"],
    "request": ["query"],
    "crash": ["failure"],
    "corruption": ["damage"],
}


def select_target_sentences(
    corpus: Iterable[TaggedSentence], target_entities: Iterable[str]
) -> list[TaggedSentence]:
    """Sentences carrying at least one label of a target entity type."""
    targets = set(target_entities)
    return [
        s
        for s in corpus
        if any(lab.prefix != "O" and lab.entity in targets for lab in s.labels)
    ]


def _maskable_positions(sentence: TaggedSentence) -> list[int]:
    return [
        i
        for i, (tok, lab) in enumerate(zip(sentence.tokens, sentence.labels))
        if lab.prefix == "O" and not tok.is_pad
    ]


def augment_sentence(
    sentence: TaggedSentence,
    config: AugmentConfig,
    provider: SynonymProvider,
    index: int = 0,
) -> tuple[TaggedSentence, int]:
    """Generate one augmented copy of a sentence.

    Masks ``min(mask_count, #O-tokens)`` positions chosen uniformly at random
    from the O-labeled non-padding tokens (RNG seeded with
    ``config.seed XOR index`` so runs are reproducible and parallelizable).
    Labels are copied unchanged. Returns the new sentence and the number of
    replaced positions; zero means the sentence had nothing maskable.
    """
    if len(sentence) == 0:
        raise ValueError("cannot augment an empty sentence")
    source_id = f"aug:{index}"
    positions = _maskable_positions(sentence)
    k = min(config.mask_count, len(positions))
    if k == 0:
        return TaggedSentence(sentence.tokens, sentence.labels, source_id), 0
    rng = random.Random(config.seed ^ index)
    chosen = sorted(rng.sample(positions, k))
    texts = [t.text for t in sentence.tokens]
    replacements = provider.fill(texts, chosen)
    if len(replacements) != len(chosen):
        raise ProviderContractError(
            f"provider returned {len(replacements)} replacements for {len(chosen)} masks"
        )
    tokens = list(sentence.tokens)
    for pos, rep in zip(chosen, replacements):
        if not isinstance(rep, str) or not rep or any(c.isspace() for c in rep):
            raise ProviderContractError(f"bad replacement token {rep!r} at position {pos}")
        if rep != tokens[pos].text:
            tokens[pos] = Token(rep)
    return TaggedSentence(tuple(tokens), sentence.labels, source_id), k


def augment_corpus(
    selected: Sequence[TaggedSentence],
    config: AugmentConfig,
    provider: SynonymProvider,
) -> tuple[list[TaggedSentence], AugmentReport]:
    """Generate ``multiplier`` copies per selected sentence, dropping no-ops."""
    report = AugmentReport(requested=len(selected) * config.multiplier)
    out: list[TaggedSentence] = []
    for i, sentence in enumerate(selected):
        for j in range(config.multiplier):
            index = i * config.multiplier + j
            augmented, replaced = augment_sentence(sentence, config, provider, index=index)
            if replaced == 0:
                report.no_ops += 1
            else:
                out.append(augmented)
                report.tokens_replaced += replaced
    report.generated = len(out)
    return out, report


def multiplier_for_target(selected_count: int, target_total: int) -> int:
    """Smallest multiplier producing at least ``target_total`` sentences."""
    if selected_count < 1:
        return 1
    return max(1, -(-target_total // selected_count))


def merge_corpora(
    annotated: Sequence[TaggedSentence], augmented: Sequence[TaggedSentence]
) -> list[TaggedSentence]:
    """Concatenate, annotated rows first."""
    return list(annotated) + list(augmented)
