"""Token- and span-level evaluation for aligned gold/predicted corpora.

Headline metrics are token-level: per-class one-vs-rest confusion counts
(class membership by entity type, B and I pooled), micro metrics from the
pooled counts, macro F1 as the unweighted mean of per-class F1, and accuracy
as exact label agreement. Padding positions never count. Entity-span
exact-match metrics are reported alongside under distinct names.

Zero divisions yield 0.0 carrying ``defined=False``; nothing raises mid-report.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .annotate import GAZETTEER_ENTITIES, Gazetteer
from .corpus import (
    BioLabel,
    TaggedSentence,
    bio_to_spans,
    is_dotted_numeric,
    repair_bio,
    tokenize,
)


class AlignmentError(ValueError):
    """Gold and predicted corpora do not line up."""


class Ratio(float):
    """A float in [0, 1] that remembers whether its quotient was defined."""

    __slots__ = ("defined",)
    defined: bool

    def __new__(cls, value: float, defined: bool = True):
        r = super().__new__(cls, value)
        r.defined = defined
        return r


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def precision(c: ConfusionCounts) -> Ratio:
    denom = c.tp + c.fp
    return Ratio(c.tp / denom) if denom else Ratio(0.0, defined=False)


def recall(c: ConfusionCounts) -> Ratio:
    denom = c.tp + c.fn
    return Ratio(c.tp / denom) if denom else Ratio(0.0, defined=False)


def accuracy(c: ConfusionCounts) -> Ratio:
    denom = c.total
    return Ratio((c.tp + c.tn) / denom) if denom else Ratio(0.0, defined=False)


def f1(precision_value: float, recall_value: float) -> Ratio:
    denom = precision_value + recall_value
    if denom == 0:
        return Ratio(0.0, defined=False)
    return Ratio(2 * precision_value * recall_value / denom)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ErrorCase:
    sentence_id: str
    position: int
    gold_label: str
    pred_label: str
    category: str

    def __post_init__(self):
        if self.gold_label == self.pred_label:
            raise ValueError("an error case requires gold != pred")


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float
    span_precision: float
    span_recall: float
    span_f1: float
    token_count: int
    error_cases: tuple[ErrorCase, ...] = ()

    def to_json(self) -> dict:
        return {
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for name, m in sorted(self.per_class.items())
            },
            "macro_f1": self.macro_f1,
            "micro": {
                "precision": self.micro_precision,
                "recall": self.micro_recall,
                "f1": self.micro_f1,
            },
            "accuracy": self.accuracy,
            "span": {
                "precision": self.span_precision,
                "recall": self.span_recall,
                "f1": self.span_f1,
            },
            "token_count": self.token_count,
            "errors": [
                {
                    "sentence_id": e.sentence_id,
                    "position": e.position,
                    "gold_label": e.gold_label,
                    "pred_label": e.pred_label,
                    "category": e.category,
                }
                for e in self.error_cases
            ],
        }


def _check_alignment(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]):
    if len(gold) != len(pred):
        raise AlignmentError(f"corpus sizes differ: {len(gold)} gold vs {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            name = g.source_id or f"#{i}"
            raise AlignmentError(
                f"sentence {name}: {len(g)} gold tokens vs {len(p)} predicted"
            )


def _entity_of(label: BioLabel) -> str | None:
    return None if label.prefix == "O" else label.entity


def classification_report(
    gold: Sequence[TaggedSentence],
    pred: Sequence[TaggedSentence],
    raw_texts: Sequence[str] | None = None,
    evidence: Sequence[Gazetteer | None] | None = None,
) -> EvalReport:
    """Full evaluation of a predicted corpus against gold.

    When ``raw_texts`` is given, mismatches are additionally categorized by
    :func:`error_analysis` and included in the report.
    """
    _check_alignment(gold, pred)

    correct = 0
    total = 0
    class_counts: dict[str, dict[str, int]] = {}
    for g, p in zip(gold, pred):
        for tok, gl, pl in zip(g.tokens, g.labels, p.labels):
            if tok.is_pad:
                continue
            total += 1
            if gl == pl:
                correct += 1
            ge, pe = _entity_of(gl), _entity_of(pl)
            for entity in {ge, pe} - {None}:
                class_counts.setdefault(entity, {"tp": 0, "fp": 0, "fn": 0})
            if ge is not None and ge == pe:
                class_counts[ge]["tp"] += 1
            else:
                if pe is not None:
                    class_counts[pe]["fp"] += 1
                if ge is not None:
                    class_counts[ge]["fn"] += 1

    per_class: dict[str, ClassMetrics] = {}
    pooled_tp = pooled_fp = pooled_fn = 0
    for entity in sorted(class_counts):
        cc = class_counts[entity]
        rest = total - cc["tp"] - cc["fp"] - cc["fn"]
        counts = ConfusionCounts(cc["tp"], cc["fp"], cc["fn"], rest)
        p = precision(counts)
        r = recall(counts)
        per_class[entity] = ClassMetrics(p, r, f1(p, r), cc["tp"] + cc["fn"])
        pooled_tp += cc["tp"]
        pooled_fp += cc["fp"]
        pooled_fn += cc["fn"]

    macro = (
        Ratio(sum(m.f1 for m in per_class.values()) / len(per_class))
        if per_class
        else Ratio(0.0, defined=False)
    )
    pooled = ConfusionCounts(pooled_tp, pooled_fp, pooled_fn, 0)
    micro_p = precision(pooled)
    micro_r = recall(pooled)

    gold_spans, pred_spans = set(), set()
    for i, (g, p) in enumerate(zip(gold, pred)):
        mask = [not t.is_pad for t in g.tokens]
        g_tokens = [t for t, keep in zip(g.tokens, mask) if keep]
        g_labels = [lab for lab, keep in zip(g.labels, mask) if keep]
        p_labels = repair_bio([lab for lab, keep in zip(p.labels, mask) if keep])
        for s in bio_to_spans(repair_bio(g_labels), g_tokens):
            gold_spans.add((i, s.entity, s.token_start, s.token_end))
        for s in bio_to_spans(p_labels, g_tokens):
            pred_spans.add((i, s.entity, s.token_start, s.token_end))
    span_tp = len(gold_spans & pred_spans)
    span_counts = ConfusionCounts(
        span_tp, len(pred_spans) - span_tp, len(gold_spans) - span_tp, 0
    )
    span_p = precision(span_counts)
    span_r = recall(span_counts)

    errors: tuple[ErrorCase, ...] = ()
    if raw_texts is not None:
        errors = tuple(error_analysis(gold, pred, raw_texts, evidence))

    acc = Ratio(correct / total) if total else Ratio(0.0, defined=False)
    return EvalReport(
        per_class=per_class,
        macro_f1=macro,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=f1(micro_p, micro_r),
        accuracy=acc,
        span_precision=span_p,
        span_recall=span_r,
        span_f1=f1(span_p, span_r),
        token_count=total,
        error_cases=errors,
    )


# ---------------------------------------------------------------------------
# Error taxonomy
# ---------------------------------------------------------------------------

GROUND_TRUTH_SUSPECT = "ground_truth_suspect"
TOKENIZATION_MISMATCH = "tokenization_mismatch"
MODEL_ERROR = "model_error"


def _token_evidence(text: str, gaz: Gazetteer | None) -> set[str] | None:
    """Entity types this token could plausibly belong to; None means unknown."""
    if gaz is not None:
        low = text.lower()
        ev = {
            entity
            for entity in GAZETTEER_ENTITIES
            if any(low in term for term in gaz.terms_for(entity))
        }
        if is_dotted_numeric(text):
            ev.add("version")
        return ev
    # Without a gazetteer, only the obvious cases are decidable.
    if is_dotted_numeric(text):
        return {"version"}
    if not any(c.isalnum() for c in text):
        return set()
    return None


def _matches_evidence(label: BioLabel, text: str, gaz: Gazetteer | None) -> bool:
    ev = _token_evidence(text, gaz)
    if ev is None:
        return False
    if label.prefix == "O":
        return not ev
    return label.entity in ev


def error_analysis(
    gold: Sequence[TaggedSentence],
    pred: Sequence[TaggedSentence],
    raw_texts: Sequence[str],
    evidence: Sequence[Gazetteer | None] | None = None,
) -> list[ErrorCase]:
    """Categorize every gold/pred mismatch.

    A position whose gold token disagrees with a fresh tokenization of the
    raw text is a tokenization mismatch. Otherwise, if the prediction is
    consistent with the available evidence (linked-CPE gazetteer when given,
    else a punctuation-cannot-be-an-entity heuristic) while the gold label is
    not, the gold label itself is suspect. Everything else is a model error.
    """
    _check_alignment(gold, pred)
    if len(raw_texts) != len(gold):
        raise AlignmentError(f"{len(raw_texts)} raw texts for {len(gold)} sentences")
    cases: list[ErrorCase] = []
    for k, (g, p) in enumerate(zip(gold, pred)):
        retok = [t.text for t in tokenize(raw_texts[k])]
        gaz = evidence[k] if evidence is not None else None
        sid = g.source_id or f"#{k}"
        for i, (tok, gl, pl) in enumerate(zip(g.tokens, g.labels, p.labels)):
            if tok.is_pad or gl == pl:
                continue
            if i >= len(retok) or retok[i] != tok.text:
                category = TOKENIZATION_MISMATCH
            elif _matches_evidence(pl, tok.text, gaz) and not _matches_evidence(
                gl, tok.text, gaz
            ):
                category = GROUND_TRUTH_SUSPECT
            else:
                category = MODEL_ERROR
            cases.append(ErrorCase(sid, i, str(gl), str(pl), category))
    return cases


# ---------------------------------------------------------------------------
# Model comparison
# ---------------------------------------------------------------------------

METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


def _metric_row(report) -> dict[str, float]:
    if isinstance(report, EvalReport):
        return {
            "accuracy": float(report.accuracy),
            "precision": float(report.micro_precision),
            "recall": float(report.micro_recall),
            "f1": float(report.micro_f1),
        }
    row = {key: float(report[key]) for key in METRIC_KEYS}
    return row


def compare_models(reports: Mapping[str, "EvalReport | Mapping[str, float]"]) -> dict:
    """Tabulate metrics per model and mark the best value per column (ties share)."""
    if not reports:
        raise ValueError("at least one report is required")
    rows = {name: _metric_row(r) for name, r in reports.items()}
    best: dict[str, list[str]] = {}
    for key in METRIC_KEYS:
        top = max(row[key] for row in rows.values())
        best[key] = [name for name, row in rows.items() if row[key] == top]
    return {"models": rows, "best": best}


def render_comparison(table: dict) -> str:
    rows = table["models"]
    best = table["best"]
    width = max(len(name) for name in rows)
    lines = [f"{'model'.ljust(width)}  " + "  ".join(f"{k:>10}" for k in METRIC_KEYS)]
    for name, row in rows.items():
        cells = []
        for key in METRIC_KEYS:
            mark = "*" if name in best[key] else " "
            cells.append(f"{row[key]:9.4f}{mark}")
        lines.append(f"{name.ljust(width)}  " + "  ".join(cells))
    return "\n".join(lines)


def render_report(report: EvalReport) -> str:
    header = f"{'':>12}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'support':>8}"
    lines = [header]
    for name, m in sorted(report.per_class.items()):
        lines.append(
            f"{name:>12}  {m.precision:9.4f}  {m.recall:9.4f}  {m.f1:9.4f}  {m.support:8d}"
        )
    lines.append("")
    lines.append(
        f"{'micro':>12}  {report.micro_precision:9.4f}  {report.micro_recall:9.4f}"
        f"  {report.micro_f1:9.4f}"
    )
    lines.append(f"{'macro f1':>12}  {report.macro_f1:31.4f}")
    lines.append(f"{'accuracy':>12}  {report.accuracy:31.4f}")
    lines.append(
        f"{'span (exact)':>12}  {report.span_precision:9.4f}  {report.span_recall:9.4f}"
        f"  {report.span_f1:9.4f}"
    )
    return "\n".join(lines)
