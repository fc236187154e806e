"""Pipeline driver: ingest, clean, annotate, augment, merge, train, eval, predict, serve.

Every command validates its inputs, writes artifacts to the configured
paths, and prints a JSON summary on stdout. With fixed seeds, re-running a
command on unchanged inputs produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import annotate as annotate_mod
from . import augment as augment_mod
from . import corpus as corpus_mod
from . import evaluate as evaluate_mod
from . import nvd
from . import tagger as tagger_mod
from .service import ModelRegistry, RegisteredTagger, create_app, span_payload

CONFIG_ENV_VAR = "CPENER_CONFIG"

DEFAULT_RENAMES = {"application": "product", "hardware": "product", "os": "product"}


class CliError(Exception):
    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message)
        self.hint = hint


@dataclass
class PipelineConfig:
    feeds_dir: str = "feeds"
    corpus_dir: str = "corpus"
    model_dir: str = "models"
    max_len: int = corpus_mod.DEFAULT_MAX_LEN
    test_fraction: float = 0.18
    seed: int = 42
    mask_count: int = 7
    multiplier: int = 1
    target_entities: tuple[str, ...] = ("edition", "vendor", "update")
    epochs: int = 20

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        path = path or os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return cls()
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise CliError(f"unknown config keys: {unknown}")
        if "target_entities" in raw:
            raw["target_entities"] = tuple(raw["target_entities"])
        return cls(**raw)


def _require_file(path: Path, producer: str | None = None) -> Path:
    if not path.is_file():
        hint = f"run the `{producer}` command first" if producer else None
        raise CliError(f"missing input file: {path}", hint=hint)
    return path


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _read_corpus(path: Path, producer: str | None = None) -> list[corpus_mod.TaggedSentence]:
    return corpus_mod.read_conll(_require_file(path, producer).read_bytes(), strict=False)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

_FEED_YEAR = re.compile(r"(\d{4})")


def cmd_ingest(args, config: PipelineConfig) -> dict:
    feeds_dir = Path(args.feeds_dir or config.feeds_dir)
    if not feeds_dir.is_dir():
        raise CliError(f"feeds directory not found: {feeds_dir}")
    paths = sorted(p for p in feeds_dir.iterdir() if re.match(r"nvdcve-.*\.json(\.gz)?$", p.name))
    if not paths:
        raise CliError(f"no nvdcve-*.json[.gz] files in {feeds_dir}")
    per_year = []
    skipped = 0
    for path in paths:
        m = _FEED_YEAR.search(path.name)
        if not m:
            raise CliError(f"cannot infer the feed year from {path.name}")
        year = int(m.group(1))
        try:
            entries, skips = nvd.parse_cve_feed(nvd.read_feed_bytes(path), year)
        except nvd.FeedParseError as exc:
            raise CliError(f"{path.name}: {exc}") from exc
        per_year.append(entries)
        skipped += skips
    merged = nvd.merge_feeds(per_year)
    out = Path(args.out or Path(config.corpus_dir) / "entries.jsonl")
    _write(out, nvd.write_entries_jsonl(merged))
    return {
        "command": "ingest",
        "files": [p.name for p in paths],
        "entries": len(merged),
        "skipped": skipped,
        "out": str(out),
    }


def cmd_annotate(args, config: PipelineConfig) -> dict:
    entries_path = Path(args.entries or Path(config.corpus_dir) / "entries.jsonl")
    entries = nvd.read_entries_jsonl(_require_file(entries_path, "ingest").read_bytes())
    corpus, report = annotate_mod.annotate_corpus(entries)
    out = Path(args.out or Path(config.corpus_dir) / "annotated.conll")
    _write(out, corpus_mod.write_conll(corpus))
    summary = {
        "command": "annotate",
        "out": str(out),
        "report": report.to_json(),
    }
    if args.report:
        _write(Path(args.report), (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode())
        summary["report_path"] = args.report
    if args.sample:
        import random

        rng = random.Random(args.sample_seed)
        picks = rng.sample(range(len(corpus)), min(args.sample, len(corpus)))
        summary["sample"] = [
            {
                "source_id": corpus[i].source_id,
                "tokens": [t.text for t in corpus[i].tokens],
                "labels": [str(l) for l in corpus[i].labels],
            }
            for i in sorted(picks)
        ]
    return summary


def cmd_build_corpus(args, config: PipelineConfig) -> dict:
    src = Path(args.infile)
    corpus = _read_corpus(src)
    renames = dict(DEFAULT_RENAMES)
    if args.rename is not None:
        renames = {}
        for spec in args.rename:
            if "=" not in spec:
                raise CliError(f"bad --rename value (want old=new): {spec!r}")
            old, new = spec.split("=", 1)
            renames[old] = new
    keep = set(args.keep or corpus_mod.ENTITY_TYPES)
    cleaned = [corpus_mod.remap_labels(s, keep, renames) for s in corpus]
    if args.pad:
        cleaned = [corpus_mod.pad_or_trim(s, args.max_len or config.max_len) for s in cleaned]
    out = Path(args.out)
    _write(out, corpus_mod.write_conll(cleaned))
    stats = corpus_mod.compute_stats(cleaned, args.max_len or config.max_len)
    summary = {
        "command": "build-corpus",
        "out": str(out),
        "sentences": len(cleaned),
        "stats": stats.to_json(),
    }
    if args.stats:
        _write(Path(args.stats), (json.dumps(stats.to_json(), indent=2, sort_keys=True) + "\n").encode())
        summary["stats_path"] = args.stats
    return summary


def cmd_augment(args, config: PipelineConfig) -> dict:
    src = Path(args.infile or Path(config.corpus_dir) / "annotated.conll")
    corpus = _read_corpus(src, "annotate")
    targets = tuple(args.target_entities or config.target_entities)
    selected = augment_mod.select_target_sentences(corpus, targets)
    multiplier = args.multiplier or config.multiplier
    if args.target_count:
        multiplier = augment_mod.multiplier_for_target(len(selected), args.target_count)
    aug_config = augment_mod.AugmentConfig(
        mask_count=args.mask_count or config.mask_count,
        target_entities=frozenset(targets),
        multiplier=multiplier,
        seed=args.seed if args.seed is not None else config.seed,
    )
    provider = augment_mod.DictionaryProvider(augment_mod.DEFAULT_SYNONYMS)
    augmented, report = augment_mod.augment_corpus(selected, aug_config, provider)
    out = Path(args.out or Path(config.corpus_dir) / "augmented.conll")
    _write(out, corpus_mod.write_conll(augmented))
    return {
        "command": "augment",
        "selected": len(selected),
        "multiplier": multiplier,
        "out": str(out),
        "report": report.to_json(),
    }


def cmd_merge(args, config: PipelineConfig) -> dict:
    annotated = _read_corpus(
        Path(args.annotated or Path(config.corpus_dir) / "annotated.conll"), "annotate"
    )
    augmented = _read_corpus(
        Path(args.augmented or Path(config.corpus_dir) / "augmented.conll"), "augment"
    )
    merged = augment_mod.merge_corpora(annotated, augmented)
    out = Path(args.out or Path(config.corpus_dir) / "merged.conll")
    _write(out, corpus_mod.write_conll(merged))
    stats = corpus_mod.compute_stats(merged, config.max_len)
    summary = {
        "command": "merge",
        "annotated": len(annotated),
        "augmented": len(augmented),
        "merged": len(merged),
        "out": str(out),
        "stats": stats.to_json(),
    }
    if args.stats:
        _write(Path(args.stats), (json.dumps(stats.to_json(), indent=2, sort_keys=True) + "\n").encode())
        summary["stats_path"] = args.stats
    return summary


def cmd_train(args, config: PipelineConfig) -> dict:
    src = Path(args.corpus or Path(config.corpus_dir) / "merged.conll")
    corpus = _read_corpus(src, "merge")
    seed = args.seed if args.seed is not None else config.seed
    test_fraction = (
        args.test_fraction if args.test_fraction is not None else config.test_fraction
    )
    summary: dict = {"command": "train", "corpus": str(src), "sentences": len(corpus)}
    train_set = corpus
    if test_fraction > 0:
        train_set, test_set = corpus_mod.split_train_test(corpus, test_fraction, seed)
        test_out = Path(args.test_out or Path(config.corpus_dir) / "test.conll")
        _write(test_out, corpus_mod.write_conll(test_set))
        summary["test_out"] = str(test_out)
        summary["test_sentences"] = len(test_set)
        if args.train_out:
            _write(Path(args.train_out), corpus_mod.write_conll(train_set))
            summary["train_out"] = args.train_out
    train_config = tagger_mod.TrainConfig(
        epochs=args.epochs or config.epochs,
        seed=seed,
        shuffle=not args.no_shuffle,
    )
    model = tagger_mod.train(train_set, train_config)
    out = Path(args.out or Path(config.model_dir) / "model.json")
    _write(out, tagger_mod.save_model(model))
    summary.update(
        {
            "out": str(out),
            "train_sentences": len(train_set),
            "epochs": train_config.epochs,
            "seed": seed,
            "features": len(model.emissions),
            "final_epoch_mismatches": model.meta["mismatch_history"][-1],
        }
    )
    return summary


def _decode_corpus(model, corpus):
    pred = []
    for s in corpus:
        labels = tagger_mod.viterbi_decode(model, s.tokens)
        pred.append(corpus_mod.TaggedSentence(s.tokens, tuple(labels), s.source_id))
    return pred


def cmd_eval(args, config: PipelineConfig) -> dict:
    model_path = _require_file(
        Path(args.model or Path(config.model_dir) / "model.json"), "train"
    )
    try:
        model = tagger_mod.load_model(model_path.read_bytes())
    except tagger_mod.ModelFormatError as exc:
        raise CliError(f"{model_path}: {exc}") from exc
    gold = _read_corpus(Path(args.corpus or Path(config.corpus_dir) / "test.conll"), "train")
    pred = _decode_corpus(model, gold)
    raw_texts = [" ".join(t.text for t in s.tokens if not t.is_pad) for s in gold]
    report = evaluate_mod.classification_report(gold, pred, raw_texts=raw_texts)
    out = Path(args.out or Path(config.model_dir) / "report.json")
    _write(out, (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode())
    return {
        "command": "eval",
        "model": str(model_path),
        "sentences": len(gold),
        "out": str(out),
        "accuracy": report.accuracy,
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
        "span_f1": report.span_f1,
    }


def _build_tagger(kind: str, args, config: PipelineConfig) -> RegisteredTagger:
    if kind == "learned":
        path = _require_file(
            Path(args.model_path or Path(config.model_dir) / "model.json"), "train"
        )
        model = tagger_mod.load_model(path.read_bytes())
        return RegisteredTagger(
            name="learned",
            kind="learned",
            meta=model.meta,
            runner=lambda text: tagger_mod.predict(text, "learned", model),
        )
    if kind == "gazetteer":
        if args.cpes:
            names = [nvd.parse_cpe_uri(u) for u in args.cpes]
        elif args.cpe_dict:
            names = nvd.read_cpe_dictionary(_require_file(Path(args.cpe_dict)).read_bytes())
        else:
            raise CliError("the gazetteer tagger needs --cpes or --cpe-dict")
        gaz = annotate_mod.build_gazetteer(names)
        return RegisteredTagger(
            name="gazetteer",
            kind="gazetteer",
            meta={"cpe_names": len(names)},
            runner=lambda text: tagger_mod.predict(text, "gazetteer", gaz),
        )
    if kind == "external":
        if not args.external_url:
            raise CliError("the external tagger needs --external-url")
        client = tagger_mod.HttpTagger(args.external_url)
        return RegisteredTagger(
            name="external",
            kind="external",
            meta={"url": args.external_url},
            runner=lambda text: tagger_mod.predict(text, "external", client),
        )
    raise CliError(f"unknown tagger kind: {kind!r}")


def cmd_predict(args, config: PipelineConfig) -> dict:
    tagger = _build_tagger(args.model, args, config)
    try:
        spans = tagger.runner(args.text)
    except tagger_mod.ExternalTaggerError as exc:
        raise CliError(str(exc)) from exc
    return {
        "command": "predict",
        "model": tagger.name,
        "spans": span_payload(args.text, spans),
    }


def build_registry(args, config: PipelineConfig) -> ModelRegistry:
    taggers = []
    if args.model_path:
        taggers.append(_build_tagger("learned", args, config))
    if args.cpes or args.cpe_dict:
        taggers.append(_build_tagger("gazetteer", args, config))
    if args.external_url:
        taggers.append(_build_tagger("external", args, config))
    if not taggers:
        raise CliError(
            "no taggers configured; pass --model-path, --cpe-dict/--cpes, or --external-url"
        )
    return ModelRegistry(taggers)


def cmd_serve(args, config: PipelineConfig) -> dict:
    registry = build_registry(args, config)
    stats = None
    if args.corpus:
        stats = corpus_mod.compute_stats(_read_corpus(Path(args.corpus)), config.max_len)
    reloader = None
    if args.allow_reload:
        reloader = lambda: build_registry(args, config).snapshot().values()
    app = create_app(
        registry, corpus_stats=stats, max_text_len=args.max_text_len, reloader=reloader
    )
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return {"command": "serve", "host": args.host, "port": args.port}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpener",
        description="CPE entity identification pipeline for CVE summary text",
    )
    parser.add_argument("--config", help="path to a JSON pipeline config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse NVD feed files into line-JSON entries")
    p.add_argument("--feeds-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("annotate", help="label entries against their linked CPE names")
    p.add_argument("--entries")
    p.add_argument("--out")
    p.add_argument("--report", help="also write the annotation report JSON here")
    p.add_argument("--sample", type=int, default=0, help="include N random sentences for review")
    p.add_argument("--sample-seed", type=int, default=0)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("build-corpus", help="apply the label policy to a corpus file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep", nargs="*", help="entity types to keep (default: the five)")
    p.add_argument("--rename", nargs="*", help="old=new entity renames")
    p.add_argument("--pad", action="store_true", help="pad/trim every sentence to --max-len")
    p.add_argument("--max-len", type=int)
    p.add_argument("--stats", help="write corpus statistics JSON here")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("augment", help="generate label-preserving augmented sentences")
    p.add_argument("--in", dest="infile")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--mask-count", type=int)
    p.add_argument("--multiplier", type=int)
    p.add_argument("--target-count", type=int, help="derive the multiplier from a target size")
    p.add_argument("--target-entities", nargs="*")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("merge", help="concatenate annotated and augmented corpora")
    p.add_argument("--annotated")
    p.add_argument("--augmented")
    p.add_argument("--out")
    p.add_argument("--stats")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("train", help="train the sequence tagger")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--test-out")
    p.add_argument("--train-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model against a gold corpus")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag one text and print the spans")
    p.add_argument("--text", required=True)
    p.add_argument("--model", choices=("learned", "gazetteer", "external"), default="gazetteer")
    p.add_argument("--model-path")
    p.add_argument("--cpes", nargs="*", help="CPE formatted strings for the gazetteer")
    p.add_argument("--cpe-dict", help="file with one CPE formatted string per line")
    p.add_argument("--external-url")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)
    p.add_argument("--model-path")
    p.add_argument("--cpes", nargs="*")
    p.add_argument("--cpe-dict")
    p.add_argument("--external-url")
    p.add_argument("--corpus", help="corpus file backing GET /corpus/stats")
    p.add_argument("--max-text-len", type=int, default=10_000)
    p.add_argument(
        "--allow-reload",
        action="store_true",
        help="expose POST /models/reload to re-read model files from disk",
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = PipelineConfig.load(args.config)
        summary = args.func(args, config)
    except CliError as exc:
        error = {"error": str(exc)}
        if exc.hint:
            error["hint"] = exc.hint
        print(json.dumps(error, sort_keys=True))
        return 1
    except (corpus_mod.ConllParseError, nvd.CpeError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}, sort_keys=True))
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
