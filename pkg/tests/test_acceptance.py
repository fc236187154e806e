"""Acceptance suite: one test per release criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Thresholds and loop counts are pinned here, not configurable.
"""

import json
import random
from contextlib import contextmanager

import pytest

from cpener import cli
from cpener.annotate import annotate_sentence, build_gazetteer
from cpener.augment import (
    AugmentConfig,
    DictionaryProvider,
    DEFAULT_SYNONYMS,
    augment_corpus,
    merge_corpora,
    select_target_sentences,
)
from cpener.corpus import (
    DEFAULT_MAX_LEN,
    ENTITY_TYPES,
    LABEL_STRINGS,
    OUTSIDE,
    BioLabel,
    TaggedSentence,
    Token,
    bio_to_spans,
    compute_stats,
    is_bio_valid,
    pad_or_trim,
    repair_bio,
    spans_to_bio,
    split_train_test,
    tokenize,
)
from cpener.evaluate import classification_report, error_analysis, f1
from cpener.nvd import format_cpe_uri, parse_cpe_uri
from cpener.tagger import (
    TrainConfig,
    cpe_reconstruct,
    train,
    viterbi_decode,
)
from synthdata import (
    fixture_feeds,
    random_corpus,
    random_spans,
    template_corpus,
    template_tagged,
)
from test_tagger import brute_force_decode, random_model


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL")
        raise
    print(f"[acceptance] {name}: PASS")


def test_metric_self_consistency_with_published_rows():
    with criterion("metric self-consistency"):
        assert abs(f1(0.9483, 0.9614) - 0.9548) <= 0.0001
        assert abs(f1(0.9471, 0.9615) - 0.9543) <= 0.0001


def test_metric_oracle_suite():
    with criterion("metric oracle suite (1000 corpora)"):
        rng = random.Random(2024)
        for _ in range(1000):
            gold = random_corpus(rng, rng.randint(1, 20), max_len=30)
            pred = []
            for s in gold:
                labels = [
                    rng.choice(
                        [lab, OUTSIDE, BioLabel("B", rng.choice(ENTITY_TYPES))]
                    )
                    for lab in s.labels
                ]
                pred.append(
                    TaggedSentence(s.tokens, tuple(repair_bio(labels)), s.source_id)
                )
            report = classification_report(gold, pred)

            total = correct = 0
            counts: dict[str, dict[str, int]] = {}
            for g, p in zip(gold, pred):
                for gl, pl in zip(g.labels, p.labels):
                    total += 1
                    correct += gl == pl
                    ge = None if gl.prefix == "O" else gl.entity
                    pe = None if pl.prefix == "O" else pl.entity
                    for e in {ge, pe} - {None}:
                        counts.setdefault(e, dict(tp=0, fp=0, fn=0))
                    if ge is not None and ge == pe:
                        counts[ge]["tp"] += 1
                    else:
                        if pe is not None:
                            counts[pe]["fp"] += 1
                        if ge is not None:
                            counts[ge]["fn"] += 1
            assert report.accuracy == (correct / total if total else 0.0)
            tp = sum(c["tp"] for c in counts.values())
            fp = sum(c["fp"] for c in counts.values())
            fn = sum(c["fn"] for c in counts.values())
            expected_p = tp / (tp + fp) if tp + fp else 0.0
            expected_r = tp / (tp + fn) if tp + fn else 0.0
            assert report.micro_precision == expected_p
            assert report.micro_recall == expected_r
            if counts:
                f1s = []
                for entity in sorted(counts):
                    c = counts[entity]
                    p = c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 0.0
                    r = c["tp"] / (c["tp"] + c["fn"]) if c["tp"] + c["fn"] else 0.0
                    f1s.append(2 * p * r / (p + r) if p + r else 0.0)
                assert report.macro_f1 == sum(f1s) / len(f1s)


def test_viterbi_exactness_against_exhaustive_argmax():
    with criterion("Viterbi exactness (200 models, lengths 0..6)"):
        rng = random.Random(31337)
        vocab = ["adobe", "player", "run", "the", "1.2", "fix", "X"]
        for model_index in range(200):
            model = random_model(rng, vocab)
            for length in range(0, 7):
                texts = [rng.choice(vocab) for _ in range(length)]
                got = [str(l) for l in viterbi_decode(model, texts)]
                assert got == brute_force_decode(model, texts), (model_index, texts)
                assert is_bio_valid([BioLabel.from_string(s) for s in got])


def test_bio_round_trip_and_repair_idempotence():
    with criterion("BIO round-trip and repair idempotence (10k each)"):
        rng = random.Random(99)
        for _ in range(10_000):
            tokens = [Token(f"w{i}") for i in range(rng.randint(1, 14))]
            spans = random_spans(rng, tokens)
            labels = spans_to_bio(tokens, spans)
            decoded = bio_to_spans(labels, tokens)
            key = lambda s: s.token_start
            assert sorted(decoded, key=key) == sorted(spans, key=key)
        all_labels = [BioLabel.from_string(s) for s in LABEL_STRINGS]
        for _ in range(10_000):
            seq = [rng.choice(all_labels) for _ in range(rng.randint(0, 14))]
            once = repair_bio(seq)
            assert is_bio_valid(once)
            assert repair_bio(once) == once


def test_padding_and_trimming_contract():
    with criterion("padding/trimming and the published length fraction"):
        rng = random.Random(5)
        for _ in range(300):
            sentence = random_corpus(rng, 1, max_len=12)[0]
            out = pad_or_trim(sentence)
            assert len(out) == DEFAULT_MAX_LEN
        long_tokens = tuple(Token(f"t{i}") for i in range(300))
        out = pad_or_trim(TaggedSentence(long_tokens, (OUTSIDE,) * 300, "x"))
        assert len(out) == DEFAULT_MAX_LEN

        corpus = []
        for i in range(9396):
            corpus.append(
                TaggedSentence((Token("w"),) * 100, (OUTSIDE,) * 100, f"a{i}")
            )
        for i in range(604):
            corpus.append(
                TaggedSentence((Token("w"),) * 200, (OUTSIDE,) * 200, f"b{i}")
            )
        assert compute_stats(corpus, 128).fraction_below_max_len == 0.9396


def _augmentation_fixture():
    """13,288 sentences carrying a target entity plus non-target filler."""
    rng = random.Random(424242)
    targets = ("edition", "vendor", "update")
    corpus = []
    for i in range(13_288):
        entity = targets[i % 3]
        texts = ["the", "issue", "in", f"name{i % 97}", "affects", "builds", "."]
        labels = [OUTSIDE] * len(texts)
        pos = rng.randrange(len(texts))
        labels[pos] = BioLabel("B", entity)
        corpus.append(
            TaggedSentence(tuple(Token(t) for t in texts), tuple(labels), f"t{i}")
        )
    for i in range(2_000):
        texts = ["unrelated", "report", f"case{i % 53}", "."]
        labels = [OUTSIDE] * len(texts)
        if i % 2:
            labels[0] = BioLabel("B", "product")
            labels = repair_bio(labels)
        corpus.append(
            TaggedSentence(tuple(Token(t) for t in texts), tuple(labels), f"f{i}")
        )
    rng.shuffle(corpus)
    return corpus, frozenset(targets)


def test_augmentation_safety():
    with criterion("augmentation safety on a 13,288-sentence selection"):
        corpus, targets = _augmentation_fixture()
        selected = select_target_sentences(corpus, targets)
        assert len(selected) == 13_288
        config = AugmentConfig(mask_count=7, target_entities=targets, multiplier=1, seed=77)
        provider = DictionaryProvider(DEFAULT_SYNONYMS)
        augmented, report = augment_corpus(selected, config, provider)
        assert report.generated == len(augmented)
        by_index = {int(s.source_id.split(":")[1]): s for s in augmented}
        for n, out in by_index.items():
            source = selected[n]
            assert out.labels == source.labels
            assert len(out) == len(source)
            for tok, old, lab in zip(out.tokens, source.tokens, source.labels):
                if tok.text != old.text:
                    assert lab == OUTSIDE
        merged = merge_corpora(corpus, augmented)
        before = compute_stats(corpus).tokens_per_entity
        after = compute_stats(merged).tokens_per_entity
        for entity in targets:
            assert after[entity] > before[entity]


def test_cpe_round_trip_and_reconstruction(cpe_sample_lines):
    with criterion("CPE round-trip and reconstruction"):
        rng = random.Random(1001)
        alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_.:\\*-"
        from cpener.nvd import CpeName

        for _ in range(1000):
            name = CpeName(
                part=rng.choice(["a", "h", "o", "*"]),
                vendor="".join(rng.choice(alphabet) for _ in range(rng.randint(1, 10))),
                product="".join(rng.choice(alphabet) for _ in range(rng.randint(1, 10))),
                version="".join(rng.choice("0123456789.") for _ in range(rng.randint(1, 8))),
                update=rng.choice(["*", "sp1", "beta", "-"]),
                edition=rng.choice(["*", "pro"]),
                language=rng.choice(["*", "en"]),
            )
            assert parse_cpe_uri(format_cpe_uri(name)) == name

        dictionary = []
        for line in cpe_sample_lines:
            name = parse_cpe_uri(line)
            assert format_cpe_uri(name) == line
            dictionary.append(name)
        assert len(dictionary) == 500

        fixtures = [
            n
            for n in dictionary
            if "_" not in n.vendor
            and "_" not in n.product
            and n.vendor != n.product
            and n.version.replace(".", "").isdigit()
        ]
        assert len(fixtures) >= 50
        rng = random.Random(1002)
        for source in fixtures:
            sentence = template_tagged(source, rng, "probe")
            text = " ".join(t.text for t in sentence.tokens)
            annotated = annotate_sentence(tokenize(text), build_gazetteer([source]))
            spans = bio_to_spans(annotated.labels, annotated.tokens)
            matches = cpe_reconstruct(spans, dictionary)
            assert any(m.verified and m.name == source for m in matches), source


@pytest.fixture(scope="module")
def cpe_sample_lines():
    from pathlib import Path

    path = Path(__file__).parent / "data" / "cpe_sample.txt"
    return path.read_text(encoding="utf-8").splitlines()


def test_desk_scale_training_reaches_thresholds():
    with criterion("desk-scale training (2000 sentences, 20 epochs)"):
        corpus, _ = template_corpus(2000, seed=8080)
        entity_kinds = {
            lab.entity for s in corpus for lab in s.labels if lab.prefix != "O"
        }
        assert entity_kinds == set(ENTITY_TYPES)
        train_set, test_set = split_train_test(corpus, 0.2, seed=42)
        assert len(train_set) == 1600 and len(test_set) == 400
        model = train(train_set, TrainConfig(epochs=20, seed=42))
        pred = [
            TaggedSentence(s.tokens, tuple(viterbi_decode(model, s.tokens)), s.source_id)
            for s in test_set
        ]
        report = classification_report(test_set, pred)
        print(
            f"  held-out micro F1 {report.micro_f1:.4f}, span F1 {report.span_f1:.4f}"
        )
        assert report.micro_f1 >= 0.90
        assert report.span_f1 >= 0.85


def _run_pipeline_into(workdir, feeds_dir):
    paths = {
        "entries": workdir / "entries.jsonl",
        "annotated": workdir / "annotated.conll",
        "augmented": workdir / "augmented.conll",
        "merged": workdir / "merged.conll",
        "stats": workdir / "stats.json",
        "model": workdir / "model.json",
        "test": workdir / "test.conll",
        "report": workdir / "report.json",
    }
    commands = [
        ["ingest", "--feeds-dir", str(feeds_dir), "--out", str(paths["entries"])],
        ["annotate", "--entries", str(paths["entries"]), "--out", str(paths["annotated"])],
        [
            "augment",
            "--in", str(paths["annotated"]),
            "--out", str(paths["augmented"]),
            "--seed", "13",
            "--multiplier", "2",
        ],
        [
            "merge",
            "--annotated", str(paths["annotated"]),
            "--augmented", str(paths["augmented"]),
            "--out", str(paths["merged"]),
            "--stats", str(paths["stats"]),
        ],
        [
            "train",
            "--corpus", str(paths["merged"]),
            "--out", str(paths["model"]),
            "--epochs", "5",
            "--seed", "42",
            "--test-fraction", "0.2",
            "--test-out", str(paths["test"]),
        ],
        [
            "eval",
            "--model", str(paths["model"]),
            "--corpus", str(paths["test"]),
            "--out", str(paths["report"]),
        ],
    ]
    for argv in commands:
        assert cli.main(argv) == 0
    return paths


def test_pipeline_determinism_on_100_cve_fixture(tmp_path, capsys):
    with criterion("pipeline determinism (100-CVE fixture, two runs)"):
        feeds, _ = fixture_feeds(n=100, seed=4242)
        feeds_dir = tmp_path / "feeds"
        feeds_dir.mkdir()
        for year, doc in feeds.items():
            (feeds_dir / f"nvdcve-1.1-{year}.json").write_text(json.dumps(doc))
        run_a = tmp_path / "a"
        run_b = tmp_path / "b"
        run_a.mkdir()
        run_b.mkdir()
        paths_a = _run_pipeline_into(run_a, feeds_dir)
        paths_b = _run_pipeline_into(run_b, feeds_dir)
        capsys.readouterr()
        for key, path in paths_a.items():
            assert path.read_bytes() == paths_b[key].read_bytes(), key


def test_error_analysis_taxonomy_fixture():
    with criterion("error-analysis taxonomy (two published cases)"):
        def sent(texts, labels):
            return TaggedSentence(
                tuple(Token(t) for t in texts),
                tuple(BioLabel.from_string(l) for l in labels),
                "fixture",
            )

        # Case 1: gold labels "." as B-vendor, the model says O.
        raw1 = "Integer overflow in . SP3 allows remote attackers"
        tokens1 = ["Integer", "overflow", "in", ".", "SP3", "allows", "remote", "attackers"]
        gold1 = sent(tokens1, ["O", "O", "O", "B-vendor", "O", "O", "O", "O"])
        pred1 = sent(tokens1, ["O", "O", "O", "O", "O", "O", "O", "O"])

        # Case 2: the dataset kept ".." as one token; fresh tokenization splits it.
        raw2 = "Jenkins 2 .. 218 and earlier"
        tokens2 = ["Jenkins", "2", "..", "218", "and", "earlier"]
        gold2 = sent(tokens2, ["O", "O", "O", "O", "O", "O"])
        pred2 = sent(tokens2, ["O", "O", "B-version", "O", "O", "O"])

        cases = error_analysis([gold1, gold2], [pred1, pred2], [raw1, raw2])
        assert len(cases) == 2
        assert cases[0].category == "ground_truth_suspect"
        assert cases[0].gold_label == "B-vendor"
        assert cases[1].category == "tokenization_mismatch"
