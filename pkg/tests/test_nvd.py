import gzip
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpener.nvd import (
    CpeName,
    CveEntry,
    FeedParseError,
    MalformedCpeError,
    UnsupportedCpeVersionError,
    format_cpe_uri,
    merge_feeds,
    parse_cpe_uri,
    parse_cve_feed,
    read_entries_jsonl,
    read_feed_bytes,
    write_entries_jsonl,
)
from synthdata import feed_doc, feed_item


def split_unescaped_oracle(s):
    """Independent splitter for checking component counts."""
    parts, buf, escaped = [], "", False
    for c in s:
        if escaped:
            buf += c
            escaped = False
        elif c == "\\":
            buf += c
            escaped = True
        elif c == ":":
            parts.append(buf)
            buf = ""
        else:
            buf += c
    parts.append(buf)
    return parts


class TestParseCpeUri:
    def test_shockwave_example(self):
        uri = "cpe:2.3:a:adobe:shockwave_player:11.5.9.615:*:*:*:*:*:*:*"
        assert len(split_unescaped_oracle(uri)) == 13
        name = parse_cpe_uri(uri)
        assert name.part == "a"
        assert name.vendor == "adobe"
        assert name.product == "shockwave_player"
        assert name.version == "11.5.9.615"
        assert name.update == "*"
        assert name.edition == "*"
        assert name.language == "*"

    def test_round_trip_identity(self):
        uri = "cpe:2.3:a:v:p:1:*:*:*:*:*:*:*"
        assert format_cpe_uri(parse_cpe_uri(uri)) == uri

    def test_legacy_uri_rejected(self):
        with pytest.raises(UnsupportedCpeVersionError):
            parse_cpe_uri("cpe:/a:old:style")

    def test_wrong_component_count_names_count(self):
        with pytest.raises(MalformedCpeError, match="found 10"):
            parse_cpe_uri("cpe:2.3:a:v:p:1:*:*:*:*")

    def test_escaped_colon_does_not_split(self):
        uri = "cpe:2.3:a:ven\\:dor:p:1:*:*:*:*:*:*:*"
        name = parse_cpe_uri(uri)
        assert name.vendor == "ven:dor"
        assert format_cpe_uri(name) == uri

    def test_bad_part_is_malformed(self):
        with pytest.raises(MalformedCpeError):
            parse_cpe_uri("cpe:2.3:x:v:p:1:*:*:*:*:*:*:*")


class TestFormatCpeUri:
    def test_all_wildcards(self):
        assert format_cpe_uri(CpeName(part="a")) == "cpe:2.3:a:*:*:*:*:*:*:*:*:*:*"

    def test_vendor_with_colon_escapes_and_round_trips(self):
        name = CpeName(part="a", vendor="a:b")
        uri = format_cpe_uri(name)
        assert "a\\:b" in uri
        assert parse_cpe_uri(uri) == name

    @settings(max_examples=100, deadline=None)
    @given(
        st.builds(
            CpeName,
            part=st.sampled_from(["a", "h", "o", "*"]),
            vendor=st.text(
                alphabet=st.sampled_from("abc_.:\\*-09"), min_size=1, max_size=8
            ),
            product=st.text(
                alphabet=st.sampled_from("xyz_.:\\*-19"), min_size=1, max_size=8
            ),
            version=st.text(alphabet=st.sampled_from("0123456789."), min_size=1, max_size=8),
            update=st.sampled_from(["*", "sp1", "beta", "-"]),
            edition=st.sampled_from(["*", "pro", "lite"]),
            language=st.sampled_from(["*", "en", "fr"]),
        )
    )
    def test_randomized_round_trip(self, name):
        assert parse_cpe_uri(format_cpe_uri(name)) == name

    def test_extras_preserved_verbatim(self):
        uri = "cpe:2.3:a:v:p:1:*:*:*:sw:tsw:thw:other"
        name = parse_cpe_uri(uri)
        assert name.extras == ("sw", "tsw", "thw", "other")
        assert format_cpe_uri(name) == uri


FIXTURE_3_ITEMS = feed_doc(
    [
        feed_item(
            "CVE-2021-1001",
            "Buffer overflow in Adobe Shockwave Player before 11.6 .",
            [
                "cpe:2.3:a:adobe:shockwave_player:11.5.9.615:*:*:*:*:*:*:*",
                "cpe:2.3:a:adobe:shockwave_player:11.5.9.615:*:*:*:*:*:*:*",
            ],
        ),
        feed_item(
            "CVE-2021-1002",
            "SQL injection in Example Product 2.0 allows remote attackers to run queries .",
            [
                "cpe:2.3:a:example:product:2.0:*:*:*:*:*:*:*",
                "cpe:2.3:o:example:platform:1.0:*:*:*:*:*:*:*",
            ],
            nested=True,
        ),
        feed_item(
            "CVE-2021-1003",
            "Cross-site scripting in Sample App 3.1 .",
            ["cpe:2.3:a:sample:app:3.1:*:*:*:*:*:*:*"],
        ),
    ]
)


class TestParseCveFeed:
    def test_empty_feed(self):
        entries, skipped = parse_cve_feed(json.dumps(feed_doc([])).encode(), 2021)
        assert entries == []
        assert skipped == 0

    def test_duplicate_uris_deduplicated(self):
        doc = feed_doc(
            [
                feed_item(
                    "CVE-2021-0001",
                    "Something broke .",
                    ["cpe:2.3:a:v:p:1:*:*:*:*:*:*:*", "cpe:2.3:a:v:p:1:*:*:*:*:*:*:*"],
                )
            ]
        )
        entries, _ = parse_cve_feed(json.dumps(doc).encode(), 2021)
        assert entries[0].cpe_uris == ("cpe:2.3:a:v:p:1:*:*:*:*:*:*:*",)

    def test_three_item_fixture(self):
        raw = json.dumps(FIXTURE_3_ITEMS).encode()
        entries, skipped = parse_cve_feed(raw, 2021)
        assert skipped == 0
        assert [e.cve_id for e in entries] == ["CVE-2021-1001", "CVE-2021-1002", "CVE-2021-1003"]
        assert entries[0].cpe_uris == (
            "cpe:2.3:a:adobe:shockwave_player:11.5.9.615:*:*:*:*:*:*:*",
        )
        assert entries[1].cpe_uris == (
            "cpe:2.3:a:example:product:2.0:*:*:*:*:*:*:*",
            "cpe:2.3:o:example:platform:1.0:*:*:*:*:*:*:*",
        )
        assert entries[1].summary.startswith("SQL injection")
        assert all(e.published_year == 2021 for e in entries)

    def test_uris_never_fabricated(self):
        raw = json.dumps(FIXTURE_3_ITEMS).encode()
        entries, _ = parse_cve_feed(raw, 2021)
        text = raw.decode()
        for e in entries:
            for uri in e.cpe_uris:
                assert uri in text

    def test_missing_description_skipped(self):
        item = feed_item("CVE-2021-0002", "placeholder", [])
        item["cve"]["description"]["description_data"] = [
            {"lang": "es", "value": "solo espanol"}
        ]
        entries, skipped = parse_cve_feed(json.dumps(feed_doc([item])).encode(), 2021)
        assert entries == []
        assert skipped == 1

    def test_malformed_json_reports_offset(self):
        with pytest.raises(FeedParseError) as err:
            parse_cve_feed(b'{"CVE_Items": [', 2021)
        assert err.value.byte_offset >= 0
        assert "byte offset" in str(err.value)

    def test_gzip_feed_file(self, tmp_path):
        raw = json.dumps(FIXTURE_3_ITEMS).encode()
        path = tmp_path / "nvdcve-1.1-2021.json.gz"
        path.write_bytes(gzip.compress(raw))
        assert read_feed_bytes(path) == raw


def _entry(cve_id, year):
    return CveEntry(cve_id=cve_id, summary="text .", cpe_uris=(), published_year=year)


class TestMergeFeeds:
    def test_two_years_sorted(self):
        a = [_entry("CVE-2020-0002", 2020), _entry("CVE-2020-0001", 2020)]
        b = [_entry("CVE-2019-0009", 2019)]
        merged = merge_feeds([a, b])
        assert [e.cve_id for e in merged] == ["CVE-2019-0009", "CVE-2020-0001", "CVE-2020-0002"]

    def test_duplicate_id_keeps_later_year(self):
        a = [_entry("CVE-2019-0001", 2019)]
        b = [CveEntry("CVE-2019-0001", "updated text .", (), 2020)]
        merged = merge_feeds([a, b])
        assert len(merged) == 1
        assert merged[0].published_year == 2020
        assert merged[0].summary == "updated text ."

    def test_matches_brute_force_sort(self):
        rng = random.Random(5)
        years = {}
        for year in (2019, 2020, 2021):
            years[year] = [
                _entry(f"CVE-{year}-{rng.randrange(1000, 99999)}", year) for _ in range(25)
            ]
        lists = list(years.values())
        merged = merge_feeds(lists)
        flat = {}
        for lst in lists:
            for e in lst:
                cur = flat.get(e.cve_id)
                if cur is None or e.published_year >= cur.published_year:
                    flat[e.cve_id] = e
        expected = sorted(flat.values(), key=lambda e: (e.published_year, e.cve_id))
        assert merged == expected
        assert len(merged) == len({e.cve_id for lst in lists for e in lst})


class TestEntriesJsonl:
    def test_round_trip(self):
        entries = [
            CveEntry("CVE-2021-1234", "Some text .", ("cpe:2.3:a:v:p:1:*:*:*:*:*:*:*",), 2021),
            CveEntry("CVE-2020-0007", "Unicode é text .", (), 2020),
        ]
        assert read_entries_jsonl(write_entries_jsonl(entries)) == entries

    def test_field_layout(self):
        entries = [CveEntry("CVE-2021-1234", "t .", (), 2021)]
        obj = json.loads(write_entries_jsonl(entries).decode().splitlines()[0])
        assert list(obj) == ["cve_id", "summary", "cpe_uris", "published_year"]

    def test_empty(self):
        assert write_entries_jsonl([]) == b""
        assert read_entries_jsonl(b"") == []


class TestCveEntryInvariants:
    def test_bad_id_rejected(self):
        with pytest.raises(ValueError):
            CveEntry("CVE-21-1", "text", (), 2021)

    def test_blank_summary_rejected(self):
        with pytest.raises(ValueError):
            CveEntry("CVE-2021-1234", "   ", (), 2021)
