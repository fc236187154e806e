"""NVD CVE feed parsing and CPE 2.3 identifier handling.

Feeds are the ``nvdcve-1.1-YYYY.json`` documents (optionally gzipped). CPE
identifiers are the colon-delimited ``cpe:2.3:`` formatted strings; the
legacy ``cpe:/`` form is rejected.
"""

from __future__ import annotations

import gzip
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class FeedParseError(ValueError):
    """The feed document is not well-formed JSON."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class CpeError(ValueError):
    """Base class for CPE identifier errors."""


class UnsupportedCpeVersionError(CpeError):
    """The identifier is not in the 2.3 formatted-string form."""


class MalformedCpeError(CpeError):
    """The identifier has the 2.3 prefix but a bad component layout."""


_CVE_ID = re.compile(r"CVE-\d{4}-\d{4,}")
_PARTS = ("a", "h", "o", "*")


@dataclass(frozen=True)
class CveEntry:
    """One CVE record: id, summary text, linked CPE identifiers."""

    cve_id: str
    summary: str
    cpe_uris: tuple[str, ...]
    published_year: int

    def __post_init__(self):
        object.__setattr__(self, "cpe_uris", tuple(self.cpe_uris))
        if not _CVE_ID.fullmatch(self.cve_id):
            raise ValueError(f"bad CVE id: {self.cve_id!r}")
        if not self.summary.strip():
            raise ValueError(f"empty summary for {self.cve_id}")


@dataclass(frozen=True)
class CpeName:
    """A structured CPE identity. Any field may hold the wildcard ``*``.

    The four extended 2.3 components (sw_edition, target_sw, target_hw,
    other) are carried verbatim in ``extras`` so formatting is lossless.
    """

    part: str = "*"
    vendor: str = "*"
    product: str = "*"
    version: str = "*"
    update: str = "*"
    edition: str = "*"
    language: str = "*"
    cpe_version: str = "2.3"
    extras: tuple[str, str, str, str] = ("*", "*", "*", "*")

    def __post_init__(self):
        if self.part not in _PARTS:
            raise ValueError(f"part must be one of a/h/o or '*', got {self.part!r}")
        if len(self.extras) != 4:
            raise ValueError("extras must hold exactly 4 components")
        for x in self.extras:
            if len(_split_unescaped(x)) != 1:
                raise ValueError(f"extra component contains an unescaped colon: {x!r}")


def _split_unescaped(s: str) -> list[str]:
    """Split on colons, honoring backslash escapes."""
    parts: list[str] = []
    buf: list[str] = []
    escaped = False
    for c in s:
        if escaped:
            buf.append(c)
            escaped = False
        elif c == "\\":
            buf.append(c)
            escaped = True
        elif c == ":":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(c)
    parts.append("".join(buf))
    return parts


def _unescape(s: str) -> str:
    out: list[str] = []
    escaped = False
    for c in s:
        if escaped:
            out.append(c)
            escaped = False
        elif c == "\\":
            escaped = True
        else:
            out.append(c)
    return "".join(out)


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace(":", "\\:")


def parse_cpe_uri(uri: str) -> CpeName:
    """Parse a ``cpe:2.3:`` formatted string into a :class:`CpeName`."""
    if not uri.startswith("cpe:2.3:"):
        raise UnsupportedCpeVersionError(
            f"only cpe:2.3: formatted strings are supported: {uri!r}"
        )
    fields = _split_unescaped(uri)
    if len(fields) != 13:
        raise MalformedCpeError(
            f"expected 13 colon-separated components, found {len(fields)}: {uri!r}"
        )
    part, vendor, product, version, update, edition, language = (
        _unescape(f) for f in fields[2:9]
    )
    try:
        return CpeName(
            part=part,
            vendor=vendor,
            product=product,
            version=version,
            update=update,
            edition=edition,
            language=language,
            cpe_version=fields[1],
            extras=tuple(fields[9:13]),
        )
    except ValueError as exc:
        raise MalformedCpeError(f"{exc}: {uri!r}") from exc


def format_cpe_uri(name: CpeName) -> str:
    """Render a :class:`CpeName` as a 2.3 formatted string (inverse of parse)."""
    modeled = (
        name.part,
        name.vendor,
        name.product,
        name.version,
        name.update,
        name.edition,
        name.language,
    )
    fields = ["cpe", name.cpe_version]
    fields.extend(_escape(f) for f in modeled)
    fields.extend(name.extras)
    return ":".join(fields)


# ---------------------------------------------------------------------------
# Feed parsing
# ---------------------------------------------------------------------------


def _walk_cpe_uris(node: dict, out: list[str], seen: set[str]) -> None:
    for match in node.get("cpe_match") or []:
        uri = match.get("cpe23Uri")
        if uri and uri not in seen:
            seen.add(uri)
            out.append(uri)
    for child in node.get("children") or []:
        _walk_cpe_uris(child, out, seen)


def _english_description(item: dict) -> str | None:
    data = item.get("cve", {}).get("description", {}).get("description_data", [])
    for d in data:
        if str(d.get("lang", "")).lower().startswith("en"):
            value = d.get("value", "")
            if value and value.strip():
                return value.strip()
    return None


def parse_cve_feed(raw_bytes: bytes, year: int) -> tuple[list[CveEntry], int]:
    """Parse one NVD 1.1 feed document.

    Returns ``(entries, skipped)``. Items without an English description or
    with a malformed id are skipped, not fatal. CPE identifiers are collected
    from the whole configuration tree in first-occurrence order, de-duplicated.
    """
    text = raw_bytes.decode("utf-8", errors="replace")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FeedParseError(f"malformed feed JSON: {exc.msg}", offset) from exc
    entries: list[CveEntry] = []
    skipped = 0
    for item in doc.get("CVE_Items", []):
        cve_id = item.get("cve", {}).get("CVE_data_meta", {}).get("ID", "")
        summary = _english_description(item)
        if summary is None:
            skipped += 1
            continue
        uris: list[str] = []
        seen: set[str] = set()
        for node in item.get("configurations", {}).get("nodes", []):
            _walk_cpe_uris(node, uris, seen)
        try:
            entries.append(
                CveEntry(
                    cve_id=cve_id,
                    summary=summary,
                    cpe_uris=tuple(uris),
                    published_year=year,
                )
            )
        except ValueError:
            skipped += 1
    return entries, skipped


def read_feed_bytes(path: str | Path) -> bytes:
    """Read a feed file, transparently decompressing gzip."""
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def merge_feeds(entries_by_year: Sequence[Sequence[CveEntry]]) -> list[CveEntry]:
    """Combine per-year entry lists into one list sorted by (year, cve_id).

    A cve_id appearing in several years keeps its latest-year record.
    """
    best: dict[str, CveEntry] = {}
    for entries in entries_by_year:
        for e in entries:
            cur = best.get(e.cve_id)
            if cur is None or e.published_year >= cur.published_year:
                best[e.cve_id] = e
    return sorted(best.values(), key=lambda e: (e.published_year, e.cve_id))


# ---------------------------------------------------------------------------
# Line-delimited JSON interchange
# ---------------------------------------------------------------------------


def write_entries_jsonl(entries: Iterable[CveEntry]) -> bytes:
    lines = []
    for e in entries:
        lines.append(
            json.dumps(
                {
                    "cve_id": e.cve_id,
                    "summary": e.summary,
                    "cpe_uris": list(e.cpe_uris),
                    "published_year": e.published_year,
                },
                ensure_ascii=False,
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def read_entries_jsonl(data: bytes) -> list[CveEntry]:
    entries = []
    for line in data.decode("utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        entries.append(
            CveEntry(
                cve_id=obj["cve_id"],
                summary=obj["summary"],
                cpe_uris=tuple(obj["cpe_uris"]),
                published_year=int(obj["published_year"]),
            )
        )
    return entries


def read_cpe_dictionary(data: bytes) -> list[CpeName]:
    """Parse a text file of one CPE formatted string per line."""
    names = []
    for line in data.decode("utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(parse_cpe_uri(line))
    return names
