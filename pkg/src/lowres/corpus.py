"""Corpus ingestion, script statistics, and exact deduplication."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .tokenizer import TokenizerModel

ETHIOPIC_RANGES = (
    (0x1200, 0x137F),
    (0x1380, 0x139F),
    (0x2D80, 0x2DDF),
    (0xAB00, 0xAB2F),
)


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files; carries the offending line."""


@dataclass(frozen=True)
class Document:
    """One unit of corpus text with a source tag.

    Source tags are an open enum: "real", "translated_wikipedia",
    "translated_books", or "other:<label>".
    """

    id: str
    source: str
    text: str
    meta: dict | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ScriptStats:
    total_chars: int
    ethiopic_chars: int
    ethiopic_ratio: float


def is_ethiopic(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in ETHIOPIC_RANGES)


def script_stats(text: str) -> ScriptStats:
    """Count non-whitespace characters and the Ethiopic fraction."""
    total = 0
    eth = 0
    for ch in text:
        if ch.isspace():
            continue
        total += 1
        if is_ethiopic(ch):
            eth += 1
    return ScriptStats(total, eth, eth / total if total else 0.0)


def ingest_documents(path, format: str = "jsonl", nfc: bool = False) -> list[Document]:
    """Read a corpus from a JSONL file or a directory of .txt files.

    JSONL lines must be objects with at least id, source, and text.
    NFC normalization is off by default so raw codepoints are preserved.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such path: {path}")
    docs: list[Document] = []
    if format == "jsonl":
        seen_ids: set[str] = set()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusFormatError(f"line {lineno}: invalid JSON ({e.msg})") from e
                if not isinstance(obj, dict):
                    raise CorpusFormatError(f"line {lineno}: not an object")
                for fld in ("id", "source", "text"):
                    if fld not in obj:
                        raise CorpusFormatError(f"line {lineno}: missing field {fld}")
                doc_id = str(obj["id"])
                if not doc_id:
                    raise CorpusFormatError(f"line {lineno}: empty id")
                if doc_id in seen_ids:
                    raise CorpusFormatError(f"line {lineno}: duplicate id {doc_id!r}")
                seen_ids.add(doc_id)
                text = obj["text"]
                if nfc:
                    text = unicodedata.normalize("NFC", text)
                docs.append(
                    Document(doc_id, str(obj["source"]), text, obj.get("meta"))
                )
    elif format == "txt-dir":
        if not path.is_dir():
            raise NotADirectoryError(f"not a directory: {path}")
        for p in sorted(path.glob("*.txt")):
            text = p.read_text(encoding="utf-8")
            if nfc:
                text = unicodedata.normalize("NFC", text)
            docs.append(Document(p.name, "other:txt", text))
    else:
        raise ValueError(f"unknown corpus format: {format}")
    return docs


def write_documents(docs: Iterable[Document], path) -> int:
    """Emit corpus JSONL; inverse of jsonl ingestion. Returns line count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in docs:
            obj = {"id": doc.id, "source": doc.source, "text": doc.text}
            if doc.meta is not None:
                obj["meta"] = doc.meta
            f.write(json.dumps(obj, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


def count_tokens(doc: Document, model: TokenizerModel) -> int:
    return len(model.encode(doc.text))


def dedup_exact(docs: Iterable[Document]) -> list[Document]:
    """Keep the first occurrence of each exact text, preserving order."""
    seen: set[str] = set()
    out: list[Document] = []
    for doc in docs:
        if doc.text in seen:
            continue
        seen.add(doc.text)
        out.append(doc)
    return out


def iter_jsonl(path) -> Iterator[dict]:
    """Yield parsed objects from a generic JSONL file."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({e.msg})") from e


def write_jsonl(objs: Iterable[dict], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for obj in objs:
            f.write(json.dumps(obj, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n
