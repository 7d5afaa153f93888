"""Batch machine-translation orchestration.

Sentence splitting, token-limited chunk planning, length-bucketed batch
scheduling, concurrent dispatch with retries and a resumable journal,
and exact order restoration. The translation model itself is always an
external backend behind a tiny positional-alignment protocol.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .tokenizer import TokenizerModel

logger = logging.getLogger(__name__)

TAG_PREFIX = "⟦T⟧"
DEFAULT_MAX_CHUNK_TOKENS = 256
DEFAULT_BUCKET_BOUNDS = (32, 64, 128, 256)
DEFAULT_MAX_BATCH_ITEMS = 16
DEFAULT_PLACEHOLDER = "⟦MISSING⟧"

_ETHIOPIC_TERMINATORS = "።፧፨"
_ASCII_TERMINATORS = ".!?"


class BackendError(RuntimeError):
    """A backend call failed or returned a misaligned response."""


class TranslationFailed(RuntimeError):
    """A text could not be fully translated (failed or excluded parts)."""


# ---------------------------------------------------------------------------
# Backends


class IdentityBackend:
    def translate(self, texts: Sequence[str], source_lang: str, target_lang: str) -> list[str]:
        return list(texts)


class TagBackend:
    """Prefixes every text with a visible tag; used to trace the pipeline."""

    def __init__(self, tag: str = TAG_PREFIX):
        self.tag = tag

    def translate(self, texts, source_lang, target_lang) -> list[str]:
        return [self.tag + t for t in texts]


class FlakyBackend:
    """Fails the first ``fail_calls`` calls, then delegates to ``inner``."""

    def __init__(self, fail_calls: int, inner=None):
        self.fail_calls = fail_calls
        self.inner = inner if inner is not None else IdentityBackend()
        self._calls = 0
        self._lock = threading.Lock()

    def translate(self, texts, source_lang, target_lang) -> list[str]:
        with self._lock:
            self._calls += 1
            call = self._calls
        if call <= self.fail_calls:
            raise BackendError(f"injected failure (call {call}/{self.fail_calls})")
        return self.inner.translate(texts, source_lang, target_lang)


class HttpBackend:
    """POST /v1/translate with positional alignment of translations."""

    def __init__(self, base_url: str, timeout: float = 120.0):
        self.url = base_url.rstrip("/") + "/v1/translate"
        self.timeout = timeout

    def translate(self, texts, source_lang, target_lang) -> list[str]:
        resp = requests.post(
            self.url,
            json={
                "texts": list(texts),
                "source_lang": source_lang,
                "target_lang": target_lang,
            },
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise BackendError(f"backend returned HTTP {resp.status_code}")
        try:
            translations = resp.json()["translations"]
        except (ValueError, KeyError) as e:
            raise BackendError(f"malformed backend response: {e}") from e
        return list(translations)


def make_backend(spec: str):
    """Build a backend from a spec string.

    "mock:identity", "mock:tag", "mock:flaky:<n>", or an HTTP base URL.
    """
    if spec == "mock:identity":
        return IdentityBackend()
    if spec == "mock:tag":
        return TagBackend()
    if spec.startswith("mock:flaky:"):
        return FlakyBackend(int(spec.rsplit(":", 1)[1]))
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpBackend(spec)
    raise ValueError(f"unknown backend spec: {spec}")


# ---------------------------------------------------------------------------
# Planning


@dataclass(frozen=True)
class SentenceSpan:
    doc_id: str
    index: int
    text: str
    token_count: int = 0
    trailing: str = ""  # separator removed after this span; "".join(text+trailing) == source


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    doc_id: str
    sentence_indices: tuple[int, ...]
    text: str
    token_count: int


@dataclass(frozen=True)
class Exclusion:
    doc_id: str
    sentence_index: int
    token_count: int
    reason: str


@dataclass
class ChunkPlan:
    chunks: list[Chunk] = field(default_factory=list)
    excluded: list[Exclusion] = field(default_factory=list)


@dataclass(frozen=True)
class Batch:
    batch_id: int
    chunk_ids: tuple[int, ...]
    texts: tuple[str, ...]
    bucket: str


@dataclass(frozen=True)
class TranslatedChunk:
    chunk_id: int
    translation: str
    attempts: int
    status: str  # "ok" | "failed"


def split_sentences(text: str, doc_id: str = "") -> list[SentenceSpan]:
    """Split after sentence terminators; whitespace-only spans are dropped.

    Terminators: ". ", "! ", "? ", the Ethiopic stops ። ፧ ፨, and
    newlines. Trailing unterminated text forms a final span. Separators
    are recorded on the preceding span so concatenation reproduces the
    source text exactly.
    """
    raw: list[tuple[str, str]] = []  # (span text, trailing separator)
    buf: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            raw.append(("".join(buf), "\n"))
            buf = []
            i += 1
            continue
        buf.append(ch)
        if ch in _ETHIOPIC_TERMINATORS:
            raw.append(("".join(buf), ""))
            buf = []
            i += 1
            continue
        if ch in _ASCII_TERMINATORS and i + 1 < n and text[i + 1] == " ":
            raw.append(("".join(buf), " "))
            buf = []
            i += 2
            continue
        i += 1
    if buf:
        raw.append(("".join(buf), ""))

    # Fold whitespace-only spans (and leading whitespace) into separators.
    spans: list[SentenceSpan] = []
    pending_sep = ""
    for seg, sep in raw:
        stripped = seg.lstrip()
        lead = seg[: len(seg) - len(stripped)]
        core = stripped.rstrip()
        trail = stripped[len(core) :]
        if not core:
            pending_sep += seg + sep
            continue
        if spans and (pending_sep or lead):
            prev = spans[-1]
            spans[-1] = SentenceSpan(
                prev.doc_id, prev.index, prev.text, prev.token_count,
                prev.trailing + pending_sep + lead,
            )
        pending_sep = ""
        spans.append(SentenceSpan(doc_id, len(spans), core, 0, trail + sep))
    if spans and pending_sep:
        prev = spans[-1]
        spans[-1] = SentenceSpan(
            prev.doc_id, prev.index, prev.text, prev.token_count,
            prev.trailing + pending_sep,
        )
    return spans


def plan_chunks(
    spans: Sequence[SentenceSpan],
    max_chunk_tokens: int,
    counter: TokenizerModel | None = None,
    start_chunk_id: int = 0,
) -> ChunkPlan:
    """Greedy packing of consecutive sentences up to the token limit.

    A single sentence over the limit is excluded with reason
    "over_limit". Chunks never span documents. If ``counter`` is given,
    sentence token counts are recomputed with it; otherwise the counts
    already on the spans are used.
    """
    if max_chunk_tokens < 1:
        raise ValueError("max_chunk_tokens must be >= 1")
    plan = ChunkPlan()
    next_id = start_chunk_id

    def flush(doc_id: str, group: list[SentenceSpan]) -> None:
        nonlocal next_id
        if not group:
            return
        plan.chunks.append(
            Chunk(
                chunk_id=next_id,
                doc_id=doc_id,
                sentence_indices=tuple(s.index for s in group),
                text=" ".join(s.text for s in group),
                token_count=sum(s.token_count for s in group),
            )
        )
        next_id += 1

    current_doc: str | None = None
    group: list[SentenceSpan] = []
    group_tokens = 0
    for span in spans:
        count = len(counter.encode(span.text)) if counter is not None else span.token_count
        span = SentenceSpan(span.doc_id, span.index, span.text, count, span.trailing)
        if span.doc_id != current_doc:
            flush(current_doc, group)
            group, group_tokens = [], 0
            current_doc = span.doc_id
        if count > max_chunk_tokens:
            flush(current_doc, group)
            group, group_tokens = [], 0
            plan.excluded.append(
                Exclusion(span.doc_id, span.index, count, "over_limit")
            )
            continue
        if group_tokens + count > max_chunk_tokens:
            flush(current_doc, group)
            group, group_tokens = [], 0
        group.append(span)
        group_tokens += count
    flush(current_doc, group)
    return plan


def schedule_batches(
    plan: ChunkPlan,
    bucket_bounds: Sequence[int] = DEFAULT_BUCKET_BOUNDS,
    max_batch_items: int = DEFAULT_MAX_BATCH_ITEMS,
) -> list[Batch]:
    """Assign chunks to length buckets, then fill batches in id order."""
    if not bucket_bounds or list(bucket_bounds) != sorted(bucket_bounds):
        raise ValueError("bucket_bounds must be nonempty and ascending")
    if max_batch_items < 1:
        raise ValueError("max_batch_items must be >= 1")
    buckets: dict[str, list[Chunk]] = {}
    labels = [f"le{b}" for b in bucket_bounds] + [f"gt{bucket_bounds[-1]}"]
    for label in labels:
        buckets[label] = []
    for chunk in sorted(plan.chunks, key=lambda c: c.chunk_id):
        for bound, label in zip(bucket_bounds, labels):
            if chunk.token_count <= bound:
                buckets[label].append(chunk)
                break
        else:
            buckets[labels[-1]].append(chunk)
    batches: list[Batch] = []
    for label in labels:
        chunks = buckets[label]
        for i in range(0, len(chunks), max_batch_items):
            group = chunks[i : i + max_batch_items]
            batches.append(
                Batch(
                    batch_id=len(batches),
                    chunk_ids=tuple(c.chunk_id for c in group),
                    texts=tuple(c.text for c in group),
                    bucket=label,
                )
            )
    return batches


# ---------------------------------------------------------------------------
# Execution


class Journal:
    """Append-only JSONL journal of finished batches; crash-safe.

    Each record holds the batch id, status, timestamp, attempt count,
    and (for completed batches) the translations, so a restarted run
    can skip finished work without re-calling the backend.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load_completed(self) -> dict[int, dict]:
        done: dict[int, dict] = {}
        if not self.path.exists():
            return done
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("status") == "ok":
                    done[rec["batch_id"]] = rec
        return done

    def record(self, batch_id: int, status: str, attempts: int,
               translations: list[str] | None = None) -> None:
        rec = {
            "batch_id": batch_id,
            "status": status,
            "timestamp": time.time(),
            "attempts": attempts,
        }
        if translations is not None:
            rec["translations"] = translations
        line = json.dumps(rec, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())


def run_translation(
    batches: Sequence[Batch],
    backend,
    src: str = "eng",
    tgt: str = "amh",
    parallelism: int = 1,
    max_retries: int = 3,
    backoff_base: float = 1.0,
    journal: Journal | None = None,
    rng: random.Random | None = None,
) -> list[TranslatedChunk]:
    """Submit each batch as one backend call, with per-batch retries.

    Failures are retried up to ``max_retries`` times (exponential
    backoff with jitter); exhausted batches mark every chunk failed and
    the pipeline continues. Results cover every chunk exactly once
    regardless of completion order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    rng = rng if rng is not None else random.Random()
    completed = journal.load_completed() if journal is not None else {}

    def process(batch: Batch) -> list[TranslatedChunk]:
        prior = completed.get(batch.batch_id)
        if prior is not None and len(prior.get("translations", [])) == len(batch.texts):
            return [
                TranslatedChunk(cid, tr, prior.get("attempts", 1), "ok")
                for cid, tr in zip(batch.chunk_ids, prior["translations"])
            ]
        attempts = 0
        while True:
            attempts += 1
            try:
                out = backend.translate(list(batch.texts), src, tgt)
                if len(out) != len(batch.texts):
                    raise BackendError(
                        f"batch {batch.batch_id}: sent {len(batch.texts)} texts, "
                        f"got {len(out)} translations"
                    )
                if journal is not None:
                    journal.record(batch.batch_id, "ok", attempts, list(out))
                return [
                    TranslatedChunk(cid, tr, attempts, "ok")
                    for cid, tr in zip(batch.chunk_ids, out)
                ]
            except Exception as e:  # noqa: BLE001 - any backend fault is retryable
                if attempts > max_retries:
                    logger.warning("batch %d failed permanently: %s", batch.batch_id, e)
                    if journal is not None:
                        journal.record(batch.batch_id, "failed", attempts)
                    return [
                        TranslatedChunk(cid, "", attempts, "failed")
                        for cid in batch.chunk_ids
                    ]
                delay = backoff_base * (2 ** (attempts - 1)) * (1 + rng.random())
                if delay > 0:
                    time.sleep(delay)

    results: list[TranslatedChunk] = []
    if parallelism == 1:
        for batch in batches:
            results.extend(process(batch))
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for chunk_results in pool.map(process, batches):
                results.extend(chunk_results)
    return results


# ---------------------------------------------------------------------------
# Restoration


@dataclass(frozen=True)
class Gap:
    doc_id: str
    sentence_indices: tuple[int, ...]
    reason: str  # "failed" | "over_limit"


@dataclass
class RestoreResult:
    by_doc: dict[str, list[str]]
    gaps: list[Gap]

    def joined(self, sep: str = " ") -> dict[str, str]:
        return {doc_id: sep.join(parts) for doc_id, parts in self.by_doc.items()}


def restore_order(
    plan: ChunkPlan,
    results: Iterable[TranslatedChunk],
    failure_policy: str = "skip",
    placeholder: str = DEFAULT_PLACEHOLDER,
) -> RestoreResult:
    """Emit translations in original document/sentence order.

    Failed chunks and excluded sentences are either omitted ("skip")
    with a gap-report entry, or replaced by a placeholder string.
    """
    if failure_policy not in ("skip", "placeholder"):
        raise ValueError(f"unknown failure_policy: {failure_policy}")
    by_id: dict[int, TranslatedChunk] = {}
    for r in results:
        if r.chunk_id in by_id:
            raise ValueError(f"duplicate chunk_id {r.chunk_id} in results")
        by_id[r.chunk_id] = r
    plan_ids = {c.chunk_id for c in plan.chunks}
    missing = plan_ids - by_id.keys()
    extra = by_id.keys() - plan_ids
    if missing:
        raise ValueError(f"missing chunk ids in results: {sorted(missing)[:5]}")
    if extra:
        raise ValueError(f"unknown chunk ids in results: {sorted(extra)[:5]}")

    # Interleave chunks and exclusions per document by first sentence index.
    items: dict[str, list[tuple[int, str, object]]] = {}
    doc_order: list[str] = []
    for chunk in plan.chunks:
        if chunk.doc_id not in items:
            items[chunk.doc_id] = []
            doc_order.append(chunk.doc_id)
        items[chunk.doc_id].append((chunk.sentence_indices[0], "chunk", chunk))
    for exc in plan.excluded:
        if exc.doc_id not in items:
            items[exc.doc_id] = []
            doc_order.append(exc.doc_id)
        items[exc.doc_id].append((exc.sentence_index, "excluded", exc))

    by_doc: dict[str, list[str]] = {}
    gaps: list[Gap] = []
    for doc_id in doc_order:
        parts: list[str] = []
        for _, kind, payload in sorted(items[doc_id], key=lambda t: t[0]):
            if kind == "excluded":
                gaps.append(Gap(doc_id, (payload.sentence_index,), payload.reason))
                if failure_policy == "placeholder":
                    parts.append(placeholder)
                continue
            chunk = payload
            res = by_id[chunk.chunk_id]
            if res.status == "ok":
                parts.append(res.translation)
            else:
                gaps.append(Gap(doc_id, chunk.sentence_indices, "failed"))
                if failure_policy == "placeholder":
                    parts.append(placeholder)
        by_doc[doc_id] = parts
    return RestoreResult(by_doc=by_doc, gaps=gaps)


# ---------------------------------------------------------------------------
# Convenience pipeline


def translate_documents(
    docs,
    backend,
    counter: TokenizerModel,
    src: str = "eng",
    tgt: str = "amh",
    max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS,
    bucket_bounds: Sequence[int] = DEFAULT_BUCKET_BOUNDS,
    max_batch_items: int = DEFAULT_MAX_BATCH_ITEMS,
    parallelism: int = 1,
    max_retries: int = 3,
    backoff_base: float = 1.0,
    failure_policy: str = "skip",
    journal: Journal | None = None,
    rng: random.Random | None = None,
) -> RestoreResult:
    """split -> plan -> schedule -> run -> restore over whole documents."""
    spans: list[SentenceSpan] = []
    for doc in docs:
        spans.extend(split_sentences(doc.text, doc_id=doc.id))
    plan = plan_chunks(spans, max_chunk_tokens, counter=counter)
    batches = schedule_batches(plan, bucket_bounds, max_batch_items)
    results = run_translation(
        batches, backend, src=src, tgt=tgt, parallelism=parallelism,
        max_retries=max_retries, backoff_base=backoff_base,
        journal=journal, rng=rng,
    )
    return restore_order(plan, results, failure_policy=failure_policy)


def translate_text(
    text: str,
    backend,
    counter: TokenizerModel,
    **kwargs,
) -> str:
    """Translate one text through the chunking pipeline.

    Raises TranslationFailed if any part failed or was excluded, so
    callers never see partial translations.
    """
    from .corpus import Document

    if not text:
        return ""
    kwargs.setdefault("backoff_base", 0.1)
    result = translate_documents(
        [Document(id="_", source="other:inline", text=text)],
        backend, counter, **kwargs,
    )
    if result.gaps:
        reasons = sorted({g.reason for g in result.gaps})
        raise TranslationFailed(f"{len(result.gaps)} gap(s): {', '.join(reasons)}")
    return result.joined().get("_", "")
