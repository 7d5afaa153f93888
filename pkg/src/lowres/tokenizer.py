"""Subword vocabulary training, merging, and byte-fallback segmentation.

A small, fully deterministic tokenizer stack: a byte-level pair-merge
trainer learns new pieces from a target-language corpus, the learned
pieces are appended to a fixed base vocabulary, and a greedy
longest-match segmenter encodes text with single-byte fallback so every
valid UTF-8 input is representable.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable

WORD_MARKER = "▁"
MARKER_BYTES = WORD_MARKER.encode("utf-8")

_SPECIAL_PIECES = (b"<unk>", b"<s>", b"</s>")
_BYTE_ESCAPE_RE = re.compile(r"<0x([0-9A-Fa-f]{2})>")
_ALL_ESCAPES_RE = re.compile(r"(?:<0x[0-9A-Fa-f]{2}>)+\Z")


class VocabularyError(ValueError):
    """Raised for malformed vocabulary files or invalid piece sets."""


def piece_to_str(piece: bytes) -> str:
    """Serialize a piece for the JSON vocabulary file.

    Pieces that decode cleanly as UTF-8 are stored verbatim; anything
    else (raw bytes, partial characters) is stored as a run of <0xNN>
    escapes. Literal text that happens to contain an escape is also
    force-escaped so loading is unambiguous.
    """
    try:
        s = piece.decode("utf-8")
    except UnicodeDecodeError:
        s = None
    if s is not None and not _BYTE_ESCAPE_RE.search(s):
        return s
    return "".join(f"<0x{b:02X}>" for b in piece)


def piece_from_str(s: str) -> bytes:
    if _ALL_ESCAPES_RE.match(s):
        return bytes(int(h, 16) for h in _BYTE_ESCAPE_RE.findall(s))
    return s.encode("utf-8")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered piece list; the id of a piece is its index.

    ``byte_start`` marks the run of 256 single-byte pieces used for
    fallback, one per byte value in order.
    """

    pieces: tuple[bytes, ...]
    byte_start: int = 3
    unk_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        n = len(self.pieces)
        if self.byte_start < 0 or self.byte_start + 256 > n:
            raise VocabularyError("byte region out of range")
        for b in range(256):
            if self.pieces[self.byte_start + b] != bytes([b]):
                raise VocabularyError(
                    f"piece at id {self.byte_start + b} is not byte {b:#04x}"
                )
        for sid in (self.unk_id, self.bos_id, self.eos_id):
            if not 0 <= sid < n:
                raise VocabularyError("special id out of range")

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def byte_region(self) -> tuple[int, int]:
        return (self.byte_start, self.byte_start + 256)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.unk_id, self.bos_id, self.eos_id))


def new_base_vocabulary(extra_pieces: Iterable[str] = (WORD_MARKER,)) -> Vocabulary:
    """Self-built base layout: unk=0, bos=1, eos=2, bytes at 3..258.

    ``extra_pieces`` (word marker by default) are appended after the
    byte region.
    """
    pieces = list(_SPECIAL_PIECES) + [bytes([b]) for b in range(256)]
    seen = set(pieces)
    for p in extra_pieces:
        raw = p.encode("utf-8") if isinstance(p, str) else bytes(p)
        if not raw:
            raise VocabularyError("empty piece")
        if raw in seen:
            raise VocabularyError(f"duplicate piece {raw!r}")
        seen.add(raw)
        pieces.append(raw)
    return Vocabulary(tuple(pieces))


@dataclass(frozen=True)
class ExtensionVocab:
    """Pieces learned from the target-language corpus, in merge order."""

    pieces: tuple[bytes, ...]

    def __post_init__(self):
        seen = set()
        for p in self.pieces:
            if not p:
                raise VocabularyError("empty extension piece")
            if p in seen:
                raise VocabularyError(f"duplicate extension piece {p!r}")
            if not any(b >= 0x80 for b in p):
                raise VocabularyError(f"pure-ASCII extension piece {p!r}")
            seen.add(p)

    def __len__(self) -> int:
        return len(self.pieces)


class TokenizerModel:
    """Immutable greedy longest-match segmenter over a Vocabulary.

    Content pieces (everything outside the byte region and the special
    ids) are matched longest-first at each cursor position; when nothing
    matches, the single-byte token for the next byte is emitted.
    """

    word_marker = WORD_MARKER
    segmentation = "greedy-longest-match"

    def __init__(self, vocab: Vocabulary, base_size: int | None = None):
        if base_size is None:
            base_size = len(vocab)
        if not 0 < base_size <= len(vocab):
            raise VocabularyError("base_size out of range")
        self.vocab = vocab
        self.base_size = base_size
        byte_lo, byte_hi = vocab.byte_region
        specials = vocab.special_ids
        table: dict[bytes, int] = {}
        for tid, piece in enumerate(vocab.pieces):
            if byte_lo <= tid < byte_hi or tid in specials:
                continue
            table.setdefault(piece, tid)
        self._table = table
        by_first: dict[int, list[int]] = defaultdict(list)
        for piece in table:
            by_first[piece[0]].append(len(piece))
        self._by_first = {
            b: tuple(sorted(set(ls), reverse=True)) for b, ls in by_first.items()
        }

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        if WORD_MARKER in text:
            raise ValueError("reserved marker in input")
        if not text:
            return []
        data = (WORD_MARKER + text.replace(" ", WORD_MARKER)).encode("utf-8")
        table = self._table
        by_first = self._by_first
        byte_lo = self.vocab.byte_start
        out: list[int] = []
        append = out.append
        i = 0
        n = len(data)
        while i < n:
            lengths = by_first.get(data[i])
            if lengths:
                rem = n - i
                for length in lengths:
                    if length > rem:
                        continue
                    tid = table.get(data[i : i + length])
                    if tid is not None:
                        append(tid)
                        i += length
                        break
                else:
                    append(byte_lo + data[i])
                    i += 1
            else:
                append(byte_lo + data[i])
                i += 1
        return out

    def decode(self, ids: Iterable[int]) -> str:
        vocab = self.vocab
        byte_lo, byte_hi = vocab.byte_region
        specials = vocab.special_ids
        n = len(vocab)
        buf = bytearray()
        for tid in ids:
            if not 0 <= tid < n:
                raise ValueError(f"token id {tid} out of range (vocab size {n})")
            if byte_lo <= tid < byte_hi:
                buf.append(tid - byte_lo)
            elif tid in specials:
                continue
            else:
                buf += vocab.pieces[tid]
        try:
            text = bytes(buf).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ValueError(f"invalid UTF-8 in decoded bytes at offset {e.start}") from e
        if text.startswith(WORD_MARKER):
            text = text[len(WORD_MARKER) :]
        return text.replace(WORD_MARKER, " ")


def encode(model: TokenizerModel, text: str) -> list[int]:
    return model.encode(text)


def decode(model: TokenizerModel, ids: Iterable[int]) -> str:
    return model.decode(ids)


def _eligible(piece: bytes) -> bool:
    # A learned piece must keep a non-ASCII byte after removing the word
    # marker, otherwise it could re-segment plain English text. Marker
    # bytes only ever occur word-initially, so a piece may also start
    # with a partial marker; strip that too before checking.
    best = 0
    for start in range(len(MARKER_BYTES)):
        tail = MARKER_BYTES[start:]
        n = 0
        while n < len(tail) and n < len(piece) and piece[n] == tail[n]:
            n += 1
        best = max(best, n)
    rest = piece[best:]
    return any(b >= 0x80 for b in rest)


def train_extension(corpus, target_size: int, min_pair_freq: int = 2) -> ExtensionVocab:
    """Byte-level pair-merge training over whitespace-pretokenized text.

    Repeatedly merges the most frequent adjacent symbol pair (ties go to
    the lexicographically smallest (left, right) byte pair). Candidates
    whose result would segment ASCII text are skipped. Stops at
    ``target_size`` learned pieces or when no pair reaches
    ``min_pair_freq``.
    """
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    if min_pair_freq < 1:
        raise ValueError("min_pair_freq must be >= 1")
    word_freqs: Counter[bytes] = Counter()
    saw_doc = False
    for doc in corpus:
        saw_doc = True
        text = doc.text if hasattr(doc, "text") else doc
        if WORD_MARKER in text:
            raise ValueError("reserved marker in input")
        for word in text.split():
            word_freqs[(WORD_MARKER + word).encode("utf-8")] += 1
    if not saw_doc:
        raise ValueError("empty corpus")

    words: list[list[bytes]] = []
    freqs: list[int] = []
    for raw, f in sorted(word_freqs.items()):
        words.append([raw[i : i + 1] for i in range(len(raw))])
        freqs.append(f)

    pair_counts: dict[tuple[bytes, bytes], int] = defaultdict(int)
    pair_words: dict[tuple[bytes, bytes], set[int]] = defaultdict(set)
    for wi, syms in enumerate(words):
        f = freqs[wi]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += f
            pair_words[pair].add(wi)

    heap: list[tuple[int, bytes, bytes]] = []

    def push(pair: tuple[bytes, bytes]) -> None:
        c = pair_counts.get(pair, 0)
        if c >= min_pair_freq and _eligible(pair[0] + pair[1]):
            heapq.heappush(heap, (-c, pair[0], pair[1]))

    for pair in list(pair_counts):
        push(pair)

    learned: list[bytes] = []
    seen: set[bytes] = set()
    while len(learned) < target_size and heap:
        negc, left, right = heapq.heappop(heap)
        pair = (left, right)
        if pair_counts.get(pair, 0) != -negc:
            continue  # stale heap entry
        merged = left + right
        for wi in list(pair_words.get(pair, ())):
            syms = words[wi]
            f = freqs[wi]
            out: list[bytes] = []
            i = 0
            n = len(syms)
            changed = False
            while i < n:
                if i < n - 1 and syms[i] == left and syms[i + 1] == right:
                    out.append(merged)
                    i += 2
                    changed = True
                else:
                    out.append(syms[i])
                    i += 1
            if not changed:
                pair_words[pair].discard(wi)
                continue
            touched: set[tuple[bytes, bytes]] = set()
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
                touched.add(p)
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                pair_words[p].add(wi)
                touched.add(p)
            words[wi] = out
            for p in touched:
                push(p)
        if merged not in seen:
            seen.add(merged)
            learned.append(merged)
    return ExtensionVocab(tuple(learned))


def merge(base: Vocabulary, ext: ExtensionVocab) -> TokenizerModel:
    """Append extension pieces to the base; collisions are dropped.

    Base piece ids are unchanged; survivors get consecutive ids starting
    at the base size.
    """
    existing = set(base.pieces)
    survivors = [p for p in ext.pieces if p not in existing]
    vocab = Vocabulary(
        base.pieces + tuple(survivors),
        byte_start=base.byte_start,
        unk_id=base.unk_id,
        bos_id=base.bos_id,
        eos_id=base.eos_id,
    )
    return TokenizerModel(vocab, base_size=len(base.pieces))


def compression_report(a: TokenizerModel, b: TokenizerModel, corpus) -> dict:
    """Whole-corpus token counts under two models plus their ratio."""
    docs = list(corpus)
    if not docs:
        raise ValueError("empty corpus")
    chars = sum(len(d.text) for d in docs)
    tokens_a = sum(len(a.encode(d.text)) for d in docs)
    tokens_b = sum(len(b.encode(d.text)) for d in docs)
    if tokens_b == 0:
        raise ValueError("zero tokens under model b")
    return {
        "tokens_a": tokens_a,
        "tokens_b": tokens_b,
        "tokens_per_char_a": tokens_a / chars if chars else 0.0,
        "tokens_per_char_b": tokens_b / chars if chars else 0.0,
        "ratio": tokens_a / tokens_b,
    }


def model_to_dict(model: TokenizerModel) -> dict:
    return {
        "pieces": [piece_to_str(p) for p in model.vocab.pieces],
        "base_size": model.base_size,
        "special": {
            "unk": model.vocab.unk_id,
            "bos": model.vocab.bos_id,
            "eos": model.vocab.eos_id,
        },
    }


def model_from_dict(data: dict) -> TokenizerModel:
    try:
        pieces = tuple(piece_from_str(s) for s in data["pieces"])
        special = data.get("special", {})
        base_size = data.get("base_size", len(pieces))
    except (KeyError, TypeError) as e:
        raise VocabularyError(f"malformed vocabulary file: {e}") from e
    byte_start = None
    for i in range(len(pieces) - 255):
        if pieces[i] == b"\x00" and all(
            pieces[i + b] == bytes([b]) for b in range(256)
        ):
            byte_start = i
            break
    if byte_start is None:
        raise VocabularyError("vocabulary has no contiguous 256-byte region")
    vocab = Vocabulary(
        pieces,
        byte_start=byte_start,
        unk_id=special.get("unk", 0),
        bos_id=special.get("bos", 1),
        eos_id=special.get("eos", 2),
    )
    return TokenizerModel(vocab, base_size=base_size)


def save_model(model: TokenizerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, ensure_ascii=False, indent=2)
        f.write("\n")


def load_model(path_or_spec) -> TokenizerModel:
    """Load a model file; the spec ``builtin:byte`` gives the self-built
    byte-fallback base (specials, 256 bytes, word marker)."""
    if path_or_spec == "builtin:byte":
        return TokenizerModel(new_base_vocabulary())
    with open(path_or_spec, "r", encoding="utf-8") as f:
        return model_from_dict(json.load(f))


def save_extension(ext: ExtensionVocab, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {"pieces": [piece_to_str(p) for p in ext.pieces]},
            f,
            ensure_ascii=False,
            indent=2,
        )
        f.write("\n")


def load_extension(path) -> ExtensionVocab:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return ExtensionVocab(tuple(piece_from_str(s) for s in data["pieces"]))
