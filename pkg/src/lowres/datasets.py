"""Pretraining mixture building and finetuning-dataset synthesis.

Covers the weighted corpus mixture with a deterministic manifest,
instruction-pair translation, mixed-language and translation-task
variants, ranked conversation-tree pruning, and visual-instruction
record translation with placeholder conservation.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .corpus import Document, count_tokens, ingest_documents
from .tokenizer import TokenizerModel
from .translate import translate_text

IMAGE_PLACEHOLDER = "<image>"

DEFAULT_DIRECTIVE_TEMPLATE = "Respond in {language}."
DEFAULT_TRANSLATION_TEMPLATE = "Translate the following text to {language}:\n{text}"

LANGUAGE_NAMES = {
    "eng": "English",
    "amh": "Amharic",
}


class TemplateError(ValueError):
    """A template is missing a required placeholder."""


class MixtureError(ValueError):
    """A mixture config cannot be satisfied by its source corpora."""


def language_name(code: str) -> str:
    return LANGUAGE_NAMES.get(code, code)


def validate_template(template: str, placeholders: Sequence[str]) -> str:
    for name in placeholders:
        if "{" + name + "}" not in template:
            raise TemplateError(f"template missing placeholder {{{name}}}: {template!r}")
    return template


# ---------------------------------------------------------------------------
# Instruction pairs


@dataclass(frozen=True)
class InstructionPair:
    instruction: str
    output: str
    input: str | None = None
    lang_human: str = "eng"
    lang_ai: str = "eng"
    origin: str = "other:unknown"

    def __post_init__(self):
        if not self.instruction or not self.output:
            raise ValueError("instruction and output must be nonempty")
        if not self.lang_human or not self.lang_ai:
            raise ValueError("language codes must be nonempty")


def pair_to_dict(pair: InstructionPair) -> dict:
    obj = {"instruction": pair.instruction}
    if pair.input is not None:
        obj["input"] = pair.input
    obj.update(
        output=pair.output,
        lang_human=pair.lang_human,
        lang_ai=pair.lang_ai,
        origin=pair.origin,
    )
    return obj


def pair_from_dict(obj: dict) -> InstructionPair:
    return InstructionPair(
        instruction=obj["instruction"],
        output=obj["output"],
        input=obj.get("input"),
        lang_human=obj.get("lang_human", "eng"),
        lang_ai=obj.get("lang_ai", "eng"),
        origin=obj.get("origin", "other:unknown"),
    )


def translate_instruction_pair(
    pair: InstructionPair,
    backend,
    counter: TokenizerModel,
    src: str = "eng",
    tgt: str = "amh",
    **pipeline_kwargs,
) -> InstructionPair:
    """Translate every text field through the chunking pipeline.

    Raises TranslationFailed if any field cannot be fully translated,
    so no partial pairs are ever produced.
    """
    instruction = translate_text(pair.instruction, backend, counter,
                                 src=src, tgt=tgt, **pipeline_kwargs)
    inp = None
    if pair.input is not None:
        inp = translate_text(pair.input, backend, counter,
                             src=src, tgt=tgt, **pipeline_kwargs)
    output = translate_text(pair.output, backend, counter,
                            src=src, tgt=tgt, **pipeline_kwargs)
    return InstructionPair(
        instruction=instruction,
        output=output,
        input=inp,
        lang_human=tgt,
        lang_ai=tgt,
        origin=pair.origin,
    )


def mixed_language_variant(
    pair_src: InstructionPair,
    pair_tgt: InstructionPair,
    side: str,
    directive_template: str = DEFAULT_DIRECTIVE_TEMPLATE,
) -> InstructionPair:
    """Recompose a pair with human and AI sides in different languages.

    Pure recomposition: no translation call is made. The prompt gets a
    directive naming the language the AI side is expected to answer in.
    """
    if pair_src.origin != pair_tgt.origin:
        raise ValueError(
            f"mismatched provenance: {pair_src.origin!r} vs {pair_tgt.origin!r}"
        )
    validate_template(directive_template, ["language"])
    if side == "human":
        directive = directive_template.format(language=language_name(pair_tgt.lang_ai))
        return InstructionPair(
            instruction=pair_src.instruction + "\n" + directive,
            output=pair_tgt.output,
            input=pair_src.input,
            lang_human=pair_src.lang_human,
            lang_ai=pair_tgt.lang_ai,
            origin="synthetic_mixed",
        )
    if side == "ai":
        directive = directive_template.format(language=language_name(pair_src.lang_ai))
        return InstructionPair(
            instruction=pair_tgt.instruction + "\n" + directive,
            output=pair_src.output,
            input=pair_tgt.input,
            lang_human=pair_tgt.lang_human,
            lang_ai=pair_src.lang_ai,
            origin="synthetic_mixed",
        )
    raise ValueError(f"unknown side: {side}")


def translation_task_pair(
    pair_src: InstructionPair,
    pair_tgt: InstructionPair,
    side: str = "output",
    direction: str = "src2tgt",
    template: str = DEFAULT_TRANSLATION_TEMPLATE,
) -> InstructionPair:
    """Build a synthetic pair asking to translate one side of a record."""
    if pair_src.origin != pair_tgt.origin:
        raise ValueError(
            f"mismatched provenance: {pair_src.origin!r} vs {pair_tgt.origin!r}"
        )
    if side not in ("instruction", "output"):
        raise ValueError(f"unknown side: {side}")
    if direction not in ("src2tgt", "tgt2src"):
        raise ValueError(f"unknown direction: {direction}")
    validate_template(template, ["language", "text"])
    src_text = getattr(pair_src, side)
    tgt_text = getattr(pair_tgt, side)
    if not src_text or not tgt_text:
        raise ValueError(f"empty {side} field")
    if direction == "src2tgt":
        from_pair, from_text, to_pair, to_text = pair_src, src_text, pair_tgt, tgt_text
    else:
        from_pair, from_text, to_pair, to_text = pair_tgt, tgt_text, pair_src, src_text
    instruction = template.format(
        language=language_name(to_pair.lang_ai), text=from_text
    )
    return InstructionPair(
        instruction=instruction,
        output=to_text,
        lang_human=from_pair.lang_ai,
        lang_ai=to_pair.lang_ai,
        origin="synthetic_translation",
    )


# ---------------------------------------------------------------------------
# Conversation trees


@dataclass
class TreeNode:
    id: str
    role: str  # "prompter" | "assistant"
    text: str
    rank: int | None = None
    children: list["TreeNode"] = field(default_factory=list)


Thread = tuple  # of (role, text) turns


def tree_from_dict(obj: dict) -> TreeNode:
    return TreeNode(
        id=str(obj["id"]),
        role=obj["role"],
        text=obj["text"],
        rank=obj.get("rank"),
        children=[tree_from_dict(c) for c in obj.get("children", [])],
    )


def tree_to_dict(node: TreeNode) -> dict:
    obj = {"id": node.id, "role": node.role, "text": node.text}
    if node.rank is not None:
        obj["rank"] = node.rank
    obj["children"] = [tree_to_dict(c) for c in node.children]
    return obj


def _validate_tree(node: TreeNode, expected_role: str) -> None:
    if node.role != expected_role:
        raise ValueError(
            f"node {node.id}: expected role {expected_role!r}, got {node.role!r}"
        )
    nxt = "assistant" if expected_role == "prompter" else "prompter"
    for child in node.children:
        _validate_tree(child, nxt)


def prune_oa_tree(tree: TreeNode, max_rank: int = 0) -> list[Thread]:
    """Keep only highly ranked assistant replies; emit surviving threads.

    At each prompter node, assistant children ranked above ``max_rank``
    (or unranked) are removed. Each maximal surviving root-to-node path
    ending in an assistant turn becomes one thread, in pre-order.
    """
    _validate_tree(tree, "prompter")

    def surviving_children(node: TreeNode) -> list[TreeNode]:
        if node.role == "prompter":
            return [
                c for c in node.children
                if c.rank is not None and c.rank <= max_rank
            ]
        return list(node.children)

    threads: list[Thread] = []

    def walk(node: TreeNode, path: list[TreeNode]) -> bool:
        """Returns whether the subtree at ``node`` contains an assistant."""
        path = path + [node]
        kids = surviving_children(node)
        deeper = False
        for child in kids:
            if walk(child, path):
                deeper = True
        if node.role == "assistant" and not deeper:
            threads.append(tuple((n.role, n.text) for n in path))
        return deeper or node.role == "assistant"

    walk(tree, [])
    return threads


def thread_to_pair(thread: Thread, lang: str = "amh",
                   origin: str = "openassistant") -> InstructionPair:
    """Flatten a thread to a single-turn pair with role-prefixed history."""
    if not thread or thread[-1][0] != "assistant":
        raise ValueError("thread must end with an assistant turn")
    prior = thread[:-1]
    instruction = "\n".join(f"{role}: {text}" for role, text in prior)
    return InstructionPair(
        instruction=instruction,
        output=thread[-1][1],
        lang_human=lang,
        lang_ai=lang,
        origin=origin,
    )


# ---------------------------------------------------------------------------
# Visual instruction records


@dataclass(frozen=True)
class VisualInstructionRecord:
    id: str
    image: str
    conversations: tuple[dict, ...]  # {"from": "human"|"gpt", "value": str}

    def __post_init__(self):
        if self.conversations and self.conversations[0].get("from") != "human":
            raise ValueError(f"record {self.id}: first turn must be human")


def visual_record_from_dict(obj: dict) -> VisualInstructionRecord:
    return VisualInstructionRecord(
        id=str(obj["id"]),
        image=obj["image"],
        conversations=tuple(obj["conversations"]),
    )


def visual_record_to_dict(rec: VisualInstructionRecord) -> dict:
    return {
        "id": rec.id,
        "image": rec.image,
        "conversations": list(rec.conversations),
    }


def _translate_segment(segment: str, backend, counter, **kw) -> str:
    """Translate one non-placeholder segment, preserving edge whitespace."""
    core = segment.strip()
    if not core:
        return segment
    lead = segment[: len(segment) - len(segment.lstrip())]
    trail = segment[len(segment.rstrip()) :]
    return lead + translate_text(core, backend, counter, **kw) + trail


def translate_visual_record(
    rec: VisualInstructionRecord,
    backend,
    counter: TokenizerModel,
    **pipeline_kwargs,
) -> VisualInstructionRecord:
    """Translate conversation text; "<image>" placeholders pass through
    byte-for-byte and the image reference is untouched."""
    if not rec.conversations:
        raise ValueError(f"record {rec.id}: zero conversations")
    out_turns = []
    for turn in rec.conversations:
        value = turn["value"]
        parts = []
        cursor = 0
        while True:
            idx = value.find(IMAGE_PLACEHOLDER, cursor)
            if idx < 0:
                parts.append(value[cursor:])
                break
            parts.append(value[cursor:idx])
            parts.append(IMAGE_PLACEHOLDER)
            cursor = idx + len(IMAGE_PLACEHOLDER)
        translated = "".join(
            p if p == IMAGE_PLACEHOLDER
            else _translate_segment(p, backend, counter, **pipeline_kwargs)
            for p in parts
        )
        out_turns.append({**turn, "value": translated})
    return VisualInstructionRecord(rec.id, rec.image, tuple(out_turns))


# ---------------------------------------------------------------------------
# Pretraining mixture


@dataclass(frozen=True)
class MixtureSource:
    tag: str
    path: str
    weight: float


@dataclass
class MixtureConfig:
    sources: list[MixtureSource]
    total_token_budget: int
    seed: int
    counter: TokenizerModel

    def __post_init__(self):
        if self.total_token_budget < 1:
            raise MixtureError("total_token_budget must be >= 1")
        total = sum(s.weight for s in self.sources)
        if abs(total - 1.0) > 1e-9:
            raise MixtureError(f"source weights sum to {total}, expected 1")


def build_pretrain_mixture(cfg: MixtureConfig) -> tuple[list[Document], dict]:
    """Draw documents per source to hit the weighted token budgets.

    Per source, documents are consumed without replacement in
    seeded-shuffle order until the source budget is reached (the last
    document may overshoot; the overshoot is recorded). Sources are
    interleaved by seeded weighted round-robin. Fully deterministic
    given the seed.
    """
    queues: dict[str, list[tuple[Document, int]]] = {}
    budgets: dict[str, int] = {}
    for src in cfg.sources:
        docs = ingest_documents(src.path, format="jsonl")
        counted = [(d, count_tokens(d, cfg.counter)) for d in docs]
        available = sum(c for _, c in counted)
        budget = round(src.weight * cfg.total_token_budget)
        if available < budget:
            raise MixtureError(
                f"source {src.tag}: need {budget} tokens, have {available} "
                f"(short {budget - available})"
            )
        random.Random(f"{cfg.seed}:{src.tag}").shuffle(counted)
        queues[src.tag] = counted
        budgets[src.tag] = budget

    rng = random.Random(cfg.seed)
    emitted_tokens = {s.tag: 0 for s in cfg.sources}
    overshoot = {s.tag: 0 for s in cfg.sources}
    emitted: list[Document] = []
    active = [s for s in cfg.sources if budgets[s.tag] > 0]
    positions = {s.tag: 0 for s in cfg.sources}
    while active:
        src = rng.choices(active, weights=[s.weight for s in active])[0]
        doc, count = queues[src.tag][positions[src.tag]]
        positions[src.tag] += 1
        emitted.append(doc)
        emitted_tokens[src.tag] += count
        if emitted_tokens[src.tag] >= budgets[src.tag]:
            overshoot[src.tag] = emitted_tokens[src.tag] - budgets[src.tag]
            active = [s for s in active if s.tag != src.tag]
    total = sum(emitted_tokens.values())
    manifest = {
        "sources": [
            {
                "tag": s.tag,
                "tokens": emitted_tokens[s.tag],
                "proportion": emitted_tokens[s.tag] / total,
                "overshoot": overshoot[s.tag],
            }
            for s in cfg.sources
        ],
        "total_tokens": total,
        "seed": cfg.seed,
    }
    return emitted, manifest


def manifest_to_json(manifest: dict) -> str:
    return json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# JSONL emitters


def emit_sft_jsonl(records: Iterable, path) -> int:
    """Write pairs, threads, or visual records as JSONL; returns count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            if isinstance(rec, InstructionPair):
                obj = pair_to_dict(rec)
            elif isinstance(rec, VisualInstructionRecord):
                obj = visual_record_to_dict(rec)
            elif isinstance(rec, tuple):  # thread
                obj = {"turns": [{"role": r, "text": t} for r, t in rec]}
            else:
                raise TypeError(f"cannot emit record of type {type(rec).__name__}")
            f.write(json.dumps(obj, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


def read_instruction_pairs(path) -> list[InstructionPair]:
    from .corpus import iter_jsonl

    return [pair_from_dict(obj) for obj in iter_jsonl(path)]


def read_visual_records(path) -> list[VisualInstructionRecord]:
    from .corpus import iter_jsonl

    return [visual_record_from_dict(obj) for obj in iter_jsonl(path)]


def read_threads(path) -> list[Thread]:
    from .corpus import iter_jsonl

    return [
        tuple((t["role"], t["text"]) for t in obj["turns"])
        for obj in iter_jsonl(path)
    ]


def read_conversation_trees(path) -> list[TreeNode]:
    from .corpus import iter_jsonl

    return [tree_from_dict(obj) for obj in iter_jsonl(path)]
