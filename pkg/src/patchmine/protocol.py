"""Generation-trigger and OCR-reference text formats.

Generation replies carry ``<GEN>`` followed (after optional whitespace) by
``<h>caption</h>``; the caption is handed to an image generator and the
markup is stripped from the visible text. OCR-augmented conversations end
with ``\\nReference OCR token:t1,t2,...``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

TRIGGER = "<GEN>"
OPEN = "<h>"
CLOSE = "</h>"
OCR_PREFIX = "Reference OCR token:"
OCR_SEPARATOR = "\n"
OCR_PATTERN = re.compile(r"\nReference OCR token:[^,\n]+(,[^,\n]+)*\Z")

NUM_SD_EXAMPLES = 5
NUM_QUERY_TEMPLATES = 3


class ProtocolError(ValueError):
    """Input violates the text grammar."""


class MalformedDirectiveError(ProtocolError):
    def __init__(self, offset: int):
        super().__init__(f"{TRIGGER} at byte {offset} is not followed by a {OPEN}...{CLOSE} block")
        self.offset = offset


class UnterminatedCaptionError(ProtocolError):
    def __init__(self, offset: int):
        super().__init__(f"{OPEN} at byte {offset} is never closed")
        self.offset = offset


class CaptionCharsetError(ProtocolError):
    pass


class NoTokensError(ProtocolError):
    pass


class TokenCharsetError(ProtocolError):
    pass


class ArityError(ProtocolError):
    pass


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


@dataclass(frozen=True)
class ParsedOutput:
    text: str
    directive: str | None = None
    spans: tuple[tuple[int, int], ...] = ()
    markup: tuple[str, ...] = field(default=(), repr=False)

    def reconstruct(self) -> str:
        """Reinsert the removed markup at its byte spans."""
        out = self.text.encode("utf-8")
        for (start, _), piece in zip(self.spans, self.markup):
            out = out[:start] + piece.encode("utf-8") + out[start:]
        return out.decode("utf-8")

    def to_json_dict(self) -> dict:
        return {"text": self.text, "directive": self.directive, "spans": [list(s) for s in self.spans]}


def parse_generation(text: str) -> ParsedOutput:
    """Extract the first generation directive and excise its markup.

    Only whitespace may separate ``<GEN>`` from ``<h>``. Anything after the
    first directive, including further triggers, is left untouched.
    """
    start = text.find(TRIGGER)
    if start < 0:
        return ParsedOutput(text)
    i = start + len(TRIGGER)
    while i < len(text) and text[i].isspace():
        i += 1
    if not text.startswith(OPEN, i):
        raise MalformedDirectiveError(_byte_offset(text, start))
    body = i + len(OPEN)
    close = text.find(CLOSE, body)
    if close < 0:
        raise UnterminatedCaptionError(_byte_offset(text, i))
    end = close + len(CLOSE)
    span = (_byte_offset(text, start), _byte_offset(text, end))
    return ParsedOutput(text=text[:start] + text[end:], directive=text[body:close],
                        spans=(span,), markup=(text[start:end],))


def emit_generation(reply: str, caption: str) -> str:
    if "<" in caption or ">" in caption:
        raise CaptionCharsetError(f"caption may not contain '<' or '>': {caption!r}")
    return f"{reply} {TRIGGER} {OPEN}{caption}{CLOSE}"


def append_ocr_tokens(conversation: str, tokens: list[str]) -> str:
    if not tokens:
        raise NoTokensError("at least one OCR token is required")
    for tok in tokens:
        if not tok or "," in tok or "\n" in tok:
            raise TokenCharsetError(f"OCR tokens must be non-empty without ',' or newline: {tok!r}")
    return conversation + OCR_SEPARATOR + OCR_PREFIX + ",".join(tokens)


def parse_ocr_tokens(text: str) -> tuple[str, list[str]]:
    """Split an OCR-augmented conversation back into (conversation, tokens)."""
    match = OCR_PATTERN.search(text)
    if match is None:
        raise ProtocolError("text does not end with an OCR reference suffix")
    suffix = match.group(0)[len(OCR_SEPARATOR) + len(OCR_PREFIX):]
    return text[:match.start()], suffix.split(",")


class QueryTask(str, Enum):
    RECAPTION = "recaption"
    INCONTEXT = "incontext"


QUERY_HEADERS = {
    QueryTask.RECAPTION: (
        "You are given a detailed image description. Infer the short request a user "
        "would have typed to obtain this image, and rewrite the description as a concise "
        "Stable Diffusion prompt. Follow the style of the example prompts and the "
        "phrasing of the example user queries."
    ),
    QueryTask.INCONTEXT: (
        "You are given a conversation. Write a Stable Diffusion prompt for an image that "
        "fits the conversation context. Follow the style of the example prompts."
    ),
}


def _numbered(title: str, items: list[str]) -> str:
    return title + "\n" + "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


def assemble_gpt4_query(task: QueryTask | str, payload: str, sd_examples: list[str],
                        query_templates: list[str] | None = None) -> str:
    """Fill the data-generation query: header, numbered examples, payload.

    ``recaption`` takes exactly 5 example prompts and 3 query templates;
    ``incontext`` takes 5 example prompts and no templates.
    """
    task = QueryTask(task)
    query_templates = list(query_templates or [])
    if len(sd_examples) != NUM_SD_EXAMPLES:
        raise ArityError(f"need exactly {NUM_SD_EXAMPLES} SD examples, got {len(sd_examples)}")
    want = NUM_QUERY_TEMPLATES if task is QueryTask.RECAPTION else 0
    if len(query_templates) != want:
        raise ArityError(f"{task.value} needs exactly {want} query templates, got {len(query_templates)}")
    for item in [*sd_examples, *query_templates]:
        if "\n" in item:
            raise ProtocolError(f"examples must be single-line: {item!r}")
    blocks = [QUERY_HEADERS[task], _numbered("Example prompts:", sd_examples)]
    if query_templates:
        blocks.append(_numbered("Example user queries:", query_templates))
    if payload:
        label = "Description:" if task is QueryTask.RECAPTION else "Conversation:"
        blocks.append(f"{label}\n{payload}")
    return "\n\n".join(blocks) + "\n"
