"""Training-data mixture as a declarative manifest.

Counts are stored as exact integers. ``scale_manifest`` shrinks a manifest
for desk-scale runs with largest-remainder rounding per stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

from .tensor import Rng

STAGES = ("pretrain", "instruct", "generation")

# Published aggregates as (value, rounding unit): "about 1.2M" captions,
# "about 1.5M" conversations, 13K generation pairs, 28K OCR pairs.
PUBLISHED_AGGREGATES = {
    "pretrain": (1_200_000, 100_000),
    "instruct": (1_500_000, 100_000),
    "generation": (13_000, 1_000),
    "ocr": (28_000, 1_000),
}


@dataclass(frozen=True)
class SourceSpec:
    name: str
    count: int
    stage: str
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.count, int) or self.count < 0:
            raise ValueError(f"source {self.name!r}: count must be a non-negative integer, got {self.count!r}")
        if self.stage not in STAGES:
            raise ValueError(f"source {self.name!r}: unknown stage {self.stage!r}")
        object.__setattr__(self, "tags", tuple(self.tags))


@dataclass(frozen=True)
class Manifest:
    sources: tuple[SourceSpec, ...]
    published: bool = False  # claims to reproduce the published mixture

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))

    @property
    def stage_totals(self) -> dict[str, int]:
        totals = dict.fromkeys(STAGES, 0)
        for s in self.sources:
            totals[s.stage] += s.count
        return totals

    def tagged_total(self, tag: str) -> int:
        return sum(s.count for s in self.sources if tag in s.tags)

    def instruct_totals(self) -> dict[str, int]:
        """Instruction total with and without the generation stage."""
        t = self.stage_totals
        return {"exclusive": t["instruct"], "inclusive": t["instruct"] + t["generation"]}

    def __getitem__(self, name: str) -> SourceSpec:
        for s in self.sources:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"sources": [{"name": s.name, "count": s.count, "stage": s.stage, "tags": list(s.tags)}
                            for s in self.sources]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict, published: bool = False) -> "Manifest":
        return cls(tuple(SourceSpec(s["name"], s["count"], s["stage"], tuple(s.get("tags", ())))
                         for s in d["sources"]), published)

    @classmethod
    def from_json(cls, text: str, published: bool = False) -> "Manifest":
        return cls.from_dict(json.loads(text), published)

    def summary_table(self) -> str:
        totals = self.stage_totals
        rows = [("stage", "sources", "items")]
        for stage in STAGES:
            rows.append((stage, str(sum(s.stage == stage for s in self.sources)), f"{totals[stage]:,}"))
        inst = self.instruct_totals()
        rows.append(("instruct+generation", "", f"{inst['inclusive']:,}"))
        rows.append(("ocr (tag)", str(sum("ocr" in s.tags for s in self.sources)), f"{self.tagged_total('ocr'):,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join(f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows)


def build_paper_manifest() -> Manifest:
    src = SourceSpec
    return Manifest((
        src("llava-cc3m-558k", 558_000, "pretrain", ("caption",)),
        src("allava-caption", 695_000, "pretrain", ("caption", "gpt4v")),
        src("llava-mix", 643_000, "instruct", ("conversation", "excludes-textcaps-21k")),
        src("sharegpt4v", 100_000, "instruct", ("qa",)),
        src("laion-gpt4v", 10_000, "instruct", ("caption", "gpt4v")),
        src("allava-instruct", 700_000, "instruct", ("qa", "gpt4v")),
        src("lima-openassistant2", 6_000, "instruct", ("text-only", "conversation")),
        src("docvqa", 10_000, "instruct", ("ocr", "qa")),
        src("chartqa", 4_000, "instruct", ("ocr", "qa")),
        src("dvqa", 10_000, "instruct", ("ocr", "qa")),
        src("ai2d", 4_000, "instruct", ("ocr", "qa")),
        src("gen-recaption", 8_000, "generation", ("text-only", "recaption")),
        src("gen-incontext", 5_000, "generation", ("text-only", "incontext")),
    ), published=True)


def _round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)).__floor__())


def scale_manifest(m: Manifest, factor, seed: int = 0) -> Manifest:
    """Scale every count by ``factor`` (0 < factor <= 1).

    Within each stage the scaled total is ``round(factor * total)`` (half up)
    and the leftover units go to the sources with the largest fractional
    remainders; equal remainders are ordered by a seeded shuffle.
    """
    factor = Fraction(str(factor).strip())  # via str so 0.001 means 1/1000
    if not 0 < factor <= 1:
        raise ValueError(f"scale factor must satisfy 0 < factor <= 1, got {factor}")
    rng = Rng(seed)
    counts = {}
    for stage in STAGES:
        members = [s for s in m.sources if s.stage == stage]
        if not members:
            continue
        quotas = [factor * s.count for s in members]
        floors = [int(q.__floor__()) for q in quotas]
        target = _round_half_up(factor * sum(s.count for s in members))
        leftover = target - sum(floors)
        order = list(range(len(members)))
        # Fisher-Yates with the seeded stream, then a stable sort by remainder
        for i in range(len(order) - 1, 0, -1):
            j = rng.next_u64() % (i + 1)
            order[i], order[j] = order[j], order[i]
        order.sort(key=lambda i: quotas[i] - floors[i], reverse=True)
        for i in order[:leftover]:
            floors[i] += 1
        counts.update({s.name: c for s, c in zip(members, floors)})
    return Manifest(tuple(SourceSpec(s.name, counts[s.name], s.stage, s.tags) for s in m.sources))


@dataclass(frozen=True)
class Finding:
    kind: str      # "duplicate-name" | "zero-count" | "aggregate-mismatch" | "rounding-note"
    message: str


def validate_manifest(m: Manifest) -> list[Finding]:
    findings = []
    seen = set()
    for s in m.sources:
        if s.name in seen:
            findings.append(Finding("duplicate-name", f"source name {s.name!r} appears more than once"))
        seen.add(s.name)
        if s.count == 0:
            findings.append(Finding("zero-count", f"source {s.name!r} has zero items"))
    if not m.published:
        return findings

    totals = m.stage_totals
    inst = m.instruct_totals()
    actual = {
        "pretrain": [totals["pretrain"]],
        "instruct": [inst["exclusive"], inst["inclusive"]],
        "generation": [totals["generation"]],
        "ocr": [m.tagged_total("ocr")],
    }
    for key, (value, unit) in PUBLISHED_AGGREGATES.items():
        sums = actual[key]
        if value in sums:
            continue
        if any(abs(s - value) < unit for s in sums):
            findings.append(Finding(
                "rounding-note",
                f"{key}: exact sum {sums[0]:,} is published as about {value:,} "
                f"(rounded to the nearest {unit:,} it would be {_round_half_up(Fraction(sums[0], unit)) * unit:,})"))
        else:
            findings.append(Finding("aggregate-mismatch", f"{key}: sums {sums} diverge from published {value:,}"))
    return findings
