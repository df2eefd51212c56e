"""Corpus handling: JSONL ingest/export, dedup, content-hash splits,
synthetic sketch generation, and partial-sketch example sampling.

Splitting is a pure function of sketch content, so re-ingesting an
exported split puts every sketch back where it came from.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import (
    Constraint,
    ConstraintKind,
    Entity,
    EntityKind,
    GeometryError,
    QPoint,
    Sketch,
    canonicalize_entity,
    sketch_from_dict,
    sketch_to_dict,
    validate,
)
from .raster import AugmentSpec, RenderMode, rasterize
from .tokens import TokenSeq, encode_constraints, encode_primitives, tokens_to_line


class ParseError(ValueError):
    """A corpus line that cannot be parsed; carries its 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class TooFewEntities(ValueError):
    pass


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


# Relative split weights for train/val/test hash bucketing.
SPLIT_WEIGHTS = (626236, 22031, 21979)


@dataclass(frozen=True)
class SkipReport:
    line: int
    reason: str


@dataclass
class Corpus:
    sketches: list[Sketch]
    split: Split
    provenance: str


def canonical_token_key(s: Sketch) -> str:
    """Canonical token rendering of a sketch, used for dedup and splitting."""
    canon = Sketch(tuple(canonicalize_entity(e) for e in s.entities), s.constraints)
    prim = tokens_to_line(encode_primitives(canon).tokens)
    cons = tokens_to_line(encode_constraints(canon).tokens)
    return prim + "|" + cons


def content_hash(s: Sketch) -> str:
    return hashlib.sha256(canonical_token_key(s).encode()).hexdigest()


def split_of(s: Sketch) -> Split:
    """Assign a split from the content hash alone; stable across runs."""
    u = int(content_hash(s)[:12], 16) / float(16**12)
    total = sum(SPLIT_WEIGHTS)
    if u < SPLIT_WEIGHTS[0] / total:
        return Split.TRAIN
    if u < (SPLIT_WEIGHTS[0] + SPLIT_WEIGHTS[1]) / total:
        return Split.VAL
    return Split.TEST


@dataclass
class IngestResult:
    corpora: dict[Split, Corpus]
    skipped: list[SkipReport]

    def __getitem__(self, split: Split) -> Corpus:
        return self.corpora[split]

    @property
    def size(self) -> int:
        return sum(len(c.sketches) for c in self.corpora.values())


def _provenance(path, sketches: list[Sketch]) -> str:
    h = hashlib.sha256()
    for s in sketches:
        h.update(canonical_token_key(s).encode())
        h.update(b"\n")
    return f"{path}#{h.hexdigest()[:16]}"


def ingest(path, strict: bool = False) -> IngestResult:
    """Read a JSONL sketch file into deduplicated, hash-split corpora.

    Invalid lines (bad JSON, malformed objects, validation failures) are
    skipped with a report, or raised as ParseError when strict.
    """
    kept: list[Sketch] = []
    seen: set[str] = set()
    skipped: list[SkipReport] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                s = sketch_from_dict(json.loads(raw))
            except (json.JSONDecodeError, GeometryError) as exc:
                if strict:
                    raise ParseError(lineno, str(exc)) from exc
                skipped.append(SkipReport(lineno, str(exc)))
                continue
            violations = validate(s)
            if violations:
                reason = "invalid sketch: " + ", ".join(str(v) for v in violations)
                if strict:
                    raise ParseError(lineno, reason)
                skipped.append(SkipReport(lineno, reason))
                continue
            key = canonical_token_key(s)
            if key in seen:
                continue
            seen.add(key)
            kept.append(s)
    buckets: dict[Split, list[Sketch]] = {sp: [] for sp in Split}
    for s in kept:
        buckets[split_of(s)].append(s)
    corpora = {
        sp: Corpus(sketches, sp, _provenance(path, sketches))
        for sp, sketches in buckets.items()
    }
    return IngestResult(corpora, skipped)


def export(sketches, path) -> None:
    """Write sketches (or a Corpus) as one JSON object per line."""
    if isinstance(sketches, Corpus):
        sketches = sketches.sketches
    with open(path, "w", encoding="utf-8") as fh:
        for s in sketches:
            fh.write(json.dumps(sketch_to_dict(s)) + "\n")


# -- synthetic sketches ------------------------------------------------------


def _rand_point(rng: random.Random) -> tuple[int, int]:
    return (rng.randint(1, 64), rng.randint(1, 64))


def _synth_line(rng: random.Random, pen) -> Entity:
    if pen is not None and rng.random() < 0.7:
        start = pen
    else:
        start = _rand_point(rng)
    style = rng.random()
    if style < 0.25:  # horizontal
        end = (rng.randint(1, 64), start[1])
        while end[0] == start[0]:
            end = (rng.randint(1, 64), start[1])
    elif style < 0.5:  # vertical
        end = (start[0], rng.randint(1, 64))
        while end[1] == start[1]:
            end = (start[0], rng.randint(1, 64))
    else:
        end = _rand_point(rng)
        while end == start:
            end = _rand_point(rng)
    return Entity(EntityKind.LINE, (QPoint(*start), QPoint(*end)))


def _synth_arc(rng: random.Random, pen) -> Entity:
    if pen is not None and rng.random() < 0.7:
        start = pen
    else:
        start = _rand_point(rng)
    while True:
        end = _rand_point(rng)
        if end == start:
            continue
        # Bow the midpoint out perpendicular to the chord.
        mx = (start[0] + end[0]) / 2.0
        my = (start[1] + end[1]) / 2.0
        dx, dy = end[0] - start[0], end[1] - start[1]
        norm = math.hypot(dx, dy)
        bulge = rng.uniform(2.0, 10.0) * rng.choice((-1.0, 1.0))
        mid = (
            min(max(int(math.floor(mx - dy / norm * bulge + 0.5)), 1), 64),
            min(max(int(math.floor(my + dx / norm * bulge + 0.5)), 1), 64),
        )
        a, b, c = start, mid, end
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if mid != start and mid != end and cross != 0:
            return Entity(EntityKind.ARC, (QPoint(*start), QPoint(*mid), QPoint(*end)))


def _synth_circle(rng: random.Random) -> Entity:
    r = rng.randint(3, 15)
    cx = rng.randint(1 + r, 64 - r)
    cy = rng.randint(1 + r, 64 - r)
    pts = ((cx + r, cy), (cx, cy + r), (cx - r, cy), (cx, cy - r))
    return Entity(EntityKind.CIRCLE, tuple(QPoint(*p) for p in pts))


def _anchor_points(e: Entity) -> list[tuple[int, int]]:
    """Points that count for coincidence: endpoints, not arc midpoints."""
    if e.kind is EntityKind.ARC:
        return [e.points[0].as_tuple(), e.points[2].as_tuple()]
    return [p.as_tuple() for p in e.points]


MAX_SYNTH_CONSTRAINTS = 10


def _derive_constraints(entities: tuple[Entity, ...]) -> tuple[Constraint, ...]:
    """Read constraints off the geometry: shared anchors and axis alignment."""
    out: list[Constraint] = []
    for i, a in enumerate(entities):
        if a.kind is EntityKind.LINE:
            (x0, y0), (x1, y1) = (p.as_tuple() for p in a.points)
            if y0 == y1:
                out.append(Constraint(ConstraintKind.HORIZONTAL, (i,)))
            elif x0 == x1:
                out.append(Constraint(ConstraintKind.VERTICAL, (i,)))
        for j in range(i + 1, len(entities)):
            if set(_anchor_points(a)) & set(_anchor_points(entities[j])):
                out.append(Constraint(ConstraintKind.COINCIDENT, (i, j)))
    return tuple(out[:MAX_SYNTH_CONSTRAINTS])


def synth_sketch(rng: random.Random) -> Sketch:
    """One well-formed random sketch: 2-10 chained entities plus the
    constraints its own geometry implies."""
    n = rng.randint(2, 10)
    entities: list[Entity] = []
    pen = None
    for _ in range(n):
        roll = rng.random()
        if roll < 0.5:
            e = _synth_line(rng, pen)
            pen = e.points[1].as_tuple()
        elif roll < 0.8:
            e = _synth_arc(rng, pen)
            pen = e.points[2].as_tuple()
        else:
            e = _synth_circle(rng)
        entities.append(e)
    ents = tuple(entities)
    return Sketch(ents, _derive_constraints(ents))


def synth_corpus(n: int, seed: int) -> Corpus:
    """n distinct well-formed sketches, deterministic per seed."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = random.Random(seed)
    out: list[Sketch] = []
    seen: set[str] = set()
    while len(out) < n:
        s = synth_sketch(rng)
        key = canonical_token_key(s)
        if key in seen:
            continue
        seen.add(key)
        out.append(s)
    return Corpus(out, Split.TRAIN, f"synth:seed={seed}:n={n}")


# -- partial-sketch examples -------------------------------------------------


@dataclass
class Example:
    """One autocompletion training item.

    The prefix is a subset of the sketch's entities in original order; the
    suffix is the complement, also in original order. Images are renders of
    the prefix (model input) and the full sketch (reconstruction target).
    """

    prefix: TokenSeq
    suffix: TokenSeq
    input_image: np.ndarray
    target_image: np.ndarray
    ratio: float
    prefix_sketch: Sketch
    suffix_sketch: Sketch


def make_example(
    s: Sketch,
    rng: random.Random,
    ratio_override: float | None = None,
    augment: AugmentSpec = AugmentSpec(),
) -> Example:
    """Split a sketch into a visible prefix and a to-be-generated suffix.

    Keeps k = clamp(round(r·m), 1, m-1) entities, r drawn from U(0.2, 0.8)
    unless overridden, so both parts are always non-empty.
    """
    m = len(s.entities)
    if m < 2:
        raise TooFewEntities(f"need at least 2 entities, got {m}")
    r = rng.uniform(0.2, 0.8) if ratio_override is None else float(ratio_override)
    k = min(max(math.floor(r * m + 0.5), 1), m - 1)
    keep = sorted(rng.sample(range(m), k))
    keep_set = set(keep)
    prefix_sketch = Sketch(tuple(s.entities[i] for i in keep))
    suffix_sketch = Sketch(tuple(s.entities[i] for i in range(m) if i not in keep_set))
    if augment.mode is RenderMode.PRECISE:
        spec = augment
    else:
        # Fresh jitter per example, still deterministic through rng.
        spec = AugmentSpec(augment.mode, rng.randrange(2**31))
    return Example(
        prefix=encode_primitives(prefix_sketch),
        suffix=encode_primitives(suffix_sketch),
        input_image=rasterize(prefix_sketch, spec),
        target_image=rasterize(s, spec),
        ratio=r,
        prefix_sketch=prefix_sketch,
        suffix_sketch=suffix_sketch,
    )
