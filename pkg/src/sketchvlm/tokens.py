"""Flat token serialization for sketches.

Two streams share one 85-token vocabulary: a primitive stream listing the
entities, and a constraint stream that spells out each constraint as the
primitive blocks of the entities it references followed by a type token.
Decoders are total functions: malformed input yields flags and a truncated
result, never an exception, because generated sequences are untrusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .geometry import (
    COORD_MAX,
    COORD_MIN,
    Constraint,
    ConstraintKind,
    Entity,
    EntityKind,
    GeometryError,
    InvalidSketch,
    POINT_COUNT,
    QPoint,
    Sketch,
    canonicalize_entity,
)

PAD = 0
# 1..64 are coordinate tokens.
CONSTRAINT_BASE = 65  # 65..77, one per constraint kind in declaration order
BOS = 78
EOS = 79
ENT_SEP = 80
CON_SEP = 81
KIND_LINE = 82
KIND_ARC = 83
KIND_CIRCLE = 84
VOCAB_SIZE = 85

CONSTRAINT_TOKEN = {
    kind: CONSTRAINT_BASE + i for i, kind in enumerate(ConstraintKind)
}
TOKEN_CONSTRAINT = {tok: kind for kind, tok in CONSTRAINT_TOKEN.items()}

KIND_TOKEN = {
    EntityKind.LINE: KIND_LINE,
    EntityKind.ARC: KIND_ARC,
    EntityKind.CIRCLE: KIND_CIRCLE,
}
TOKEN_KIND = {tok: kind for kind, tok in KIND_TOKEN.items()}


class DanglingRef(GeometryError):
    """Constraint references an entity index that does not exist."""


class Stream(Enum):
    PRIMITIVE = "primitive"
    CONSTRAINT = "constraint"


class DecodeFlag(Enum):
    MALFORMED_TAIL = "MalformedTail"
    UNRESOLVED_REF = "UnresolvedRef"
    UNKNOWN_TYPE = "UnknownType"


@dataclass
class TokenSeq:
    tokens: list[int]
    stream: Stream = Stream.PRIMITIVE


def _check_encodable(s: Sketch) -> None:
    for e in s.entities:
        for p in e.points:
            if not (COORD_MIN <= p.qx <= COORD_MAX and COORD_MIN <= p.qy <= COORD_MAX):
                raise InvalidSketch(f"coordinate {p.as_tuple()} outside token range")


def _entity_block(e: Entity) -> list[int]:
    block = [KIND_TOKEN[e.kind]]
    for p in e.points:
        block.extend((p.qx, p.qy))
    block.append(ENT_SEP)
    return block


def encode_primitives(s: Sketch) -> TokenSeq:
    """Serialize entities to [BOS, block..., EOS].

    Each block is a kind token, the (qx, qy) pairs in point order, then an
    entity separator. Raises InvalidSketch if any coordinate has no token.
    """
    _check_encodable(s)
    out = [BOS]
    for e in s.entities:
        out.extend(_entity_block(e))
    out.append(EOS)
    return TokenSeq(out, Stream.PRIMITIVE)


def _parse_block(tokens: list[int], i: int) -> tuple[Entity | None, int]:
    """Try to parse one entity block at position i.

    Returns (entity, next_index), or (None, i) if the tokens at i do not
    form a complete well-typed block.
    """
    kind = TOKEN_KIND.get(tokens[i]) if i < len(tokens) else None
    if kind is None:
        return None, i
    n = POINT_COUNT[kind]
    end = i + 1 + 2 * n
    coords = tokens[i + 1 : end]
    if len(coords) < 2 * n or any(
        not (COORD_MIN <= c <= COORD_MAX) for c in coords
    ):
        return None, i
    if end >= len(tokens) or tokens[end] != ENT_SEP:
        return None, i
    pts = tuple(QPoint(coords[k], coords[k + 1]) for k in range(0, 2 * n, 2))
    return Entity(kind, pts), end + 1


def decode_primitives(t: TokenSeq | list[int]) -> tuple[Sketch, list[DecodeFlag]]:
    """Parse a primitive stream back into entities.

    Greedy and total: parsing stops at the first EOS; a malformed tail
    (wrong point count, unexpected token, missing terminator) drops the
    incomplete entity and reports MALFORMED_TAIL.
    """
    tokens = t.tokens if isinstance(t, TokenSeq) else list(t)
    flags: list[DecodeFlag] = []
    entities: list[Entity] = []
    i = 0
    if i < len(tokens) and tokens[i] == BOS:
        i += 1
    else:
        flags.append(DecodeFlag.MALFORMED_TAIL)
    while i < len(tokens):
        if tokens[i] == EOS:
            return Sketch(tuple(entities)), flags
        ent, j = _parse_block(tokens, i)
        if ent is None:
            flags.append(DecodeFlag.MALFORMED_TAIL)
            return Sketch(tuple(entities)), flags
        entities.append(ent)
        i = j
    # Ran out of tokens without an EOS.
    flags.append(DecodeFlag.MALFORMED_TAIL)
    return Sketch(tuple(entities)), flags


def encode_constraints(s: Sketch) -> TokenSeq:
    """Serialize constraints to [BOS, (ref blocks..., type, CON_SEP)..., EOS].

    Each constraint spells out the full primitive block of every referenced
    entity in ref order, then its type token.
    """
    _check_encodable(s)
    m = len(s.entities)
    out = [BOS]
    for c in s.constraints:
        for r in c.refs:
            if r < 0 or r >= m:
                raise DanglingRef(f"constraint ref {r} in a {m}-entity sketch")
            out.extend(_entity_block(s.entities[r]))
        out.append(CONSTRAINT_TOKEN[c.ctype])
        out.append(CON_SEP)
    out.append(EOS)
    return TokenSeq(out, Stream.CONSTRAINT)


def _resolution_tables(s: Sketch) -> tuple[dict[tuple, int], dict[tuple, int]]:
    # Lowest index wins for duplicate entities.
    verbatim: dict[tuple, int] = {}
    canonical: dict[tuple, int] = {}
    for i, e in enumerate(s.entities):
        verbatim.setdefault(tuple(_entity_block(e)), i)
        canonical.setdefault(tuple(_entity_block(canonicalize_entity(e))), i)
    return verbatim, canonical


def decode_constraints(
    t: TokenSeq | list[int], s: Sketch
) -> tuple[list[Constraint], list[DecodeFlag]]:
    """Parse a constraint stream against the entity table of s.

    Decoded blocks resolve to entity indices by exact token equality first,
    then by canonical (direction-insensitive) equality, so entities written
    verbatim win over their reversed twins. A block matching nothing flags
    UNRESOLVED_REF and drops its constraint, an unexpected token in type
    position flags UNKNOWN_TYPE and skips to the next separator. Total:
    never raises on arbitrary token lists.
    """
    tokens = t.tokens if isinstance(t, TokenSeq) else list(t)
    verbatim, canonical = _resolution_tables(s)
    flags: list[DecodeFlag] = []
    out: list[Constraint] = []
    i = 0
    if i < len(tokens) and tokens[i] == BOS:
        i += 1
    else:
        flags.append(DecodeFlag.MALFORMED_TAIL)
    refs: list[int] = []
    dropped = False  # current constraint had an unresolvable block
    while i < len(tokens):
        tok = tokens[i]
        if tok == EOS:
            if refs or dropped:
                flags.append(DecodeFlag.MALFORMED_TAIL)
            return out, flags
        if tok in TOKEN_KIND:
            ent, j = _parse_block(tokens, i)
            if ent is None:
                flags.append(DecodeFlag.MALFORMED_TAIL)
                return out, flags
            idx = verbatim.get(tuple(_entity_block(ent)))
            if idx is None:
                idx = canonical.get(tuple(_entity_block(canonicalize_entity(ent))))
            if idx is None:
                flags.append(DecodeFlag.UNRESOLVED_REF)
                dropped = True
            else:
                refs.append(idx)
            i = j
            continue
        if tok in TOKEN_CONSTRAINT:
            if i + 1 < len(tokens) and tokens[i + 1] == CON_SEP:
                if not dropped:
                    out.append(Constraint(TOKEN_CONSTRAINT[tok], tuple(refs)))
                refs, dropped = [], False
                i += 2
                continue
            flags.append(DecodeFlag.MALFORMED_TAIL)
            return out, flags
        # Neither a block start nor a known type token where one belongs.
        flags.append(DecodeFlag.UNKNOWN_TYPE)
        refs, dropped = [], False
        while i < len(tokens) and tokens[i] != CON_SEP:
            if tokens[i] == EOS:
                return out, flags
            i += 1
        i += 1  # skip the separator itself
    flags.append(DecodeFlag.MALFORMED_TAIL)
    return out, flags


def tokens_to_line(tokens: list[int]) -> str:
    """Render a token list as whitespace-separated decimal integers."""
    return " ".join(str(t) for t in tokens)


def line_to_tokens(line: str) -> list[int]:
    return [int(w) for w in line.split()]
