"""Geometric data model for parametric 2D sketches.

A sketch is an ordered list of primitive entities (lines, arcs, circles)
plus a list of typed constraints referencing those entities. Entities are
stored in quantized integer coordinates on a 64x64 grid; helpers here map
real-world coordinates into the unit bounding box and onto that grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

COORD_MIN = 1
COORD_MAX = 64
COORD_BINS = COORD_MAX - COORD_MIN  # 63 intervals across the unit box

# Tolerance when checking that a coordinate sits inside the unit box.
BOX_EPS = 1e-9


class GeometryError(ValueError):
    """Base class for sketch geometry errors."""


class EmptySketch(GeometryError):
    pass


class DegenerateExtent(GeometryError):
    pass


class OutOfBox(GeometryError):
    pass


class TokenOutOfRange(GeometryError):
    pass


class InvalidSketch(GeometryError):
    """Sketch cannot be represented (coordinate outside the token grid)."""


class EntityKind(Enum):
    LINE = "line"
    ARC = "arc"
    CIRCLE = "circle"


# Number of points each entity kind carries: line = start/end, arc =
# start/mid/end, circle = four points on the circumference.
POINT_COUNT = {EntityKind.LINE: 2, EntityKind.ARC: 3, EntityKind.CIRCLE: 4}


class ConstraintKind(Enum):
    COINCIDENT = "coincident"
    CONCENTRIC = "concentric"
    EQUAL = "equal"
    FIX = "fix"
    HORIZONTAL = "horizontal"
    MIDPOINT = "midpoint"
    NORMAL = "normal"
    OFFSET = "offset"
    PARALLEL = "parallel"
    PERPENDICULAR = "perpendicular"
    QUADRANT = "quadrant"
    TANGENT = "tangent"
    VERTICAL = "vertical"


# How many entities each constraint kind references.
CONSTRAINT_ARITY = {
    kind: 1 if kind in (ConstraintKind.HORIZONTAL, ConstraintKind.VERTICAL, ConstraintKind.FIX) else 2
    for kind in ConstraintKind
}


@dataclass(frozen=True)
class Point:
    """A point in continuous coordinates (world or unit-box space)."""

    x: float
    y: float


@dataclass(frozen=True)
class QPoint:
    """A point on the quantized grid, both coordinates in [1, 64]."""

    qx: int
    qy: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.qx, self.qy)


@dataclass(frozen=True)
class Entity:
    """A typed primitive with a fixed number of quantized points."""

    kind: EntityKind
    points: tuple[QPoint, ...]

    def __post_init__(self):
        expected = POINT_COUNT[self.kind]
        if len(self.points) != expected:
            raise GeometryError(
                f"{self.kind.value} needs {expected} points, got {len(self.points)}"
            )


@dataclass(frozen=True)
class Constraint:
    """A typed relation over entity indices."""

    ctype: ConstraintKind
    refs: tuple[int, ...]


@dataclass(frozen=True)
class WorldEntity:
    """An entity in continuous coordinates, prior to quantization."""

    kind: EntityKind
    points: tuple[Point, ...]

    def __post_init__(self):
        expected = POINT_COUNT[self.kind]
        if len(self.points) != expected:
            raise GeometryError(
                f"{self.kind.value} needs {expected} points, got {len(self.points)}"
            )


@dataclass(frozen=True)
class Sketch:
    entities: tuple[Entity, ...]
    constraints: tuple[Constraint, ...] = field(default_factory=tuple)


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def normalize(raw: Sequence[WorldEntity]) -> list[WorldEntity]:
    """Map world-coordinate entities into the unit bounding box.

    The axis-aligned bounding box of all points is translated to be
    centered at the origin and uniformly scaled so its longer side spans
    exactly 1.0. Aspect ratio is preserved.

    Raises:
        EmptySketch: no entities given.
        DegenerateExtent: all points coincide (nothing to scale).
    """
    if not raw:
        raise EmptySketch("cannot normalize an empty entity list")
    xs = [p.x for e in raw for p in e.points]
    ys = [p.y for e in raw for p in e.points]
    min_x, max_x = min(xs), max(xs)
    min_y, max_y = min(ys), max(ys)
    extent = max(max_x - min_x, max_y - min_y)
    if extent <= 0.0:
        raise DegenerateExtent("all points coincide; bounding box has no extent")
    cx = (min_x + max_x) / 2.0
    cy = (min_y + max_y) / 2.0
    scale = 1.0 / extent
    return [
        WorldEntity(
            e.kind,
            tuple(Point((p.x - cx) * scale, (p.y - cy) * scale) for p in e.points),
        )
        for e in raw
    ]


def quantize(p: Point) -> QPoint:
    """Quantize a unit-box point onto the [1, 64] integer grid.

    Uses round-half-up so the box center (0, 0) lands on token 33 and the
    corners map exactly to 1 and 64.
    """
    for v in (p.x, p.y):
        if v < -0.5 - BOX_EPS or v > 0.5 + BOX_EPS:
            raise OutOfBox(f"coordinate {v} outside [-0.5, 0.5]")
    # Clamp away the tolerance slack before binning.
    x = min(max(p.x, -0.5), 0.5)
    y = min(max(p.y, -0.5), 0.5)
    return QPoint(
        COORD_MIN + _round_half_up((x + 0.5) * COORD_BINS),
        COORD_MIN + _round_half_up((y + 0.5) * COORD_BINS),
    )


def dequantize(q: QPoint) -> Point:
    """Map a grid point back to the center of its unit-box bin."""
    for v in (q.qx, q.qy):
        if not (COORD_MIN <= v <= COORD_MAX):
            raise TokenOutOfRange(f"token {v} outside [{COORD_MIN}, {COORD_MAX}]")
    return Point(
        (q.qx - COORD_MIN) / COORD_BINS - 0.5,
        (q.qy - COORD_MIN) / COORD_BINS - 0.5,
    )


def quantize_entity(e: WorldEntity) -> Entity:
    return Entity(e.kind, tuple(quantize(p) for p in e.points))


def sketch_from_world(
    raw: Sequence[WorldEntity], constraints: Iterable[Constraint] = ()
) -> Sketch:
    """Normalize then quantize world entities into a Sketch."""
    return Sketch(
        tuple(quantize_entity(e) for e in normalize(raw)),
        tuple(constraints),
    )


def canonicalize_entity(e: Entity) -> Entity:
    """Put an entity's points into canonical order.

    Line endpoints and circle points are sorted lexicographically by
    (qx, qy). Arcs keep their on-curve mid-point in the middle slot and
    sort only the start/end pair. Idempotent.
    """
    if e.kind is EntityKind.LINE:
        pts = tuple(sorted(e.points, key=QPoint.as_tuple))
    elif e.kind is EntityKind.ARC:
        start, mid, end = e.points
        if end.as_tuple() < start.as_tuple():
            start, end = end, start
        pts = (start, mid, end)
    else:
        pts = tuple(sorted(e.points, key=QPoint.as_tuple))
    return Entity(e.kind, pts)


def entity_key(e: Entity) -> tuple:
    """Hashable canonical identity of an entity, for matching and dedup."""
    c = canonicalize_entity(e)
    return (c.kind.value, tuple(p.as_tuple() for p in c.points))


def _collinear(a: QPoint, b: QPoint, c: QPoint) -> bool:
    # Integer cross product; exact.
    return (b.qx - a.qx) * (c.qy - a.qy) - (b.qy - a.qy) * (c.qx - a.qx) == 0


@dataclass(frozen=True)
class Violation:
    rule: str
    scope: str  # "entity" | "constraint" | "sketch"
    index: int | None = None

    def __str__(self) -> str:
        return self.rule if self.index is None else f"{self.rule}@{self.index}"


def validate(s: Sketch) -> list[Violation]:
    """Check all sketch invariants; violations are data, not errors."""
    out: list[Violation] = []
    if not s.entities:
        out.append(Violation("EmptySketch", "sketch"))
    for i, e in enumerate(s.entities):
        if any(
            not (COORD_MIN <= v <= COORD_MAX) for p in e.points for v in p.as_tuple()
        ):
            out.append(Violation("TokenOutOfRange", "entity", i))
            continue
        if e.kind is EntityKind.LINE and e.points[0] == e.points[1]:
            out.append(Violation("DegenerateLine", "entity", i))
        elif e.kind is EntityKind.ARC and _collinear(*e.points):
            out.append(Violation("CollinearArc", "entity", i))
        elif e.kind is EntityKind.CIRCLE and len(set(p.as_tuple() for p in e.points)) == 1:
            out.append(Violation("DegenerateCircle", "entity", i))
    m = len(s.entities)
    for j, c in enumerate(s.constraints):
        if len(c.refs) != CONSTRAINT_ARITY[c.ctype]:
            out.append(Violation("WrongArity", "constraint", j))
        if any(r < 0 or r >= m for r in c.refs):
            out.append(Violation("DanglingRef", "constraint", j))
    return out


def sketch_to_dict(s: Sketch) -> dict:
    """Serialize to the corpus JSON object format."""
    return {
        "entities": [
            {"kind": e.kind.value, "pts": [[p.qx, p.qy] for p in e.points]}
            for e in s.entities
        ],
        "constraints": [
            {"type": c.ctype.value, "refs": list(c.refs)} for c in s.constraints
        ],
    }


def sketch_from_dict(d: dict) -> Sketch:
    """Parse the corpus JSON object format; raises GeometryError on bad shape."""
    try:
        entities = tuple(
            Entity(
                EntityKind(ed["kind"]),
                tuple(QPoint(int(x), int(y)) for x, y in ed["pts"]),
            )
            for ed in d["entities"]
        )
        constraints = tuple(
            Constraint(ConstraintKind(cd["type"]), tuple(int(r) for r in cd["refs"]))
            for cd in d.get("constraints", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed sketch object: {exc}") from exc
    return Sketch(entities, constraints)
