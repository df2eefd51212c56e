"""Tests for token serialization: layouts, round trips, decoder totality."""

import random

import pytest

from sketchvlm.geometry import (
    Constraint,
    ConstraintKind,
    Entity,
    EntityKind,
    QPoint,
    Sketch,
)
from sketchvlm.tokens import (
    BOS,
    CON_SEP,
    CONSTRAINT_TOKEN,
    DanglingRef,
    DecodeFlag,
    ENT_SEP,
    EOS,
    InvalidSketch,
    KIND_ARC,
    KIND_CIRCLE,
    KIND_LINE,
    PAD,
    Stream,
    VOCAB_SIZE,
    decode_constraints,
    decode_primitives,
    encode_constraints,
    encode_primitives,
    line_to_tokens,
    tokens_to_line,
)


def qline(a, b):
    return Entity(EntityKind.LINE, (QPoint(*a), QPoint(*b)))


def random_sketch(rng, max_entities=6):
    kinds = list(EntityKind)
    counts = {EntityKind.LINE: 2, EntityKind.ARC: 3, EntityKind.CIRCLE: 4}
    ents = []
    for _ in range(rng.randint(1, max_entities)):
        kind = rng.choice(kinds)
        ents.append(
            Entity(
                kind,
                tuple(
                    QPoint(rng.randint(1, 64), rng.randint(1, 64))
                    for _ in range(counts[kind])
                ),
            )
        )
    return Sketch(tuple(ents))


class TestVocab:
    def test_constraint_token_map_verbatim(self):
        assert CONSTRAINT_TOKEN == {
            ConstraintKind.COINCIDENT: 65,
            ConstraintKind.CONCENTRIC: 66,
            ConstraintKind.EQUAL: 67,
            ConstraintKind.FIX: 68,
            ConstraintKind.HORIZONTAL: 69,
            ConstraintKind.MIDPOINT: 70,
            ConstraintKind.NORMAL: 71,
            ConstraintKind.OFFSET: 72,
            ConstraintKind.PARALLEL: 73,
            ConstraintKind.PERPENDICULAR: 74,
            ConstraintKind.QUADRANT: 75,
            ConstraintKind.TANGENT: 76,
            ConstraintKind.VERTICAL: 77,
        }

    def test_ranges_disjoint(self):
        control = {PAD, BOS, EOS, ENT_SEP, CON_SEP, KIND_LINE, KIND_ARC, KIND_CIRCLE}
        coords = set(range(1, 65))
        ctypes = set(CONSTRAINT_TOKEN.values())
        assert control & coords == set()
        assert control & ctypes == set()
        assert coords & ctypes == set()
        assert max(control | coords | ctypes) == VOCAB_SIZE - 1


class TestEncodePrimitives:
    def test_single_line_layout(self):
        seq = encode_primitives(Sketch((qline((1, 1), (64, 64)),)))
        assert seq.tokens == [78, 82, 1, 1, 64, 64, 80, 79]
        assert seq.stream is Stream.PRIMITIVE

    def test_circle_length(self):
        circ = Entity(
            EntityKind.CIRCLE,
            (QPoint(30, 20), QPoint(40, 30), QPoint(30, 40), QPoint(20, 30)),
        )
        assert len(encode_primitives(Sketch((circ,))).tokens) == 12

    def test_length_formula(self):
        rng = random.Random(1)
        for _ in range(50):
            s = random_sketch(rng)
            want = 2 + sum(2 + 2 * len(e.points) for e in s.entities)
            assert len(encode_primitives(s).tokens) == want

    def test_unencodable_coordinate(self):
        with pytest.raises(InvalidSketch):
            encode_primitives(Sketch((qline((0, 1), (2, 2)),)))


class TestDecodePrimitives:
    def test_well_formed(self):
        s, flags = decode_primitives([78, 82, 1, 1, 64, 64, 80, 79])
        assert flags == []
        assert s.entities == (qline((1, 1), (64, 64)),)

    def test_incomplete_entity_dropped(self):
        s, flags = decode_primitives([78, 82, 1, 1, 79])
        assert s.entities == ()
        assert flags == [DecodeFlag.MALFORMED_TAIL]

    def test_missing_eos(self):
        s, flags = decode_primitives([78, 82, 1, 1, 64, 64, 80])
        assert len(s.entities) == 1
        assert flags == [DecodeFlag.MALFORMED_TAIL]

    def test_missing_bos(self):
        s, flags = decode_primitives([82, 1, 1, 64, 64, 80, 79])
        assert len(s.entities) == 1
        assert DecodeFlag.MALFORMED_TAIL in flags

    def test_round_trip_10k(self):
        rng = random.Random(42)
        for _ in range(10_000):
            s = random_sketch(rng)
            out, flags = decode_primitives(encode_primitives(s))
            assert flags == []
            assert out.entities == s.entities

    def test_fuzz_never_raises_and_reencodes(self):
        rng = random.Random(99)
        for _ in range(10_000):
            n = rng.randint(0, 40)
            toks = [rng.randint(0, VOCAB_SIZE - 1) for _ in range(n)]
            s, _ = decode_primitives(toks)
            encode_primitives(s)  # decoded output always re-encodes


class TestEncodeConstraints:
    def two_lines(self):
        return Sketch(
            (qline((1, 1), (10, 1)), qline((10, 1), (10, 20))),
            (Constraint(ConstraintKind.COINCIDENT, (0, 1)),),
        )

    def test_layout(self):
        seq = encode_constraints(self.two_lines())
        assert seq.stream is Stream.CONSTRAINT
        assert seq.tokens == [
            78,
            82, 1, 1, 10, 1, 80,
            82, 10, 1, 10, 20, 80,
            65, 81,
            79,
        ]

    def test_vertical_token_appears_once(self):
        s = Sketch(
            (qline((5, 1), (5, 30)),),
            (Constraint(ConstraintKind.VERTICAL, (0,)),),
        )
        toks = encode_constraints(s).tokens
        assert toks.count(77) == 1

    def test_dangling_ref_raises(self):
        s = Sketch(
            (qline((1, 1), (2, 2)),),
            (Constraint(ConstraintKind.TANGENT, (0, 3)),),
        )
        with pytest.raises(DanglingRef):
            encode_constraints(s)


class TestDecodeConstraints:
    def all_13_sketch(self):
        ents = (
            qline((1, 1), (20, 1)),
            qline((20, 1), (20, 30)),
            Entity(EntityKind.ARC, (QPoint(30, 1), QPoint(40, 10), QPoint(50, 1))),
            Entity(
                EntityKind.CIRCLE,
                (QPoint(30, 40), QPoint(40, 50), QPoint(30, 60), QPoint(20, 50)),
            ),
        )
        unary = {ConstraintKind.HORIZONTAL, ConstraintKind.VERTICAL, ConstraintKind.FIX}
        cons = tuple(
            Constraint(k, (0,) if k in unary else (0, 1)) for k in ConstraintKind
        )
        return Sketch(ents, cons)

    def test_round_trip_all_13_types(self):
        s = self.all_13_sketch()
        decoded, flags = decode_constraints(encode_constraints(s), s)
        assert flags == []
        assert tuple(decoded) == s.constraints

    def test_round_trip_multi_entity(self):
        s = Sketch(
            (
                qline((1, 1), (20, 1)),
                qline((20, 1), (20, 30)),
                Entity(EntityKind.ARC, (QPoint(30, 1), QPoint(40, 10), QPoint(50, 1))),
            ),
            (
                Constraint(ConstraintKind.COINCIDENT, (0, 1)),
                Constraint(ConstraintKind.TANGENT, (1, 2)),
            ),
        )
        decoded, flags = decode_constraints(encode_constraints(s), s)
        assert flags == []
        assert tuple(decoded) == s.constraints

    def test_resolution_is_order_insensitive(self):
        # The block stores entity points verbatim, but matching uses the
        # canonical form, so a reversed line still resolves.
        s = Sketch(
            (qline((1, 1), (20, 1)),),
            (Constraint(ConstraintKind.HORIZONTAL, (0,)),),
        )
        toks = [78, 82, 20, 1, 1, 1, 80, 69, 81, 79]
        decoded, flags = decode_constraints(toks, s)
        assert flags == []
        assert decoded == [Constraint(ConstraintKind.HORIZONTAL, (0,))]

    def test_unresolved_block_drops_constraint(self):
        s = Sketch((qline((1, 1), (20, 1)),))
        toks = [78, 82, 5, 5, 9, 9, 80, 69, 81, 79]
        decoded, flags = decode_constraints(toks, s)
        assert decoded == []
        assert flags == [DecodeFlag.UNRESOLVED_REF]

    def test_unknown_type_token(self):
        s = Sketch((qline((1, 1), (20, 1)),))
        toks = [78, 82, 1, 1, 20, 1, 80, 99, 81, 79]
        decoded, flags = decode_constraints(toks, s)
        assert decoded == []
        assert flags == [DecodeFlag.UNKNOWN_TYPE]

    def test_duplicate_entities_resolve_to_lowest_index(self):
        dup = qline((1, 1), (9, 9))
        s = Sketch((dup, dup), (Constraint(ConstraintKind.EQUAL, (0, 1)),))
        decoded, flags = decode_constraints(encode_constraints(s), s)
        assert flags == []
        assert decoded == [Constraint(ConstraintKind.EQUAL, (0, 0))]

    def test_reversed_twin_keeps_its_own_index(self):
        # Two entities that differ only in traversal direction must not
        # alias: a verbatim block match beats the canonical fallback.
        s = Sketch(
            (qline((6, 10), (6, 26)), qline((6, 26), (6, 10))),
            (Constraint(ConstraintKind.COINCIDENT, (0, 1)),),
        )
        decoded, flags = decode_constraints(encode_constraints(s), s)
        assert flags == []
        assert decoded == [Constraint(ConstraintKind.COINCIDENT, (0, 1))]

    def test_fuzz_never_raises(self):
        rng = random.Random(123)
        s = self.all_13_sketch()
        for _ in range(10_000):
            n = rng.randint(0, 40)
            toks = [rng.randint(0, VOCAB_SIZE - 1) for _ in range(n)]
            decode_constraints(toks, s)


class TestTextLines:
    def test_round_trip(self):
        toks = [78, 82, 1, 1, 64, 64, 80, 79]
        assert line_to_tokens(tokens_to_line(toks)) == toks
