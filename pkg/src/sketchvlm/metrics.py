"""Evaluation metrics for generated sketches.

An entity counts as correct when its canonical quantized tokens exactly
equal a ground-truth entity's; duplicates match multiset-style, so a
prediction cannot score twice against one target. The same machinery
evaluates constraints, treating (type, refs) pairs as the items.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import Constraint, Sketch, entity_key


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class MatchReport:
    """Per-sketch match counts: correct, predicted, ground truth."""

    n_c: int
    n_p: int
    m: int


def entity_match(pred: Sketch, truth: Sketch) -> MatchReport:
    """Count predicted entities that exactly match ground truth.

    Matching is multiset intersection over canonical entity tokens, so
    order never matters and a duplicated prediction scores once per
    ground-truth copy.
    """
    cp = Counter(entity_key(e) for e in pred.entities)
    ct = Counter(entity_key(e) for e in truth.entities)
    n_c = sum((cp & ct).values())
    return MatchReport(n_c, len(pred.entities), len(truth.entities))


def _constraint_key(c: Constraint) -> tuple:
    # Refs are sorted: every supported constraint relates its operands
    # symmetrically enough that (0,1) and (1,0) should match.
    return (c.ctype.value, tuple(sorted(c.refs)))


def constraint_match(
    pred: Iterable[Constraint], truth: Iterable[Constraint]
) -> MatchReport:
    """Entity-style matching over (type, refs) constraint identities."""
    cp = Counter(_constraint_key(c) for c in pred)
    ct = Counter(_constraint_key(c) for c in truth)
    n_c = sum((cp & ct).values())
    return MatchReport(n_c, sum(cp.values()), sum(ct.values()))


def _require(reports: Sequence[MatchReport]) -> None:
    if not reports:
        raise EmptyCorpus("no match reports to aggregate")


def sketch_accuracy(reports: Sequence[MatchReport]) -> float:
    """Fraction of sketches reproduced exactly: every entity correct, none extra.

    An empty prediction against an empty target counts as correct.
    """
    _require(reports)
    hits = sum(1 for r in reports if r.n_c == r.m == r.n_p)
    return hits / len(reports)


def entity_accuracy(reports: Sequence[MatchReport]) -> float:
    """Fraction of sketches where at least one entity is correct."""
    _require(reports)
    return sum(1 for r in reports if r.n_c >= 1) / len(reports)


def f1_single(r: MatchReport) -> float:
    """Harmonic precision/recall for one sketch, with zero conventions:
    both sides empty scores 1, any other zero denominator or no match
    scores 0."""
    if r.n_p == 0 and r.m == 0:
        return 1.0
    if r.n_c == 0 or r.n_p == 0 or r.m == 0:
        return 0.0
    prec = r.n_c / r.n_p
    rec = r.n_c / r.m
    return 2.0 * prec * rec / (prec + rec)


def cad_f1(reports: Sequence[MatchReport]) -> float:
    """Mean per-sketch F1 over the corpus."""
    _require(reports)
    return sum(f1_single(r) for r in reports) / len(reports)


def aggregate(reports: Sequence[MatchReport]) -> dict:
    """All three metrics plus corpus size, as the eval CLI emits them."""
    return {
        "ske_acc": sketch_accuracy(reports),
        "ent_acc": entity_accuracy(reports),
        "cad_f1": cad_f1(reports),
        "n": len(reports),
    }
