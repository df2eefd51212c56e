"""Autoregressive decoding: greedy and nucleus sampling, plus the
sketch-level completion and constraint-generation entry points.

Encoders run once per input; the decoder re-runs over the growing
sequence each step. Decodes are batched where the caller has many inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Constraint, Sketch
from .metrics import MatchReport, constraint_match, entity_match
from .model import Mode, SketchVLM
from .raster import AugmentSpec, rasterize
from .tokens import (
    BOS,
    EOS,
    PAD,
    DecodeFlag,
    Stream,
    TokenSeq,
    decode_constraints,
    decode_primitives,
    encode_primitives,
)

MAX_GEN = 256  # hard cap on generated sequence length, BOS included


class CheckpointMismatch(RuntimeError):
    """Model mode/config does not fit the requested operation or inputs."""


class InvalidP(ValueError):
    pass


def nucleus_filter(probs: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest probability-sorted token set with cumulative mass >= p.

    Returns (token ids, renormalized probabilities). Ties sort stably by
    token id, so the p->0 limit picks the same token as greedy argmax.
    """
    if not (0.0 < p <= 1.0):
        raise InvalidP(f"p must be in (0, 1], got {p}")
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    # Slack absorbs float dust so a mass summing to exactly p closes the set.
    cut = min(int(np.searchsorted(csum, p - 1e-12, side="left")), probs.size - 1)
    ids = order[: cut + 1]
    kept = probs[ids]
    return ids, kept / kept.sum()


def _softmax_row(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _prep_inputs(
    model: SketchVLM,
    texts: list[list[int]] | None,
    images: np.ndarray | None,
):
    """Validate generation inputs against the checkpoint and encode once."""
    cfg = model.cfg
    if cfg.use_image and images is None:
        raise CheckpointMismatch("checkpoint expects images but none were given")
    if cfg.mode is not Mode.IMAGE_CONDITIONED and texts is None:
        raise CheckpointMismatch("checkpoint expects token input but none was given")
    text_tokens = text_valid = None
    if texts is not None and cfg.mode is not Mode.IMAGE_CONDITIONED:
        width = max(len(t) for t in texts)
        text_tokens = np.full((len(texts), width), PAD, dtype=np.int64)
        text_valid = np.zeros((len(texts), width), dtype=bool)
        for i, t in enumerate(texts):
            text_tokens[i, : len(t)] = t
            text_valid[i, : len(t)] = True
    return model.fuse(images, text_tokens, text_valid)


def _finish(row: np.ndarray) -> list[int]:
    """Trim one decoded row at its EOS; drop the padding beyond it."""
    toks = row.tolist()
    if EOS in toks:
        return toks[: toks.index(EOS) + 1]
    return toks


def greedy_decode_batch(
    model: SketchVLM,
    texts: list[list[int]] | None,
    images: np.ndarray | None,
) -> list[list[int]]:
    """Argmax decoding for a batch of inputs; ties pick the lowest token id.

    Every row starts at BOS and stops at its own EOS, at MAX_GEN tokens, or
    when the decoder runs out of positions, whichever comes first.
    """
    fused, fused_valid, _, _ = _prep_inputs(model, texts, images)
    n = fused.shape[0]
    cap = min(MAX_GEN, model.cfg.max_text_len + 1)
    dec = np.full((n, 1), BOS, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    while dec.shape[1] < cap and not done.all():
        logits = model.step_logits(dec, fused, fused_valid)
        nxt = np.argmax(logits, axis=-1).astype(np.int64)
        nxt[done] = PAD
        dec = np.concatenate([dec, nxt[:, None]], axis=1)
        done |= nxt == EOS
    return [_finish(row) for row in dec]


def greedy_decode(
    model: SketchVLM,
    text: list[int] | TokenSeq | None = None,
    image: np.ndarray | None = None,
) -> TokenSeq:
    """Single-input greedy decode; see greedy_decode_batch."""
    toks = text.tokens if isinstance(text, TokenSeq) else text
    images = image[None] if image is not None else None
    out = greedy_decode_batch(model, [toks] if toks is not None else None, images)
    stream = (
        Stream.CONSTRAINT if model.cfg.mode is Mode.AUTOCONSTRAIN else Stream.PRIMITIVE
    )
    return TokenSeq(out[0], stream)


@dataclass
class SampleSet:
    """k sampled completions plus their total log-probabilities."""

    samples: list[TokenSeq]
    log_probs: list[float]

    @property
    def best(self) -> TokenSeq:
        return self.samples[int(np.argmax(self.log_probs))]


def nucleus_sample(
    model: SketchVLM,
    text: list[int] | TokenSeq | None = None,
    image: np.ndarray | None = None,
    p: float = 0.9,
    seed: int = 0,
    k: int = 1,
) -> SampleSet:
    """Draw k completions by top-p sampling, deterministic per seed.

    Each step keeps the smallest probability-sorted nucleus with mass >= p
    and samples from it renormalized. Log-probabilities accumulate under
    the full (unrestricted) distribution.
    """
    if not (0.0 < p <= 1.0):
        raise InvalidP(f"p must be in (0, 1], got {p}")
    toks = text.tokens if isinstance(text, TokenSeq) else text
    images = image[None] if image is not None else None
    fused, fused_valid, _, _ = _prep_inputs(
        model, [toks] if toks is not None else None, images
    )
    rng = np.random.default_rng(seed)
    stream = (
        Stream.CONSTRAINT if model.cfg.mode is Mode.AUTOCONSTRAIN else Stream.PRIMITIVE
    )
    cap = min(MAX_GEN, model.cfg.max_text_len + 1)
    samples: list[TokenSeq] = []
    log_probs: list[float] = []
    for _ in range(k):
        dec = [BOS]
        logp = 0.0
        while len(dec) < cap:
            logits = model.step_logits(
                np.array([dec], dtype=np.int64), fused, fused_valid
            )[0]
            probs = _softmax_row(logits)
            ids, renormed = nucleus_filter(probs, p)
            tok = int(rng.choice(ids, p=renormed))
            logp += float(np.log(probs[tok]))
            dec.append(tok)
            if tok == EOS:
                break
        samples.append(TokenSeq(dec, stream))
        log_probs.append(logp)
    return SampleSet(samples, log_probs)


# -- sketch-level operations -------------------------------------------------


@dataclass
class CompletionResult:
    sketch: Sketch
    tokens: TokenSeq
    flags: list[DecodeFlag]
    report: MatchReport | None


def complete_many(
    model: SketchVLM,
    partials: list[Sketch],
    truths: list[Sketch] | None = None,
    augment: AugmentSpec = AugmentSpec(),
) -> list[CompletionResult]:
    """Greedy-complete a batch of partial sketches in one decode."""
    if model.cfg.mode not in (Mode.AUTOCOMPLETE, Mode.IMAGE_CONDITIONED):
        raise CheckpointMismatch(
            f"completion needs a completion checkpoint, got mode {model.cfg.mode.value}"
        )
    texts = (
        [encode_primitives(s).tokens for s in partials]
        if model.cfg.mode is not Mode.IMAGE_CONDITIONED
        else None
    )
    images = (
        np.stack([rasterize(s, augment) for s in partials])
        if model.cfg.use_image
        else None
    )
    rows = greedy_decode_batch(model, texts, images)
    out: list[CompletionResult] = []
    for i, (partial, row) in enumerate(zip(partials, rows)):
        gen, flags = decode_primitives(row)
        completed = Sketch(partial.entities + gen.entities, partial.constraints)
        report = (
            entity_match(completed, truths[i]) if truths is not None else None
        )
        out.append(
            CompletionResult(completed, TokenSeq(row, Stream.PRIMITIVE), flags, report)
        )
    return out


def complete(
    model: SketchVLM,
    partial: Sketch,
    truth: Sketch | None = None,
    augment: AugmentSpec = AugmentSpec(),
) -> CompletionResult:
    """Extend a partial sketch with greedily generated entities."""
    return complete_many(
        model, [partial], [truth] if truth is not None else None, augment
    )[0]


@dataclass
class ConstraintResult:
    constraints: list[Constraint]
    tokens: TokenSeq
    flags: list[DecodeFlag]
    report: MatchReport | None


def autoconstrain_many(
    model: SketchVLM,
    sketches: list[Sketch],
    with_report: bool = False,
    augment: AugmentSpec = AugmentSpec(),
) -> list[ConstraintResult]:
    """Generate constraints for full sketches in one batched decode."""
    if model.cfg.mode is not Mode.AUTOCONSTRAIN:
        raise CheckpointMismatch(
            f"constraint generation needs a constraint checkpoint, got mode "
            f"{model.cfg.mode.value}"
        )
    texts = [encode_primitives(s).tokens for s in sketches]
    images = (
        np.stack([rasterize(s, augment) for s in sketches])
        if model.cfg.use_image
        else None
    )
    rows = greedy_decode_batch(model, texts, images)
    out: list[ConstraintResult] = []
    for s, row in zip(sketches, rows):
        cons, flags = decode_constraints(row, s)
        report = constraint_match(cons, s.constraints) if with_report else None
        out.append(
            ConstraintResult(cons, TokenSeq(row, Stream.CONSTRAINT), flags, report)
        )
    return out


def autoconstrain(
    model: SketchVLM,
    s: Sketch,
    with_report: bool = False,
    augment: AugmentSpec = AugmentSpec(),
) -> ConstraintResult:
    """Generate the constraint list for one full sketch."""
    return autoconstrain_many(model, [s], with_report, augment)[0]
