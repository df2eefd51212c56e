"""Batch assembly and the training loop.

Items are tokenized and rendered per epoch (partial ratios resample unless
pinned), collated with PAD padding, and stepped with AdamW under a cosine
schedule. Loss components stream to a JSONL log; a non-finite loss aborts.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Corpus, Example, make_example
from .geometry import Sketch
from .model import Batch, Mode, ModelConfig, SketchVLM, save_model
from .nn import AdamW, TrainConfig, cosine_lr
from .raster import AugmentSpec, rasterize
from .tokens import PAD, encode_constraints, encode_primitives


class TrainDiverged(RuntimeError):
    """Loss became non-finite; carries the offending step's components."""


class EmptyTrainSet(ValueError):
    pass


@dataclass
class Item:
    """One collate-ready training item."""

    text: list[int] | None
    target: list[int]
    image: np.ndarray | None
    target_image: np.ndarray | None


def item_from_example(ex: Example, cfg: ModelConfig) -> Item:
    return Item(
        text=ex.prefix.tokens if cfg.mode is not Mode.IMAGE_CONDITIONED else None,
        target=ex.suffix.tokens,
        image=ex.input_image if cfg.use_image else None,
        target_image=ex.target_image if cfg.idl_enabled() else None,
    )


def item_for_constraints(
    s: Sketch, cfg: ModelConfig, augment: AugmentSpec = AugmentSpec()
) -> Item:
    """Constraint-generation item: full primitives in, constraint tokens out."""
    return Item(
        text=encode_primitives(s).tokens,
        target=encode_constraints(s).tokens,
        image=rasterize(s, augment) if cfg.use_image else None,
        target_image=None,
    )


def _pad_rows(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    valid = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        valid[i, : len(r)] = True
    return out, valid


def collate(items: list[Item], cfg: ModelConfig) -> Batch:
    """Stack items into one Batch, padding token rows with PAD."""
    if not items:
        raise EmptyTrainSet("cannot collate an empty item list")
    if cfg.mode is Mode.IMAGE_CONDITIONED:
        text_tokens = text_valid = None
    else:
        text_tokens, text_valid = _pad_rows([it.text for it in items])
    # Teacher forcing: the model sees target[:-1] and predicts target[1:].
    dec_input, _ = _pad_rows([it.target[:-1] for it in items])
    targets, target_valid = _pad_rows([it.target[1:] for it in items])
    images = (
        np.stack([it.image for it in items]) if items[0].image is not None else None
    )
    target_images = (
        np.stack([it.target_image for it in items])
        if items[0].target_image is not None
        else None
    )
    return Batch(
        images=images,
        text_tokens=text_tokens,
        text_valid=text_valid,
        dec_input=dec_input,
        targets=targets,
        target_valid=target_valid,
        target_images=target_images,
    )


def build_items(
    sketches: list[Sketch],
    cfg: ModelConfig,
    rng: random.Random,
    ratio_override: float | None = None,
    augment: AugmentSpec = AugmentSpec(),
) -> list[Item]:
    """Tokenize and render one epoch's items for the model's task."""
    items: list[Item] = []
    for s in sketches:
        if cfg.mode is Mode.AUTOCONSTRAIN:
            items.append(item_for_constraints(s, cfg, augment))
        else:
            if len(s.entities) < 2:
                continue
            items.append(item_from_example(make_example(s, rng, ratio_override, augment), cfg))
    return items


def train(
    model: SketchVLM,
    corpus: Corpus | list[Sketch],
    cfg: TrainConfig,
    out_dir=None,
    log_path=None,
    augment: AugmentSpec = AugmentSpec(),
    ratio_override: float | None = None,
    resample_each_epoch: bool = True,
    checkpoint_every: int = 1,
    on_epoch_end=None,
) -> list[dict]:
    """Run the full loop and return the per-step metrics history.

    Each record is {step, lr, itc, idl, lm, total}; disabled components log
    as null. on_epoch_end(epoch, model), if given, can return True to stop
    early (the final checkpoint is still written).
    """
    sketches = corpus.sketches if isinstance(corpus, Corpus) else list(corpus)
    rng = random.Random(cfg.seed)
    items = build_items(sketches, model.cfg, rng, ratio_override, augment)
    if not items:
        raise EmptyTrainSet("no trainable sketches in the corpus")
    steps_per_epoch = math.ceil(len(items) / cfg.batch)
    total_steps = steps_per_epoch * cfg.epochs
    opt = AdamW(model.parameters(), cfg)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    history: list[dict] = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            if epoch > 0 and resample_each_epoch:
                items = build_items(sketches, model.cfg, rng, ratio_override, augment)
            order = list(range(len(items)))
            rng.shuffle(order)
            for lo in range(0, len(order), cfg.batch):
                batch = collate([items[i] for i in order[lo : lo + cfg.batch]], model.cfg)
                total, comps = model.total_loss(batch)
                if not np.isfinite(total.data):
                    raise TrainDiverged(
                        f"non-finite loss at step {step}: "
                        + ", ".join(f"{k}={float(v.data)}" for k, v in comps.items())
                    )
                opt.zero_grad()
                total.backward()
                lr = cosine_lr(step, total_steps, cfg.lr0)
                opt.step(lr)
                record = {
                    "step": step,
                    "lr": lr,
                    "itc": float(comps["itc"].data) if "itc" in comps else None,
                    "idl": float(comps["idl"].data) if "idl" in comps else None,
                    "lm": float(comps["lm"].data),
                    "total": float(total.data),
                }
                history.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                step += 1
            if out is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_model(out / f"ep{epoch + 1:03d}", model, step)
            if on_epoch_end is not None and on_epoch_end(epoch, model):
                break
        if out is not None:
            save_model(out / "final", model, step)
    finally:
        if log_fh is not None:
            log_fh.close()
    return history
