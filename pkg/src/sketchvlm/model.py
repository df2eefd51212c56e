"""Multimodal encoder-decoder for sketch completion and constraint generation.

A vision encoder over 32x32 patches and a bidirectional text encoder feed a
fused sequence (concatenation along the sequence axis). A causal decoder
generates target tokens against that fused memory, and a lightweight image
decoder reconstructs the completed sketch image from 49 mask queries. Three
objectives: contrastive image-text alignment (ITC), pixel reconstruction
(IDL), and token likelihood (LM); which ones apply depends on the mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from .geometry import TokenOutOfRange
from .nn import (
    Embedding,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    ShapeMismatch,
    Tensor,
    TransformerBlock,
    concat,
)
from .nn.layers import causal_mask, padding_mask
from .nn.tensor import fused_log_softmax, mse_to
from .tokens import VOCAB_SIZE


class Mode(Enum):
    AUTOCOMPLETE = "complete"
    AUTOCONSTRAIN = "constrain"
    IMAGE_CONDITIONED = "image"


class WrongMode(RuntimeError):
    pass


class ModeMismatch(RuntimeError):
    pass


class BatchTooSmall(ValueError):
    pass


class EmptyTarget(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    image_dec_layers: int = 1
    patch: int = 32
    image_side: int = 224
    vocab_size: int = VOCAB_SIZE
    max_text_len: int = 256
    itc_temperature: float = 0.07
    mode: Mode = Mode.AUTOCOMPLETE
    # Ablation switches: the text-only variant drops the image channel
    # entirely; the loss switches drop single objectives.
    use_image: bool = True
    use_itc: bool = True
    use_idl: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.image_side % self.patch != 0:
            raise ValueError("image_side must be divisible by patch")
        if self.itc_temperature <= 0:
            raise ValueError("itc temperature must be positive")

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * 3

    def itc_enabled(self) -> bool:
        return (
            self.use_itc
            and self.use_image
            and self.mode is not Mode.IMAGE_CONDITIONED
        )

    def idl_enabled(self) -> bool:
        return (
            self.use_idl and self.use_image and self.mode is not Mode.AUTOCONSTRAIN
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["mode"] = Mode(d["mode"])
        return ModelConfig(**d)


@dataclass
class Batch:
    """Model-facing training batch. Unused channels stay None."""

    images: np.ndarray | None  # [B,224,224,3] input (partial-sketch) renders
    text_tokens: np.ndarray | None  # [B,Lt] prefix/primitive tokens
    text_valid: np.ndarray | None  # [B,Lt] bool, False at PAD
    dec_input: np.ndarray  # [B,Ld] teacher-forcing input (BOS + target[:-1])
    targets: np.ndarray  # [B,Ld] target tokens
    target_valid: np.ndarray  # [B,Ld] bool, False at PAD
    target_images: np.ndarray | None = None  # [B,224,224,3] complete renders

    @property
    def size(self) -> int:
        return self.dec_input.shape[0]


def patchify(images: np.ndarray, patch: int = 32) -> np.ndarray:
    """[B,S,S,3] -> [B,(S/p)^2,p*p*3], patches in row-major order."""
    B, S, S2, C = images.shape
    if S != S2 or S % patch:
        raise ShapeMismatch(f"cannot patchify shape {images.shape}")
    g = S // patch
    x = images.reshape(B, g, patch, g, patch, C)
    return x.swapaxes(2, 3).reshape(B, g * g, patch * patch * C)


def unpatchify(flat: Tensor, side: int = 224, patch: int = 32) -> Tensor:
    """Inverse of patchify, on the autodiff tensor."""
    B = flat.shape[0]
    g = side // patch
    x = flat.reshape(B, g, g, patch, patch, 3)
    return x.swapaxes(2, 3).reshape(B, side, side, 3)


class ImageEncoder(Module):
    """Patch embedding, learned positions, encoder blocks, projection."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_dim, cfg.d_model, rng)
        self.pos = Tensor(
            rng.normal(0.0, 0.02, size=(cfg.n_patches, cfg.d_model)),
            requires_grad=True,
        )
        self.blocks = ModuleList(
            TransformerBlock(cfg.d_model, cfg.n_heads, rng)
            for _ in range(cfg.enc_layers)
        )
        self.norm = LayerNorm(cfg.d_model)
        # At full scale this bridges vision width down to the text width;
        # here both are d_model, so it is just the lightweight projection.
        self.project = Linear(cfg.d_model, cfg.d_model, rng)

    def __call__(self, images: np.ndarray) -> Tensor:
        if images.shape[1:] != (self.cfg.image_side, self.cfg.image_side, 3):
            raise ShapeMismatch(f"bad image batch shape {images.shape}")
        x = Tensor(patchify(images, self.cfg.patch))
        h = self.patch_embed(x) + self.pos
        for block in self.blocks:
            h = block(h)
        return self.project(self.norm(h))


class TextEncoder(Module):
    """Token embedding, learned positions, bidirectional blocks."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.pos = Tensor(
            rng.normal(0.0, 0.02, size=(cfg.max_text_len, cfg.d_model)),
            requires_grad=True,
        )
        self.blocks = ModuleList(
            TransformerBlock(cfg.d_model, cfg.n_heads, rng)
            for _ in range(cfg.enc_layers)
        )
        self.norm = LayerNorm(cfg.d_model)

    def __call__(self, tokens: np.ndarray, valid: np.ndarray) -> Tensor:
        B, L = tokens.shape
        if L > self.cfg.max_text_len:
            raise ShapeMismatch(f"text length {L} exceeds {self.cfg.max_text_len}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size:
            raise TokenOutOfRange("text token outside the vocabulary")
        h = self.embed(tokens) + self.pos[0:L]
        mask = padding_mask(valid)
        for block in self.blocks:
            h = block(h, mask=mask)
        return self.norm(h)


class TokenDecoder(Module):
    """Causal decoder with cross-attention into the fused memory."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.pos = Tensor(
            rng.normal(0.0, 0.02, size=(cfg.max_text_len, cfg.d_model)),
            requires_grad=True,
        )
        self.blocks = ModuleList(
            TransformerBlock(cfg.d_model, cfg.n_heads, rng, cross=True)
            for _ in range(cfg.dec_layers)
        )
        self.norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.vocab_size, rng)

    def __call__(
        self, dec_input: np.ndarray, memory: Tensor, memory_valid: np.ndarray
    ) -> Tensor:
        B, L = dec_input.shape
        if L > self.cfg.max_text_len:
            raise ShapeMismatch(f"target length {L} exceeds {self.cfg.max_text_len}")
        h = self.embed(dec_input) + self.pos[0:L]
        self_mask = causal_mask(L)
        mem_mask = padding_mask(memory_valid)
        for block in self.blocks:
            h = block(h, mask=self_mask, memory=memory, memory_mask=mem_mask)
        return self.head(self.norm(h))


class ImageDecoder(Module):
    """Reconstructs the complete-sketch image from fused state.

    49 learned mask queries join the fused sequence; after the blocks, the
    query outputs map through a per-patch linear head to pixels.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.mask_token = Tensor(
            rng.normal(0.0, 0.02, size=(1, 1, cfg.d_model)), requires_grad=True
        )
        self.query_pos = Tensor(
            rng.normal(0.0, 0.02, size=(cfg.n_patches, cfg.d_model)),
            requires_grad=True,
        )
        self.blocks = ModuleList(
            TransformerBlock(cfg.d_model, cfg.n_heads, rng)
            for _ in range(cfg.image_dec_layers)
        )
        self.norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.patch_dim, rng)

    def __call__(self, memory: Tensor, memory_valid: np.ndarray) -> Tensor:
        B = memory.shape[0]
        queries = self.mask_token + self.query_pos + Tensor(np.zeros((B, 1, 1)))
        h = concat([memory, queries], axis=1)
        n_q = self.cfg.n_patches
        valid = np.concatenate(
            [memory_valid, np.ones((B, n_q), dtype=bool)], axis=1
        )
        mask = padding_mask(valid)
        for block in self.blocks:
            h = block(h, mask=mask)
        out = self.head(self.norm(h[:, -n_q:, :]))
        return unpatchify(out, self.cfg.image_side, self.cfg.patch)


def _l2_normalize(x: Tensor) -> Tensor:
    norm = ((x * x).sum(axis=-1, keepdims=True) + 1e-12).sqrt()
    return x / norm


def _cross_entropy_diagonal(sim: Tensor) -> Tensor:
    """Mean -log softmax-row probability of the matching (diagonal) pair."""
    n = sim.shape[0]
    logp = fused_log_softmax(sim, axis=-1)
    eye = Tensor(np.eye(n))
    return -(logp * eye).sum() / float(n)


class SketchVLM(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        if cfg.use_image:
            self.image_encoder = ImageEncoder(cfg, rng)
            if cfg.idl_enabled():
                self.image_decoder = ImageDecoder(cfg, rng)
        if cfg.mode is not Mode.IMAGE_CONDITIONED:
            self.text_encoder = TextEncoder(cfg, rng)
        self.decoder = TokenDecoder(cfg, rng)
        if cfg.itc_enabled():
            # Learned temperature, stored as its log so positivity is free.
            self.log_tau = Tensor(
                np.array(math.log(cfg.itc_temperature)), requires_grad=True
            )

    # -- encoders ---------------------------------------------------------

    def fuse(
        self,
        images: np.ndarray | None,
        text_tokens: np.ndarray | None,
        text_valid: np.ndarray | None,
    ) -> tuple[Tensor, np.ndarray, Tensor | None, Tensor | None]:
        """Run the enabled encoders and concatenate along the sequence axis.

        Returns (fused, fused_valid, image_emb, text_emb); the embeddings
        come back for the contrastive loss.
        """
        img_emb = txt_emb = None
        parts: list[Tensor] = []
        valids: list[np.ndarray] = []
        if self.cfg.use_image:
            if images is None:
                raise ModeMismatch("mode requires images but batch has none")
            img_emb = self.image_encoder(images)
            parts.append(img_emb)
            valids.append(np.ones(img_emb.shape[:2], dtype=bool))
        if self.cfg.mode is not Mode.IMAGE_CONDITIONED:
            if text_tokens is None or text_valid is None:
                raise ModeMismatch("mode requires text tokens but batch has none")
            txt_emb = self.text_encoder(text_tokens, text_valid)
            parts.append(txt_emb)
            valids.append(text_valid)
        if not parts:
            raise ModeMismatch("model has no enabled encoder")
        fused = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        return fused, np.concatenate(valids, axis=1), img_emb, txt_emb

    def decode_image(self, fused: Tensor, fused_valid: np.ndarray) -> Tensor:
        if not self.cfg.idl_enabled():
            raise WrongMode("image decoding is disabled in this mode")
        return self.image_decoder(fused, fused_valid)

    # -- losses -------------------------------------------------------------

    def itc_loss(
        self, image_emb: Tensor, text_emb: Tensor, text_valid: np.ndarray
    ) -> Tensor:
        """Symmetric contrastive loss over in-batch pairs.

        Pooled, normalized embeddings score against each other at learned
        temperature; each direction is a softmax cross-entropy against the
        identity matching, and the two directions average.
        """
        n = image_emb.shape[0]
        if n < 2:
            raise BatchTooSmall("contrastive loss needs at least 2 pairs")
        img = _l2_normalize(image_emb.mean(axis=1))
        w = text_valid.astype(np.float64)[:, :, None]
        pooled = (text_emb * Tensor(w)).sum(axis=1) / Tensor(
            w.sum(axis=1).clip(min=1.0)
        )
        txt = _l2_normalize(pooled)
        tau = self.log_tau.exp()
        sim = (img @ txt.swapaxes(0, 1)) / tau
        return (_cross_entropy_diagonal(sim) + _cross_entropy_diagonal(sim.swapaxes(0, 1))) * 0.5

    @staticmethod
    def idl_loss(decoded: Tensor, target_images: np.ndarray) -> Tensor:
        if decoded.shape != target_images.shape:
            raise ShapeMismatch(
                f"decoded {decoded.shape} vs target {target_images.shape}"
            )
        return mse_to(decoded, target_images)

    @staticmethod
    def lm_loss(logits: Tensor, targets: np.ndarray, valid: np.ndarray) -> Tensor:
        """Mean negative log-likelihood over non-PAD target positions."""
        n_valid = valid.sum()
        if n_valid == 0:
            raise EmptyTarget("no unmasked target tokens")
        logp = fused_log_softmax(logits, axis=-1)
        vocab = logits.shape[-1]
        onehot = np.eye(vocab)[targets] * valid[..., None]
        picked = (logp * Tensor(onehot)).sum()
        return -picked / float(n_valid)

    def total_loss(self, batch: Batch) -> tuple[Tensor, dict[str, Tensor]]:
        """Sum of the mode's enabled objectives, with per-component values."""
        fused, fused_valid, img_emb, txt_emb = self.fuse(
            batch.images, batch.text_tokens, batch.text_valid
        )
        logits = self.decoder(batch.dec_input, fused, fused_valid)
        components: dict[str, Tensor] = {
            "lm": self.lm_loss(logits, batch.targets, batch.target_valid)
        }
        if self.cfg.itc_enabled():
            components["itc"] = self.itc_loss(img_emb, txt_emb, batch.text_valid)
        if self.cfg.idl_enabled():
            if batch.target_images is None:
                raise ModeMismatch("mode requires target images but batch has none")
            decoded = self.decode_image(fused, fused_valid)
            components["idl"] = self.idl_loss(decoded, batch.target_images)
        total = components["lm"]
        for key in ("itc", "idl"):
            if key in components:
                total = total + components[key]
        return total, components

    # -- generation-side forward -------------------------------------------

    def step_logits(
        self, dec_input: np.ndarray, fused: Tensor, fused_valid: np.ndarray
    ) -> np.ndarray:
        """Next-token logits [B,V] for the last position of dec_input."""
        logits = self.decoder(dec_input, fused, fused_valid)
        return logits.data[:, -1, :]


def save_model(directory, model: SketchVLM, step: int) -> None:
    from .nn import save_checkpoint

    arrays = {k: p.data for k, p in model.parameters().items()}
    save_checkpoint(directory, arrays, model.cfg.to_dict(), step)


def load_model(directory) -> tuple[SketchVLM, int]:
    from .nn import load_checkpoint

    arrays, cfg_dict, step = load_checkpoint(directory)
    model = SketchVLM(ModelConfig.from_dict(cfg_dict))
    model.load_state(arrays)
    return model, step
