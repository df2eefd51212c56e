"""Transformer building blocks on top of the autodiff tensor.

Blocks are pre-norm with GELU MLPs. Attention masks are additive arrays
(0 where allowed, -1e9 where forbidden) so padding and causality compose
by addition.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, fused_softmax, layer_norm_op

MASK_VALUE = -1e9

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeMismatch(ValueError):
    pass


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU, fused into one graph node."""
    xd = x.data
    t = xd * xd
    t *= xd
    t *= 0.044715
    t += xd
    t *= _GELU_C
    np.tanh(t, out=t)
    out_data = 1.0 + t
    out_data *= xd
    out_data *= 0.5

    def bw(g):
        # d/dx [0.5 x (1+t)] with t = tanh(c(x + a x^3))
        du = xd * xd
        du *= 3 * 0.044715
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= xd
        du += 1.0 + t
        du *= 0.5
        du *= g
        x._accumulate(du)

    needs = x.requires_grad
    return Tensor(out_data, needs, (x,) if needs else (), bw if needs else None)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return fused_softmax(x, axis)


class Module:
    """Base class tracking parameters and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + name: p for name, p in self._params.items()}
        for name, child in self._children.items():
            out.update(child.parameters(prefix + name + "."))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into parameters by name; shapes must match exactly."""
        params = self.parameters()
        missing = set(params) ^ set(arrays)
        if missing:
            raise ShapeMismatch(f"parameter names do not line up: {sorted(missing)}")
        for name, p in params.items():
            a = arrays[name]
            if a.shape != p.data.shape:
                raise ShapeMismatch(f"{name}: checkpoint {a.shape} vs model {p.data.shape}")
            p.data = a.astype(np.float64).copy()


class ModuleList:
    def __init__(self, modules):
        self.modules = list(modules)

    def __iter__(self):
        return iter(self.modules)

    def __getitem__(self, i):
        return self.modules[i]

    def __len__(self):
        return len(self.modules)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, m in enumerate(self.modules):
            out.update(m.parameters(f"{prefix}{i}."))
        return out


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        scale = 1.0 / math.sqrt(d_in)
        self.weight = Tensor(rng.normal(0.0, scale, size=(d_in, d_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim > 2:
            # One large gemm beats a batch of small ones.
            lead = x.shape[:-1]
            out = x.reshape(-1, x.shape[-1]) @ self.weight
            out = out.reshape(*lead, out.shape[-1])
        else:
            out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Embedding(Module):
    def __init__(self, vocab: int, d: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(vocab, d)), requires_grad=True)

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        return self.weight.gather_rows(np.asarray(token_ids))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm_op(x, self.gamma, self.beta, self.eps)


def causal_mask(L: int) -> np.ndarray:
    """[1,1,L,L] additive mask forbidding attention to later positions."""
    m = np.triu(np.full((L, L), MASK_VALUE), k=1)
    return m[None, None, :, :]


def padding_mask(key_valid: np.ndarray) -> np.ndarray:
    """[B,1,1,L] additive mask from a boolean key-validity array [B,L]."""
    return np.where(key_valid[:, None, None, :], 0.0, MASK_VALUE)


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d % n_heads != 0:
            raise ShapeMismatch(f"d_model {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: Tensor, B: int, L: int) -> Tensor:
        return x.reshape(B, L, self.n_heads, self.d_head).swapaxes(1, 2)

    def __call__(
        self, x: Tensor, memory: Tensor | None = None, mask: np.ndarray | None = None
    ) -> Tensor:
        """Self-attention over x, or cross-attention to memory when given."""
        src = memory if memory is not None else x
        B, Lq, _ = x.shape
        Lk = src.shape[1]
        q = self._split(self.wq(x), B, Lq)
        k = self._split(self.wk(src), B, Lk)
        v = self._split(self.wv(src), B, Lk)
        scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores + Tensor(mask)
        attn = softmax(scores, axis=-1)
        out = (attn @ v).swapaxes(1, 2).reshape(B, Lq, self.d)
        return self.wo(out)


class MLP(Module):
    def __init__(self, d: int, rng: np.random.Generator, ratio: int = 4):
        super().__init__()
        self.fc1 = Linear(d, d * ratio, rng)
        self.fc2 = Linear(d * ratio, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm residual block: attention then MLP.

    With cross=True the block inserts a second attention sublayer reading
    an external memory sequence.
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, cross: bool = False):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        if cross:
            self.ln_cross = LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.has_cross = cross
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, rng)

    def __call__(
        self,
        x: Tensor,
        mask: np.ndarray | None = None,
        memory: Tensor | None = None,
        memory_mask: np.ndarray | None = None,
    ) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        if self.has_cross:
            if memory is None:
                raise ShapeMismatch("cross block called without memory")
            x = x + self.cross_attn(self.ln_cross(x), memory=memory, mask=memory_mask)
        x = x + self.mlp(self.ln2(x))
        return x
