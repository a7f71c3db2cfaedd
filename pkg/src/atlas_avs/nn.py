"""Parameterized layers: LoRA linear maps, FiLM conditioning, cross-attention
fusion, a small ViT-style visual encoder, a frozen audio MLP, the mask
decoder and the expandable class head.

Weights follow the ``(d_out, d_in)`` convention; inputs carry features on
the last axis, so a linear map is ``x @ W.T + b``.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor


class ConfigurationError(ValueError):
    """Inconsistent layer or experiment configuration."""


class Module:
    """Tiny container: walks attributes in definition order to collect tensors."""

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{name}.{i}.")

    def named_trainable(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_tensors(prefix) if t.requires_grad]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()


def _frozen(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _gaussian(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_out, d_in))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear input {x.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        return linear(x.reshape(1, x.shape[0]), weight, bias).reshape(weight.shape[0])
    y = x @ weight.T
    return y if bias is None else y + bias


class Linear(Module):
    """Plain affine map; frozen or trainable as a whole."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None, *,
                 trainable: bool = False, zero: bool = False):
        make = _param if trainable else _frozen
        w = np.zeros((d_out, d_in)) if zero or rng is None else _gaussian(rng, d_out, d_in)
        self.weight = make(w)
        self.bias = make(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LoRALinear(Module):
    """Frozen ``W0, bias`` plus a trainable rank-``r`` update ``(alpha/r) B A``.

    ``B`` starts at zero so a fresh layer reproduces the frozen map exactly.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float,
                 frozen_rng: np.random.Generator, lora_rng: np.random.Generator,
                 *, zero_base: bool = False):
        if not 0 < rank < min(d_in, d_out):
            raise ConfigurationError(
                f"LoRA rank {rank} must satisfy 0 < r < min({d_in}, {d_out})"
            )
        self.d_in, self.d_out, self.rank, self.alpha = d_in, d_out, rank, float(alpha)
        base = np.zeros((d_out, d_in)) if zero_base else _gaussian(frozen_rng, d_out, d_in)
        self.W0 = _frozen(base)
        self.bias = _frozen(np.zeros(d_out))
        bound = 1.0 / math.sqrt(d_in)
        self.A = _param(lora_rng.uniform(-bound, bound, size=(rank, d_in)))
        self.B = _param(np.zeros((d_out, rank)))
        self.enabled = True

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def effective_weight(self) -> np.ndarray:
        return self.W0.data + self.scaling * (self.B.data @ self.A.data)

    def __call__(self, x: Tensor) -> Tensor:
        base = linear(x, self.W0, self.bias)
        if not self.enabled:
            return base
        update = linear(linear(x, self.A), self.B)
        return base + self.scaling * update


def lora_forward(layer: LoRALinear, x: Tensor) -> Tensor:
    return layer(x)


class FiLMConditioner(Module):
    """Audio-guided channel modulation ``(1 + gamma) * x_v + beta``.

    ``gamma`` and ``beta`` come from one zero-initialized projection of the
    pooled audio vector, which makes a fresh conditioner the identity.
    """

    def __init__(self, d_a: int, d_v: int):
        self.d_a, self.d_v = d_a, d_v
        self.proj = Linear(d_a, 2 * d_v, None, trainable=True, zero=True)

    def modulation(self, x_a: Tensor) -> tuple[Tensor, Tensor]:
        if x_a.shape[-1] != self.d_a:
            raise DimensionError(f"conditioner expects audio width {self.d_a}, got {x_a.shape}")
        p = self.proj(x_a)
        return p[..., : self.d_v], p[..., self.d_v :]

    def __call__(self, x_v: Tensor, x_a: Tensor) -> Tensor:
        if x_v.shape[-1] != self.d_v:
            raise DimensionError(f"conditioner expects {self.d_v} visual channels, got {x_v.shape}")
        gamma, beta = self.modulation(x_a)
        if x_v.ndim == 3:
            # one (gamma, beta) per frame, broadcast over that frame's tokens
            gamma = gamma.reshape(x_v.shape[0], 1, self.d_v)
            beta = beta.reshape(x_v.shape[0], 1, self.d_v)
        return x_v * (1.0 + gamma) + beta


def film_condition(cond: FiLMConditioner, x_v: Tensor, x_a: Tensor) -> Tensor:
    return cond(x_v, x_a)


class CrossAttention(Module):
    """Single-head attention: conditioned visual tokens query audio tokens."""

    def __init__(self, d_v: int, d_a: int, rng: np.random.Generator):
        self.d_v, self.d_a = d_v, d_a
        self.W_Q = _param(_gaussian(rng, d_v, d_v))
        self.W_K = _param(_gaussian(rng, d_v, d_a))
        self.W_V = _param(_gaussian(rng, d_v, d_a))
        self.ln_gain = _param(np.ones(d_v))
        self.ln_bias = _param(np.zeros(d_v))
        self.last_attention: np.ndarray | None = None

    def __call__(self, x_v: Tensor, x_a: Tensor) -> Tensor:
        if x_a.shape[-2] == 0:
            raise ContractError("cross-attention needs at least one audio token")
        if x_v.shape[-2] == 0:
            raise ContractError("cross-attention needs at least one visual token")
        if x_v.shape[-1] != self.d_v or x_a.shape[-1] != self.d_a:
            raise DimensionError(
                f"cross-attention expects (..., {self.d_v}) and (..., {self.d_a}), "
                f"got {x_v.shape} and {x_a.shape}"
            )
        q = x_v @ self.W_Q.T
        k = x_a @ self.W_K.T
        v = x_a @ self.W_V.T
        scores = (q @ k.T) * (1.0 / math.sqrt(self.d_v))
        attn = T.softmax(scores, axis=-1)
        self.last_attention = attn.data
        return T.layer_norm(x_v + attn @ v, self.ln_gain, self.ln_bias)


def cross_attention_fuse(attn: CrossAttention, x_v_bar: Tensor, x_a: Tensor) -> Tensor:
    return attn(x_v_bar, x_a)


class PatchEmbed(Module):
    """Frozen linear patch projection plus positional vectors."""

    def __init__(self, height: int, width: int, patch: int, d_v: int, rng: np.random.Generator):
        if height % patch or width % patch:
            raise ConfigurationError(f"frame {height}x{width} is not divisible by patch {patch}")
        self.height, self.width, self.patch = height, width, patch
        self.grid = (height // patch, width // patch)
        self.proj = Linear(patch * patch * 3, d_v, rng)
        self.pos = _frozen(rng.normal(0.0, 0.02, size=(self.n_tokens, d_v)))

    @property
    def n_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    def patchify(self, frames: Tensor) -> Tensor:
        f, h, w, c = frames.shape
        if (h, w) != (self.height, self.width):
            raise DimensionError(f"expected {self.height}x{self.width} frames, got {h}x{w}")
        p = self.patch
        gh, gw = self.grid
        x = frames.reshape(f, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(f, gh * gw, p * p * c)

    def __call__(self, frames: Tensor) -> Tensor:
        return self.proj(self.patchify(frames)) + self.pos


class TransformerBlock(Module):
    """Pre-norm self-attention + MLP block; every linear map LoRA-adapted."""

    def __init__(self, d: int, hidden: int, rank: int, alpha: float,
                 frozen_rng: np.random.Generator, lora_rng: np.random.Generator):
        self.d = d
        self.ln1_gain, self.ln1_bias = _frozen(np.ones(d)), _frozen(np.zeros(d))
        self.q = LoRALinear(d, d, rank, alpha, frozen_rng, lora_rng)
        self.k = LoRALinear(d, d, rank, alpha, frozen_rng, lora_rng)
        self.v = LoRALinear(d, d, rank, alpha, frozen_rng, lora_rng)
        self.o = LoRALinear(d, d, rank, alpha, frozen_rng, lora_rng)
        self.ln2_gain, self.ln2_bias = _frozen(np.ones(d)), _frozen(np.zeros(d))
        self.fc1 = LoRALinear(d, hidden, rank, alpha, frozen_rng, lora_rng)
        self.fc2 = LoRALinear(hidden, d, rank, alpha, frozen_rng, lora_rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.layer_norm(x, self.ln1_gain, self.ln1_bias)
        scores = (self.q(h) @ self.k(h).T) * (1.0 / math.sqrt(self.d))
        x = x + self.o(T.softmax(scores, axis=-1) @ self.v(h))
        h = T.layer_norm(x, self.ln2_gain, self.ln2_bias)
        return x + self.fc2(T.gelu(self.fc1(h)))


class VisualEncoder(Module):
    def __init__(self, height: int, width: int, patch: int, d_v: int, depth: int,
                 mlp_hidden: int, rank: int, alpha: float,
                 frozen_rng: np.random.Generator, lora_rng: np.random.Generator):
        self.embed = PatchEmbed(height, width, patch, d_v, frozen_rng)
        self.blocks = [
            TransformerBlock(d_v, mlp_hidden, rank, alpha, frozen_rng, lora_rng)
            for _ in range(depth)
        ]
        self.norm_gain, self.norm_bias = _frozen(np.ones(d_v)), _frozen(np.zeros(d_v))

    def __call__(self, frames: Tensor) -> Tensor:
        return encode_visual(self.embed, self.blocks, frames, self.norm_gain, self.norm_bias)


def encode_visual(embed: PatchEmbed, blocks: list[TransformerBlock], frames: Tensor,
                  norm_gain: Tensor | None = None, norm_bias: Tensor | None = None) -> Tensor:
    """Frames ``(F, H, W, 3)`` (or a single ``(H, W, 3)``) to tokens ``(F, n, d_v)``."""
    single = frames.ndim == 3
    if single:
        frames = frames.reshape(1, *frames.shape)
    x = embed(frames)
    for block in blocks:
        x = block(x)
    if norm_gain is not None:
        x = T.layer_norm(x, norm_gain, norm_bias)
    return x.reshape(x.shape[1:]) if single else x


class AudioEncoder(Module):
    """Frozen two-layer MLP: one raw audio vector per frame to ``n_tokens`` tokens."""

    def __init__(self, d_raw: int, hidden: int, d_a: int, n_tokens: int, rng: np.random.Generator):
        self.d_raw, self.d_a, self.n_tokens = d_raw, d_a, n_tokens
        self.fc1 = Linear(d_raw, hidden, rng)
        self.fc2 = Linear(hidden, n_tokens * d_a, rng)

    def __call__(self, audio: Tensor) -> Tensor:
        if audio.shape[-1] != self.d_raw:
            raise DimensionError(f"audio width {audio.shape[-1]} != {self.d_raw}")
        h = self.fc2(T.gelu(self.fc1(audio)))
        return h.reshape(*audio.shape[:-1], self.n_tokens, self.d_a)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear resampling matrix (half-pixel centers)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


class MaskDecoder(Module):
    """Token features to per-pixel mask logits.

    Each token emits a ``block x block`` logit patch through two LoRA-adapted
    linear maps; patches are reassembled into a grid and bilinearly upsampled
    to the frame size.  The output map has a zero frozen base, so a fresh
    decoder emits all-zero logits.
    """

    def __init__(self, grid: tuple[int, int], patch: int, block: int, d_v: int, hidden: int,
                 rank: int, alpha: float, frozen_rng: np.random.Generator,
                 lora_rng: np.random.Generator):
        if patch % block:
            raise ConfigurationError(f"decoder block {block} must divide patch {patch}")
        self.grid, self.patch, self.block = grid, patch, block
        self.fc1 = LoRALinear(d_v, hidden, rank, alpha, frozen_rng, lora_rng)
        self.fc2 = LoRALinear(hidden, block * block, rank, alpha, frozen_rng, lora_rng,
                              zero_base=True)
        gh, gw = grid
        factor = patch // block
        self._up_h = None if factor == 1 else _frozen(bilinear_matrix(gh * block, gh * patch))
        self._up_w = None if factor == 1 else _frozen(bilinear_matrix(gw * block, gw * patch))

    def __call__(self, f: Tensor) -> Tensor:
        single = f.ndim == 2
        if single:
            f = f.reshape(1, *f.shape)
        gh, gw = self.grid
        if f.shape[1] != gh * gw:
            raise DimensionError(f"decoder expects {gh * gw} tokens, got {f.shape[1]}")
        q = self.block
        x = self.fc2(T.gelu(self.fc1(f)))
        n = x.shape[0]
        x = x.reshape(n, gh, gw, q, q).transpose(0, 1, 3, 2, 4).reshape(n, gh * q, gw * q)
        if self._up_h is not None:
            x = x @ self._up_w.T
            x = (x.T @ self._up_h.T).T
        return x.reshape(x.shape[1:]) if single else x


def decode_mask(dec: MaskDecoder, f: Tensor) -> Tensor:
    return dec(f)


class ClassHead(Module):
    """Mean-pool tokens, then a linear map whose rows grow with the class set."""

    def __init__(self, d_v: int):
        self.d_v = d_v
        self.weight = _param(np.zeros((0, d_v)))
        self.bias = _param(np.zeros(0))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def expand(self, n_new: int) -> None:
        """Append ``n_new`` zero-initialized output rows."""
        w = np.concatenate([self.weight.data, np.zeros((n_new, self.d_v))])
        b = np.concatenate([self.bias.data, np.zeros(n_new)])
        self.weight, self.bias = _param(w), _param(b)

    def __call__(self, f: Tensor) -> Tensor:
        if f.shape[-1] != self.d_v:
            raise ContractError(f"head width {self.d_v} does not match features {f.shape}")
        if self.n_classes == 0:
            raise ContractError("class head has no outputs yet; call expand() first")
        pooled = f.mean(axis=-2)
        return linear(pooled, self.weight, self.bias)


def classify(head: ClassHead, f: Tensor) -> Tensor:
    return head(f)
