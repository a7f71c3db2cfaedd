"""The full audio-visual segmentation model.

Per frame: visual tokens -> audio-guided FiLM conditioning (optional) ->
cross-attention fusion with audio tokens -> mask decoder.  In semantic mode
the fused tokens of all frames are pooled into one set of class logits per
sample.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .config import ModelConfig
from .nn import (
    AudioEncoder,
    ClassHead,
    CrossAttention,
    FiLMConditioner,
    LoRALinear,
    MaskDecoder,
    Module,
    VisualEncoder,
)
from .tensor import ContractError, DimensionError, Tensor


class AtlasModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        frozen_rng = np.random.default_rng(cfg.backbone_seed)
        trainable_rng = np.random.default_rng([seed, 1])
        self.visual = VisualEncoder(
            cfg.height, cfg.width, cfg.patch, cfg.d_v, cfg.depth, cfg.mlp_hidden,
            cfg.rank, cfg.alpha, frozen_rng, trainable_rng,
        )
        self.audio = AudioEncoder(cfg.d_raw, cfg.audio_hidden, cfg.d_a, cfg.audio_tokens, frozen_rng)
        self.conditioner = FiLMConditioner(cfg.d_a, cfg.d_v)
        self.fusion = CrossAttention(cfg.d_v, cfg.d_a, trainable_rng)
        self.decoder = MaskDecoder(
            self.visual.embed.grid, cfg.patch, cfg.decoder_block, cfg.d_v, cfg.decoder_hidden,
            cfg.rank, cfg.alpha, frozen_rng, trainable_rng,
        )
        self.head = ClassHead(cfg.d_v)

    @property
    def mode(self) -> str:
        return self.cfg.mode

    @property
    def pre_conditioning(self) -> bool:
        return self.cfg.pre_conditioning

    def lora_layers(self) -> list[LoRALinear]:
        return [m for m in self.modules() if isinstance(m, LoRALinear)]

    def fuse(self, frames: Tensor, audio: Tensor) -> Tensor:
        """Fused tokens ``(F, n, d_v)`` for flat frame/audio batches."""
        x_v = self.visual(frames)
        x_a = self.audio(audio)
        if self.pre_conditioning:
            x_v = self.conditioner(x_v, x_a.mean(axis=-2))
        return self.fusion(x_v, x_a)

    def forward(self, frames, audio) -> tuple[Tensor, Tensor | None]:
        """Mask logits ``([B,] T, H, W)`` and, in semantic mode, class logits ``([B,] K)``."""
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        audio = audio if isinstance(audio, Tensor) else Tensor(audio)
        batched = frames.ndim == 5
        if not batched:
            frames = frames.reshape(1, *frames.shape)
            audio = audio.reshape(1, *audio.shape)
        if frames.ndim != 5 or audio.ndim != 3:
            raise DimensionError(f"expected frames (B,T,H,W,3) and audio (B,T,d); "
                                 f"got {frames.shape} and {audio.shape}")
        b, t = frames.shape[:2]
        if t < 1:
            raise ContractError("need at least one frame")
        if audio.shape[:2] != (b, t):
            raise ContractError(f"frames {frames.shape[:2]} and audio {audio.shape[:2]} are not aligned")
        h, w = self.cfg.height, self.cfg.width
        fused = self.fuse(frames.reshape(b * t, *frames.shape[2:]), audio.reshape(b * t, audio.shape[-1]))
        masks = self.decoder(fused).reshape(b, t, h, w)
        logits = None
        if self.mode == "semantic":
            n, d = fused.shape[1:]
            logits = self.head(fused.reshape(b, t * n, d))
        if not batched:
            masks = masks.reshape(t, h, w)
            logits = None if logits is None else logits.reshape(logits.shape[-1])
        return masks, logits

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        k = state["head.weight"].shape[0]
        if k != self.head.n_classes:
            self.head.expand(k - self.head.n_classes)
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)}")
        for name, t in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(f"{name}: stored {value.shape} vs model {t.shape}")
            t.data[...] = value


@contextlib.contextmanager
def lora_disabled(model: AtlasModel):
    """Evaluate with every LoRA branch switched off (frozen base only)."""
    layers = model.lora_layers()
    for layer in layers:
        layer.enabled = False
    try:
        yield model
    finally:
        for layer in layers:
            layer.enabled = True


def trainable_parameters(model: AtlasModel) -> list[tuple[str, Tensor]]:
    """Named tensors updated by the optimizer, in a fixed order.

    LoRA factors of encoder and decoder, the conditioner projection (when
    pre-conditioning is on), fusion projections and layer-norm affine, and
    the class head in semantic mode.  Frozen base weights never appear.
    """
    params = model.visual.named_trainable("visual.")
    params += model.decoder.named_trainable("decoder.")
    if model.pre_conditioning:
        params += model.conditioner.named_trainable("conditioner.")
    params += model.fusion.named_trainable("fusion.")
    if model.mode == "semantic":
        params += model.head.named_trainable("head.")
    return params


def lora_parameters(model: AtlasModel) -> list[tuple[str, Tensor]]:
    return [(n, t) for n, t in trainable_parameters(model) if n.endswith((".A", ".B"))]


def anchored_parameters(model: AtlasModel, restrict_to_lora_decoder: bool = True) -> list[tuple[str, Tensor]]:
    """Parameters tracked by low-rank anchoring; the class head is never anchored."""
    if restrict_to_lora_decoder:
        return lora_parameters(model)
    return [(n, t) for n, t in trainable_parameters(model) if not n.startswith("head.")]
