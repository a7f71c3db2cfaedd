"""Finite-difference gradient suite over every parameterized block.

Each check builds the block from a fresh seed, randomizes the parameters
that start at zero (so every path carries gradient) and contracts the
output with a fixed random tensor to obtain a generic scalar.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .anchoring import AnchorState
from .config import ModelConfig
from .gradcheck import GradCheckResult, check_gradients
from .losses import LossConfig, cls_loss, seg_loss, total_loss
from .model import AtlasModel, anchored_parameters, trainable_parameters
from .nn import ClassHead, CrossAttention, FiLMConditioner, LoRALinear, MaskDecoder
from .tensor import Tensor

TOL = 1e-4


def _scalar(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    weights = rng.normal(size=fn().shape)
    return lambda: (fn() * weights).sum()


def check_lora_linear(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    layer = LoRALinear(6, 5, 2, 4.0, rng, rng)
    layer.B.data[...] = rng.normal(size=layer.B.shape)
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    fn = _scalar(lambda: layer(x), rng)
    return check_gradients(fn, [("A", layer.A), ("B", layer.B), ("x", x)], tol=TOL)


def check_film(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    cond = FiLMConditioner(4, 6)
    cond.proj.weight.data[...] = rng.normal(size=cond.proj.weight.shape)
    cond.proj.bias.data[...] = rng.normal(size=cond.proj.bias.shape)
    x_v = Tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
    x_a = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    fn = _scalar(lambda: cond(x_v, x_a), rng)
    return check_gradients(
        fn, [("weight", cond.proj.weight), ("bias", cond.proj.bias), ("x_v", x_v), ("x_a", x_a)],
        tol=TOL,
    )


def check_cross_attention(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    attn = CrossAttention(6, 4, rng)
    attn.ln_gain.data[...] = 1.0 + 0.3 * rng.normal(size=6)
    attn.ln_bias.data[...] = 0.3 * rng.normal(size=6)
    x_v = Tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
    x_a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    fn = _scalar(lambda: attn(x_v, x_a), rng)
    params = attn.named_trainable() + [("x_v", x_v), ("x_a", x_a)]
    return check_gradients(fn, params, tol=TOL)


def check_layer_norm(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 4, 7)), requires_grad=True)
    gain = Tensor(rng.normal(size=7), requires_grad=True)
    bias = Tensor(rng.normal(size=7), requires_grad=True)
    fn = _scalar(lambda: T.layer_norm(x, gain, bias), rng)
    return check_gradients(fn, [("x", x), ("gain", gain), ("bias", bias)], tol=TOL)


def check_decoder(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    # block < patch exercises the bilinear upsampling path
    dec = MaskDecoder((2, 2), 4, 2, 6, 8, 2, 4.0, rng, rng)
    for layer in (dec.fc1, dec.fc2):
        layer.B.data[...] = rng.normal(size=layer.B.shape)
    f = Tensor(rng.normal(size=(2, 4, 6)), requires_grad=True)
    fn = _scalar(lambda: dec(f), rng)
    return check_gradients(fn, dec.named_trainable() + [("f", f)], tol=TOL)


def check_class_head(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    head = ClassHead(5)
    head.expand(3)
    head.weight.data[...] = rng.normal(size=head.weight.shape)
    head.bias.data[...] = rng.normal(size=head.bias.shape)
    f = Tensor(rng.normal(size=(2, 6, 5)), requires_grad=True)
    labels = rng.integers(0, 3, size=2)
    fn = lambda: cls_loss(head(f), labels)  # noqa: E731
    return check_gradients(fn, head.named_trainable() + [("f", f)], tol=TOL)


TINY = ModelConfig(height=8, width=8, patch=4, d_v=8, depth=1, mlp_hidden=12, d_raw=4, d_a=4,
                   audio_hidden=8, audio_tokens=2, decoder_hidden=8, decoder_block=4, rank=2,
                   alpha=4.0)


def check_objective(seed: int, max_entries: int = 4) -> list[GradCheckResult]:
    """Full ``seg + lambda * cls + stab`` objective through the whole model."""
    rng = np.random.default_rng(seed)
    model = AtlasModel(TINY, seed)
    model.head.expand(3)
    params = trainable_parameters(model)
    for _, p in params:
        p.data[...] += 0.3 * rng.normal(size=p.shape)
    anchored = anchored_parameters(model)
    anchors = AnchorState(anchored, xi=1e-3)
    for name, p in anchored:
        anchors.omega[name] = np.abs(rng.normal(size=p.shape))
    anchors.consolidate(anchored)
    for _, p in anchored:
        p.data[...] += 0.1 * rng.normal(size=p.shape)
    frames = rng.uniform(size=(2, 2, 8, 8, 3))
    audio = rng.normal(size=(2, 2, 4))
    masks = (rng.uniform(size=(2, 2, 8, 8)) < 0.3).astype(float)
    supervised = np.array([[True, False], [True, True]])
    labels = rng.integers(0, 3, size=2)
    cfg = LossConfig()

    def fn() -> Tensor:
        logits, class_logits = model(frames, audio)
        return total_loss(seg_loss(logits, masks, supervised), cls_loss(class_logits, labels),
                          anchors.stability_loss(anchored, 0.3), cfg)

    return check_gradients(fn, params, tol=TOL, max_entries=max_entries, rng=rng)


CHECKS: dict[str, Callable[[int], list[GradCheckResult]]] = {
    "lora_linear": check_lora_linear,
    "film_conditioner": check_film,
    "cross_attention": check_cross_attention,
    "layer_norm": check_layer_norm,
    "decoder": check_decoder,
    "class_head": check_class_head,
    "objective": check_objective,
}


def run_block(name: str, seeds) -> GradCheckResult:
    """Worst relative error of one block over all seeds and parameters."""
    worst, count = 0.0, 0
    for seed in seeds:
        for r in CHECKS[name](seed):
            worst = max(worst, r.max_rel_error)
            count += r.n_checked
    return GradCheckResult(name, worst, count, TOL)


def run_gradcheck_suite(n_seeds: int = 20) -> list[GradCheckResult]:
    return [run_block(name, range(n_seeds)) for name in CHECKS]
