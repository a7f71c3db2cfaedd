import numpy as np
import pytest

from atlas_avs.checks import check_objective
from atlas_avs.config import ModelConfig
from atlas_avs.model import (
    AtlasModel,
    anchored_parameters,
    lora_disabled,
    lora_parameters,
    trainable_parameters,
)
from atlas_avs.tensor import ContractError, Tensor


def inputs(rng, cfg, b=2, t=3):
    return rng.uniform(size=(b, t, cfg.height, cfg.width, 3)), rng.normal(size=(b, t, cfg.d_raw))


def expected_trainable_count(cfg: ModelConfig, n_classes: int) -> int:
    r, d, h, da = cfg.rank, cfg.d_v, cfg.mlp_hidden, cfg.d_a
    lora = lambda i, o: r * (i + o)  # noqa: E731
    visual = cfg.depth * (4 * lora(d, d) + lora(d, h) + lora(h, d))
    decoder = lora(d, cfg.decoder_hidden) + lora(cfg.decoder_hidden, cfg.decoder_block ** 2)
    conditioner = (da * 2 * d + 2 * d) if cfg.pre_conditioning else 0
    fusion = d * d + 2 * d * da + 2 * d
    head = n_classes * (d + 1) if cfg.mode == "semantic" else 0
    return visual + decoder + conditioner + fusion + head


def test_output_shapes(rng):
    cfg = ModelConfig()
    model = AtlasModel(cfg)
    model.head.expand(3)
    frames, audio = inputs(rng, cfg)
    masks, logits = model(frames, audio)
    assert masks.shape == (2, 3, 16, 16) and logits.shape == (2, 3)
    masks, logits = model(frames[0], audio[0])
    assert masks.shape == (3, 16, 16) and logits.shape == (3,)


def test_binary_mode_has_no_class_logits(rng):
    cfg = ModelConfig(mode="binary")
    masks, logits = AtlasModel(cfg)(*inputs(rng, cfg))
    assert logits is None


def test_fresh_model_single_frame_logits_are_zero(rng):
    cfg = ModelConfig()
    model = AtlasModel(cfg)
    model.head.expand(2)
    masks, _ = model(*inputs(rng, cfg, b=1, t=1))
    np.testing.assert_array_equal(masks.data, 0.0)


def test_fresh_model_equals_frozen_base_bitwise(rng):
    cfg = ModelConfig()
    model = AtlasModel(cfg, seed=3)
    frames, audio = inputs(rng, cfg, b=1, t=2)
    f, a = Tensor(frames[0]), Tensor(audio[0])
    tokens, fused = model.visual(f).data, model.fuse(f, a).data
    with lora_disabled(model):
        np.testing.assert_array_equal(model.visual(f).data, tokens)
        np.testing.assert_array_equal(model.fuse(f, a).data, fused)
    assert all(layer.enabled for layer in model.lora_layers())


def test_frame_audio_misalignment(rng):
    cfg = ModelConfig()
    frames, audio = inputs(rng, cfg)
    with pytest.raises(ContractError):
        AtlasModel(cfg)(frames, audio[:, :2])


def test_no_precond_skips_conditioner(rng):
    cfg = ModelConfig(pre_conditioning=False)
    model = AtlasModel(cfg)
    model.conditioner.proj.weight.data[...] = 5.0  # would change the output if used
    f, a = (Tensor(x[0]) for x in inputs(rng, cfg))
    expected = model.fusion(model.visual(f), model.audio(a)).data
    np.testing.assert_array_equal(model.fuse(f, a).data, expected)
    assert not any(n.startswith("conditioner.") for n, _ in trainable_parameters(model))


@pytest.mark.parametrize("kw", [{}, {"pre_conditioning": False}, {"mode": "binary"}, {"rank": 4, "depth": 1}])
def test_trainable_count_formula(kw):
    cfg = ModelConfig(**kw)
    model = AtlasModel(cfg)
    model.head.expand(5)
    params = trainable_parameters(model)
    assert sum(p.size for _, p in params) == expected_trainable_count(cfg, 5)
    assert all(p.requires_grad for _, p in params)


def test_trainable_list_has_no_frozen_weights_and_is_stable():
    model = AtlasModel(ModelConfig())
    model.head.expand(2)
    first = [n for n, _ in trainable_parameters(model)]
    assert first == [n for n, _ in trainable_parameters(model)]
    assert not any(n.endswith((".W0", ".bias")) and ".fc" in n and "head" not in n for n in first)
    frozen = [n for n, t in model.named_tensors() if not t.requires_grad]
    assert frozen and not set(frozen) & set(first)


def test_anchored_sets():
    model = AtlasModel(ModelConfig())
    model.head.expand(2)
    lora = {n for n, _ in lora_parameters(model)}
    assert {n for n, _ in anchored_parameters(model)} == lora
    wide = {n for n, _ in anchored_parameters(model, restrict_to_lora_decoder=False)}
    assert lora < wide and not any(n.startswith("head.") for n in wide)


def test_state_dict_round_trip(rng):
    cfg = ModelConfig()
    a = AtlasModel(cfg, seed=1)
    a.head.expand(4)
    for _, p in trainable_parameters(a):
        p.data[...] = rng.normal(size=p.shape)
    b = AtlasModel(cfg, seed=2)
    b.load_state_dict(a.state_dict())
    frames, audio = inputs(rng, cfg)
    for x, y in zip(a(frames, audio), b(frames, audio)):
        np.testing.assert_array_equal(x.data, y.data)


@pytest.mark.parametrize("seed", range(2))
def test_full_pipeline_gradients(seed):
    assert all(r.passed for r in check_objective(seed))
