import numpy as np
import pytest

from intention_tuning import tensorcore as tc
from intention_tuning.errors import ValidationError
from intention_tuning.layerselect import LayerSplit
from intention_tuning.model import (TARGETS, DualHeadModel, ModelConfig, count_trainable_params, export_adapters,
                                    import_adapters, layer_fingerprint, load_snapshot, load_weights, save_snapshot,
                                    save_weights, set_layer_mask)
from intention_tuning.training import AdamW, optimizer_step

from helpers import randomize_adapters, tiny_config


def closed_form_adapter_params(cfg: ModelConfig) -> int:
    d, f, r = cfg.embed_dim, cfg.ffn_dim, cfg.lora_rank
    dims = {"Q": d + d, "K": d + d, "V": d + d, "Up": d + f, "Down": f + d}
    return sum(r * dims[t] for t in cfg.lora_targets)


def tokens(n=12, vocab=40, seed=0):
    return np.random.default_rng(seed).integers(3, vocab, size=n)


def test_zero_init_adapters_leave_forward_unchanged():
    model = DualHeadModel(tiny_config(), seed=1)
    ids = tokens()
    for fwd in (model.forward_generate, model.forward_predict):
        diff = np.max(np.abs(fwd(ids).data - fwd(ids, use_adapters=False).data))
        assert diff == 0.0


def test_adapter_init_statistics():
    cfg = tiny_config(embed_dim=64, num_heads=4, lora_rank=32)
    model = DualHeadModel(cfg, seed=0)
    a = np.concatenate([ad.A.data.ravel() for layer in model.layers for ad in layer.adapters.values()])
    assert abs(a.std() - 1 / np.sqrt(32)) < 0.01
    assert all(np.all(ad.B.data == 0) for layer in model.layers for ad in layer.adapters.values())
    assert model.layers[0].adapters["Q"].scaling == cfg.lora_alpha / cfg.lora_rank


def test_trainable_params_closed_form():
    cfg = tiny_config()
    model = DualHeadModel(cfg, seed=0)
    per_layer = closed_form_adapter_params(cfg)
    pred_head = cfg.num_intentions * (cfg.embed_dim + 1)
    gen_head = cfg.vocab_size * (cfg.embed_dim + 1)
    assert count_trainable_params(model) == cfg.num_layers * per_layer + pred_head
    set_layer_mask(model, LayerSplit.from_important({2}, 2))
    assert count_trainable_params(model) == per_layer + pred_head
    model.set_task("generate")
    assert count_trainable_params(model) == per_layer + gen_head


def test_layer_mask_and_task_switch():
    model = DualHeadModel(tiny_config(), seed=0)
    set_layer_mask(model, LayerSplit.from_important({1}, 2))
    assert model.active_layers == {1}
    assert not model.layers[1].adapters["Q"].A.requires_grad
    model.set_task("generate")
    assert not model.pred_w.requires_grad and model.gen_w.requires_grad
    with pytest.raises(ValidationError):
        set_layer_mask(model, LayerSplit.from_important({1}, 3))
    with pytest.raises(ValidationError):
        model.set_task("classify")


def test_frozen_layer_adapters_and_base_stay_fixed():
    model = DualHeadModel(tiny_config(), seed=2)
    randomize_adapters(model)
    base_before = {k: p.data.copy() for k, p in model.named_parameters().items() if not k.startswith("pred")}
    frozen_before = layer_fingerprint(model, 2)
    active_before = layer_fingerprint(model, 1)
    set_layer_mask(model, LayerSplit.from_important({1}, 2))
    opt = AdamW(lr=1e-2, warmup_steps=0)
    for step in range(1, 11):
        model.zero_grad()
        tc.backward(tc.softmax_cross_entropy(model.forward_predict(tokens(seed=step)), step % 5))
        optimizer_step(model, opt, step)
    assert layer_fingerprint(model, 2) == frozen_before
    assert layer_fingerprint(model, 1) != active_before
    for k, v in base_before.items():
        np.testing.assert_array_equal(model.named_parameters()[k].data, v)


def test_same_seed_same_label_same_adapters():
    cfg = tiny_config()
    a, b = DualHeadModel(cfg, 5), DualHeadModel(cfg, 5)
    c = DualHeadModel(cfg, 5, adapter_label="other")
    assert layer_fingerprint(a, 1) == layer_fingerprint(b, 1)
    assert layer_fingerprint(a, 1) != layer_fingerprint(c, 1)
    # base weights do not depend on the adapter label
    np.testing.assert_array_equal(a.tok_emb.data, c.tok_emb.data)


def test_adapter_export_import_selected_layers():
    cfg = tiny_config(num_layers=3)
    src = DualHeadModel(cfg, 0)
    randomize_adapters(src, seed=1)
    snap = export_adapters(src)
    dst = DualHeadModel(cfg, 0, adapter_label="fresh")
    fresh3 = layer_fingerprint(dst, 3)
    import_adapters(dst, snap, layers={1, 2})
    assert layer_fingerprint(dst, 1) == layer_fingerprint(src, 1)
    assert layer_fingerprint(dst, 2) == layer_fingerprint(src, 2)
    assert layer_fingerprint(dst, 3) == fresh3
    # the snapshot holds copies, not views
    src.layers[0].adapters["Q"].A.data[0, 0] += 1.0
    assert layer_fingerprint(dst, 1) != layer_fingerprint(src, 1)


def test_import_rejects_mismatched_snapshot():
    snap = export_adapters(DualHeadModel(tiny_config(lora_rank=4), 0))
    with pytest.raises(ValidationError):
        import_adapters(DualHeadModel(tiny_config(lora_rank=2, lora_alpha=4.0), 0), snap)
    with pytest.raises(ValidationError):
        import_adapters(DualHeadModel(tiny_config(num_layers=3), 0), snap)


def test_snapshot_file_round_trip(tmp_path):
    cfg = tiny_config()
    model = DualHeadModel(cfg, 0)
    randomize_adapters(model, seed=4)
    path = save_snapshot(export_adapters(model), tmp_path / "adapters.bin", cfg)
    assert path.with_suffix(".json").is_file()
    other = DualHeadModel(cfg, 0, adapter_label="x")
    import_adapters(other, load_snapshot(path))
    for i in (1, 2):
        assert layer_fingerprint(other, i) == layer_fingerprint(model, i)
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(ValidationError):
        load_snapshot(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-16])
    with pytest.raises(ValidationError):
        load_snapshot(tmp_path / "short.bin")


def test_weights_round_trip(tmp_path):
    cfg = tiny_config()
    a = DualHeadModel(cfg, 0)
    a.gen_w.data += 0.5
    save_weights(a, tmp_path / "w.npz")
    b = DualHeadModel(cfg, 1)
    load_weights(b, tmp_path / "w.npz")
    for k, p in a.named_parameters().items():
        np.testing.assert_array_equal(b.named_parameters()[k].data, p.data)
    with pytest.raises(ValidationError):
        load_weights(DualHeadModel(tiny_config(embed_dim=8), 0), tmp_path / "w.npz")


def test_batched_generation_matches_single_sequences():
    model = DualHeadModel(tiny_config(), seed=3)
    randomize_adapters(model)
    batch = np.stack([tokens(10, seed=s) for s in range(3)])
    stacked = model.forward_generate_batch(batch).data
    for i, row in enumerate(batch):
        np.testing.assert_allclose(stacked[i * 10:(i + 1) * 10], model.forward_generate(row).data, atol=1e-12)


def test_generation_logits_are_causal():
    model = DualHeadModel(tiny_config(), seed=3)
    ids = tokens(10)
    other = ids.copy()
    other[6:] = 3
    np.testing.assert_array_equal(model.forward_generate(ids).data[:6], model.forward_generate(other).data[:6])


def test_prediction_ignores_trailing_padding():
    cfg = tiny_config()
    model = DualHeadModel(cfg, 0)
    ids = tokens(8)
    padded = np.concatenate([ids, [cfg.pad_id] * 4])
    np.testing.assert_array_equal(model.forward_predict(ids).data, model.forward_predict(padded).data)


def test_input_validation():
    cfg = tiny_config(max_seq_len=16)
    model = DualHeadModel(cfg, 0)
    for bad in ([], list(range(3, 20)), [cfg.vocab_size], [-1]):
        with pytest.raises(ValidationError):
            model.forward_generate(bad)
    with pytest.raises(ValidationError):
        model.forward_predict([cfg.pad_id] * 3)
    for kwargs in ({"embed_dim": 15}, {"num_layers": 1}, {"lora_dropout": 1.0}, {"lora_targets": ("O",)}):
        with pytest.raises(ValidationError):
            tiny_config(**kwargs)


def test_default_targets():
    assert TARGETS == ("Q", "K", "V", "Up", "Down")
    cfg = ModelConfig()
    assert (cfg.lora_rank, cfg.lora_alpha) == (32, 64.0)
