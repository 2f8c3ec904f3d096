import math

import numpy as np
import pytest

from vqaprobe import autodiff as ad
from vqaprobe.autodiff import Tape, Tensor, backward
from vqaprobe.errors import DataError
from vqaprobe.model import (
    PredictionBundle,
    ReasoningConfig,
    ReasoningModule,
    predict_answer,
)

TINY = ReasoningConfig(d_model=32, encoder_layers=1, decoder_layers=1, heads=2, ffn_dim=64, dropout=0.0)


def _model(config=TINY, d_text=16, d_visual=10, seed=3):
    return ReasoningModule(config, d_text=d_text, d_visual=d_visual, seed=seed)


def _inputs(rng, b=2, t=5, n_v=10, d_text=16, d_visual=10):
    text = rng.standard_normal((b, t, d_text)).astype(np.float32)
    text_mask = np.ones((b, t), dtype=bool)
    vis = rng.standard_normal((b, n_v, d_visual)).astype(np.float32)
    valid = np.ones((b, n_v), dtype=bool)
    return text, text_mask, vis, valid


def test_zero_inputs_reduce_to_embeddings():
    model = _model()
    b, t, n_v = 2, 4, 10
    text = np.zeros((b, t, 16), dtype=np.float32)
    vis = np.zeros((b, n_v, 10), dtype=np.float32)
    fused, _mask = model.project_inputs(None, text, np.ones((b, t), bool), vis, np.ones((b, n_v), bool))
    seg_t = model.params["segment_text"].data
    seg_v = model.params["segment_visual"].data
    pos_t = model.params["pos_text"].data[:t]
    np.testing.assert_allclose(fused.data[:, :t], np.broadcast_to(seg_t + pos_t, (b, t, 32)), atol=1e-7)
    np.testing.assert_allclose(fused.data[:, t:], np.broadcast_to(seg_v, (b, n_v, 32)), atol=1e-7)


def test_masked_rows_get_zero_attention():
    model = _model()
    rng = np.random.default_rng(0)
    text, text_mask, vis, valid = _inputs(rng)
    valid[:, 6:] = False
    fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
    q = model._split_heads(None, model._linear(None, fused, "enc0/attn/Wq"))
    k = model._split_heads(None, model._linear(None, fused, "enc0/attn/Wk"))
    additive = np.where(mask, 0.0, ad.NEG_INF).astype(np.float32)[:, None, None, :]
    perm = (0, 1, 3, 2)
    scores = ad.scale(None, ad.matmul(None, q, ad.transpose(None, k, perm)), 1.0 / math.sqrt(16))
    weights = ad.softmax(None, scores, mask=additive).data
    assert (weights[..., 11:] == 0.0).all()  # visual tokens 6..9 sit at 5+6..5+9
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_object_token_permutation_equivariance():
    # Without grid positions, swapping two visual tokens permutes encoder
    # output rows and leaves the rest untouched at every depth.
    config = ReasoningConfig(d_model=32, encoder_layers=2, decoder_layers=1, heads=2, ffn_dim=64, dropout=0.0)
    model = _model(config)
    rng = np.random.default_rng(1)
    text, text_mask, vis, valid = _inputs(rng)
    swapped = vis.copy()
    swapped[:, [2, 7]] = swapped[:, [7, 2]]

    def encode(v):
        fused, mask = model.project_inputs(None, text, text_mask, v, valid)
        x = fused
        for i in range(config.encoder_layers):
            attn = model._mha(None, f"enc{i}/attn", x, x, mask)
            x = model._sublayer(None, x, attn, f"enc{i}/ln1", False, None)
            x = model._sublayer(None, x, model._ffn(None, f"enc{i}", x), f"enc{i}/ln2", False, None)
        return x.data

    base = encode(vis)
    perm = encode(swapped)
    t = text.shape[1]
    np.testing.assert_allclose(perm[:, t + 2], base[:, t + 7], atol=1e-5)
    np.testing.assert_allclose(perm[:, t + 7], base[:, t + 2], atol=1e-5)
    keep = [i for i in range(base.shape[1]) if i not in (t + 2, t + 7)]
    np.testing.assert_allclose(perm[:, keep], base[:, keep], atol=1e-5)


def test_forward_deterministic():
    model = _model()
    rng = np.random.default_rng(2)
    text, text_mask, vis, valid = _inputs(rng)
    outs = []
    for _ in range(2):
        fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
        bundle = model.forward(None, fused, mask)
        outs.append(bundle.type_logits.data.tobytes())
    assert outs[0] == outs[1]


def test_zero_layer_config_heads_see_query():
    config = ReasoningConfig(d_model=32, encoder_layers=0, decoder_layers=0, heads=2, ffn_dim=64, dropout=0.0)
    model = _model(config)
    rng = np.random.default_rng(3)
    text, text_mask, vis, valid = _inputs(rng)
    fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
    bundle = model.forward(None, fused, mask)
    w = model.params["head_type/W"].data
    b = model.params["head_type/b"].data
    expected = model.params["queries"].data[0] @ w + b
    np.testing.assert_allclose(bundle.type_logits.data[0], expected, atol=1e-6)


def test_logits_sensitive_to_visual_content():
    model = _model()
    rng = np.random.default_rng(4)
    text, text_mask, vis, valid = _inputs(rng)
    fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
    base = model.forward(None, fused, mask).type_logits.data
    vis2 = vis.copy()
    vis2[0, 3] += 1.0
    fused2, mask2 = model.project_inputs(None, text, text_mask, vis2, valid)
    out2 = model.forward(None, fused2, mask2).type_logits.data
    assert np.abs(out2[0] - base[0]).max() > 0
    np.testing.assert_allclose(out2[1], base[1], atol=1e-7)  # other sample untouched


def test_grid_positions_change_output():
    model = _model()
    rng = np.random.default_rng(5)
    text, text_mask, vis, valid = _inputs(rng, n_v=9)
    ids = np.arange(9)
    fused_a, _ = model.project_inputs(None, text, text_mask, vis, None, grid_ids=ids)
    fused_b, _ = model.project_inputs(None, text, text_mask, vis, None, grid_ids=ids[::-1].copy())
    assert not np.allclose(fused_a.data, fused_b.data)


def test_loss_uniform_logits_analytic_value():
    # uniform type logits + count question with uniform count logits:
    # L_total = ln 3 + ln 11
    model = _model()
    b = 1
    bundle = PredictionBundle(
        type_logits=Tensor(np.zeros((b, 3), dtype=np.float32)),
        binary_logit=Tensor(np.zeros(b, dtype=np.float32)),
        count_logits=Tensor(np.zeros((b, 11), dtype=np.float32)),
        attribute_logits=Tensor(np.zeros((b, 15), dtype=np.float32)),
    )
    loss = model.compute_loss(None, bundle, y_type=np.array([1]), y_value=np.array([4]))
    assert abs(loss.total_value - (math.log(3) + math.log(11))) < 1e-6
    assert loss.l_binary == 0.0 and loss.l_attribute == 0.0


def test_loss_perfect_logits_near_zero():
    model = _model()
    type_logits = np.full((1, 3), -20.0, dtype=np.float32)
    type_logits[0, 2] = 20.0
    attr_logits = np.full((1, 15), -20.0, dtype=np.float32)
    attr_logits[0, 9] = 20.0
    bundle = PredictionBundle(
        type_logits=Tensor(type_logits),
        binary_logit=Tensor(np.zeros(1, dtype=np.float32)),
        count_logits=Tensor(np.zeros((1, 11), dtype=np.float32)),
        attribute_logits=Tensor(attr_logits),
    )
    loss = model.compute_loss(None, bundle, y_type=np.array([2]), y_value=np.array([9]))
    assert loss.total_value < 1e-6


def test_inactive_heads_get_zero_gradient():
    model = _model()
    rng = np.random.default_rng(6)
    text, text_mask, vis, valid = _inputs(rng, b=3)
    tape = Tape()
    fused, mask = model.project_inputs(tape, text, text_mask, vis, valid)
    bundle = model.forward(tape, fused, mask)
    # all three samples are count questions -> binary/attribute heads inactive
    loss = model.compute_loss(tape, bundle, y_type=np.array([1, 1, 1]), y_value=np.array([0, 3, 10]))
    backward(tape, loss.total, params=model.params)
    for name in ("head_binary/W", "head_binary/b", "head_attr/W", "head_attr/b"):
        assert model.params[name].grad is None, f"{name} should be disconnected"
    assert model.params["head_count/W"].grad is not None
    assert model.params["head_type/W"].grad is not None


def test_inactive_head_values_do_not_change_loss():
    model = _model()
    rng = np.random.default_rng(7)
    text, text_mask, vis, valid = _inputs(rng, b=2)

    def total():
        fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
        bundle = model.forward(None, fused, mask)
        return model.compute_loss(None, bundle, y_type=np.array([0, 0]), y_value=np.array([1, 0])).total_value

    before = total()
    model.params["head_count/W"].data += 5.0
    model.params["head_attr/b"].data -= 3.0
    assert total() == before


def test_loss_mixed_batch_routes_rows():
    model = _model()
    rng = np.random.default_rng(8)
    text, text_mask, vis, valid = _inputs(rng, b=3)
    tape = Tape()
    fused, mask = model.project_inputs(tape, text, text_mask, vis, valid)
    bundle = model.forward(tape, fused, mask)
    loss = model.compute_loss(tape, bundle, y_type=np.array([0, 1, 2]), y_value=np.array([1, 7, 14]))
    assert loss.l_binary > 0 and loss.l_count > 0 and loss.l_attribute > 0
    assert abs(loss.total_value - (loss.l_type + loss.l_binary + loss.l_count + loss.l_attribute)) < 1e-5
    backward(tape, loss.total, params=model.params)
    assert model.params["head_binary/W"].grad is not None
    assert model.params["head_count/W"].grad is not None
    assert model.params["head_attr/W"].grad is not None


def test_predict_answer_routing_and_tiebreaks():
    type_logits = np.array([[0.0, 3.0, 1.0], [2.0, 1.0, 2.0], [0.0, 0.0, 0.0]], dtype=np.float32)
    bundle = PredictionBundle(
        type_logits=Tensor(type_logits),
        binary_logit=Tensor(np.array([0.0, 0.0, -1.0], dtype=np.float32)),
        count_logits=Tensor(np.tile(np.eye(11, dtype=np.float32)[4], (3, 1))),
        attribute_logits=Tensor(np.zeros((3, 15), dtype=np.float32)),
    )
    out = predict_answer(bundle)
    assert out[0] == (1, 4)  # count head peaked at 4
    assert out[1] == (0, 0)  # tie between type 0 and 2 -> type 0; logit 0 -> no
    assert out[2] == (0, 0)


def test_dropout_only_active_in_training():
    config = ReasoningConfig(d_model=32, encoder_layers=1, decoder_layers=1, heads=2, ffn_dim=64, dropout=0.5)
    model = _model(config)
    rng = np.random.default_rng(9)
    text, text_mask, vis, valid = _inputs(rng)
    fused, mask = model.project_inputs(None, text, text_mask, vis, valid)
    eval_a = model.forward(None, fused, mask).type_logits.data
    fused2, _ = model.project_inputs(None, text, text_mask, vis, valid)
    eval_b = model.forward(None, fused2, mask).type_logits.data
    np.testing.assert_array_equal(eval_a, eval_b)
    train_rng = np.random.default_rng(10)
    fused3, _ = model.project_inputs(None, text, text_mask, vis, valid)
    train_out = model.forward(None, fused3, mask, training=True, rng=train_rng).type_logits.data
    assert not np.array_equal(train_out, eval_a)


def test_dimension_mismatch_raises():
    model = _model()
    rng = np.random.default_rng(11)
    text, text_mask, vis, valid = _inputs(rng, d_visual=9)
    with pytest.raises(DataError):
        model.project_inputs(None, text, text_mask, vis, valid)


def test_state_roundtrip(tmp_path):
    from vqaprobe.checkpoint import load_checkpoint, save_checkpoint

    model = _model(seed=12)
    path = tmp_path / "model.vqck"
    save_checkpoint(path, model.params, metadata={"d_text": 16})
    blob = load_checkpoint(path)
    clone = _model(seed=99)
    clone.load_state(blob["params"])
    for name, p in model.params.items():
        np.testing.assert_array_equal(clone.params[name].data, p.data)
