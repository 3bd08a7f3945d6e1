import math

import numpy as np
import pytest

from rsinstruct.kernels import (
    AdamWHyper,
    AdamWState,
    Batch,
    KernelConfig,
    Parameter,
    ParameterStore,
    ShapeError,
    Stage,
    TinyMLLM,
    ToyVocab,
    adamw_step,
    attention_block,
    bias_tuned_linear,
    concat_multimodal,
    cosine_lr,
    fuse_layers,
    fuse_scales,
    fuse_stack,
    gradcheck,
    init_store,
    next_token_cross_entropy,
    rmsnorm,
    softmax,
    stage_trainable_set,
    synthetic_feature_stack,
)
from rsinstruct.kernels.ops import (
    attention_backward,
    attention_forward,
    linear_forward,
    rmsnorm_backward,
    rmsnorm_forward,
)
from rsinstruct.kernels.verify import desk_batch, desk_config, overfit_losses, run_kernel_check


def test_fuse_layers_concatenates_channels():
    a, b = np.ones((4, 2)), np.zeros((4, 3))
    assert fuse_layers([a, b]).shape == (4, 5)
    with pytest.raises(ShapeError):
        fuse_layers([a, np.zeros((3, 3))])


def test_fuse_scales_pools_to_coarsest_grid():
    fine = np.arange(16, dtype=float).reshape(4, 4, 1)
    coarse = np.full((2, 2, 1), 7.0)
    out = fuse_scales([fine, coarse])
    assert out.shape == (4, 2)
    # top-left 2x2 block of the fine grid is 0, 1, 4, 5
    assert out[0].tolist() == [2.5, 7.0]
    with pytest.raises(ShapeError):
        fuse_scales([np.zeros((3, 3, 1)), coarse])


def test_synthetic_stack_fuses_to_token_grid():
    stack = synthetic_feature_stack(np.random.default_rng(0), 64, 64, (4, 4), (3, 3, 3))
    fused = fuse_stack(stack)
    assert fused.shape == (16, 4 + 4 + 9)
    v = concat_multimodal(np.zeros((2, 5)), np.ones((3, 5)))
    assert v[:2].sum() == 0 and v[2:].sum() == 15


def test_rmsnorm_matches_direct_formula():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    g = np.array([1.0, 2.0])
    out = rmsnorm(x, g, eps=1e-6)
    rms = math.sqrt(12.5)
    assert out[0] == pytest.approx([3 / (rms + 1e-6), 8 / (rms + 1e-6)])
    assert out[1].tolist() == [0.0, 0.0]


def test_rmsnorm_zero_row_backward_is_finite():
    _, cache = rmsnorm_forward(np.zeros((1, 3)), np.ones(3))
    dx, dg = rmsnorm_backward(np.ones((1, 3)), cache)
    assert np.all(np.isfinite(dx)) and np.all(np.isfinite(dg))


def test_attention_is_causal():
    rng = np.random.default_rng(1)
    q, k, v = (rng.standard_normal((5, 4)) for _ in range(3))
    out, _ = attention_forward(q, k, v)
    v2 = v.copy()
    v2[-1] += 10.0
    out2, _ = attention_forward(q, k, v2)
    assert np.array_equal(out[:-1], out2[:-1])
    assert not np.array_equal(out[-1], out2[-1])
    assert np.allclose(out[0], v[0])


def test_attention_backward_matches_finite_difference():
    rng = np.random.default_rng(2)
    q, k, v = (rng.standard_normal((4, 3)) for _ in range(3))
    da = rng.standard_normal((4, 3))
    _, cache = attention_forward(q, k, v)
    dq, _, _ = attention_backward(da, cache)
    h = 1e-6
    num = np.zeros_like(q)
    for i in np.ndindex(q.shape):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        num[i] = ((attention_forward(qp, k, v)[0] - attention_forward(qm, k, v)[0]) * da).sum() / (2 * h)
    assert np.allclose(dq, num, atol=1e-7)


def test_softmax_rows_sum_to_one():
    p = softmax(np.array([[1000.0, 1000.0], [0.0, -np.inf]]))
    assert p.tolist() == [[0.5, 0.5], [1.0, 0.0]]


def test_bias_tuned_identity_is_bitwise_plain_linear():
    rng = np.random.default_rng(3)
    x, W = rng.standard_normal((5, 7)), rng.standard_normal((6, 7))
    tuned = bias_tuned_linear(x, W, np.ones(6), np.zeros(6))
    assert tuned.tobytes() == (x @ W.T).tobytes()
    assert tuned.tobytes() == linear_forward(x, W)[0].tobytes()


def test_cross_entropy_uniform_is_log_vocab():
    assert next_token_cross_entropy(np.zeros((3, 8)), np.array([0, 5, 7])) == pytest.approx(math.log(8))
    assert next_token_cross_entropy(np.zeros((2, 8)), np.array([-1, 2])) == pytest.approx(math.log(8))
    with pytest.raises(ValueError):
        next_token_cross_entropy(np.zeros((1, 4)), np.array([4]))


def test_batch_targets_shift_and_mask_visual():
    b = Batch(np.zeros((3, 6)), np.array([5, 6, 7]))
    assert b.targets.tolist() == [-1, -1, 5, 6, 7, -1]


def test_stage_trainable_sets():
    one = stage_trainable_set(KernelConfig(stage="1", num_blocks=2))
    assert one == {"proj.weight", "proj.bias"}
    two = stage_trainable_set(KernelConfig(stage="2", num_blocks=2))
    assert one < two and "blocks.1.attn.v.bias" in two
    assert "embed.weight" not in two and "head.weight" not in two
    assert not any("ffn.w" in n for n in two)
    three = stage_trainable_set(KernelConfig(stage="3", num_blocks=2))
    assert len(three) == 2 * (2 * 5 + 1)
    assert all(n.endswith((".alpha", ".beta")) for n in three)


def test_stage_parse():
    assert Stage.parse(3) is Stage.INSTRUCTION_TUNING
    assert Stage.parse("cross_modal") is Stage.CROSS_MODAL
    with pytest.raises(ValueError):
        Stage.parse("4")


def test_alpha_init_near_identity():
    store = init_store(KernelConfig(stage="3", d_model=16, d_ff=32), np.random.default_rng(4))
    alphas = np.concatenate([p.value for p in store if p.name.endswith(".alpha")])
    assert abs(alphas.mean() - 1.0) < 0.01 and 0.01 < alphas.std() < 0.03
    assert all(not p.value.any() for p in store if p.name.endswith(".beta"))
    assert set(store.trainable_names()) == stage_trainable_set(KernelConfig(stage="3"))


def test_adamw_first_step_moves_by_lr():
    store = ParameterStore([Parameter("w", np.array([1.0, -2.0, 3.0]), True), Parameter("f", np.ones(2))])
    adamw_step(store, {"w": np.array([0.5, -4.0, 0.0])}, AdamWHyper(lr=0.1), AdamWState())
    assert store["w"] == pytest.approx([0.9, -1.9, 3.0])
    assert store["f"].tolist() == [1.0, 1.0]
    with pytest.raises(ValueError):
        adamw_step(store, {"f": np.ones(2)}, AdamWHyper(), AdamWState())


def test_adamw_weight_decay_is_decoupled():
    store = ParameterStore([Parameter("w", np.array([2.0]), True)])
    adamw_step(store, {"w": np.array([0.0])}, AdamWHyper(lr=0.1, weight_decay=0.5), AdamWState())
    assert store["w"][0] == pytest.approx(2.0 * (1 - 0.05))


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 1.0) == 1.0
    assert cosine_lr(100, 100, 1.0) == pytest.approx(0.0)
    assert cosine_lr(0, 100, 1.0, warmup_steps=10) == pytest.approx(0.1)


def test_store_roundtrip(tmp_path):
    store = init_store(desk_config("3"), np.random.default_rng(5))
    path = tmp_path / "p.bin"
    store.save(path)
    again = ParameterStore.load(path)
    assert again.names() == store.names()
    assert again.trainable_names() == store.trainable_names()
    assert again.snapshot() == store.snapshot()
    with pytest.raises(ValueError):
        ParameterStore.from_bytes(b"XXXX")
    with pytest.raises(ValueError):
        ParameterStore.from_bytes(store.to_bytes() + b"\0")


def test_attention_block_shape_check():
    config = KernelConfig(num_blocks=1, d_model=4, d_ff=8)
    store = init_store(config, np.random.default_rng(6))
    params = {p.name[len("blocks.0."):]: p.value for p in store if p.name.startswith("blocks.0.")}
    assert attention_block(np.ones((3, 4)), params).shape == (3, 4)
    with pytest.raises(ShapeError):
        attention_block(np.ones((3, 5)), params)


@pytest.mark.parametrize("stage", ["2", "3"])
def test_gradcheck_passes(stage):
    result = run_kernel_check(stage, seed=0, steps=5)
    assert result.gradcheck.passed, result.gradcheck.to_tsv()
    assert max(c.max_rel_error for c in result.gradcheck.checks) <= 1e-4


def test_gradcheck_covers_frozen_params_too():
    config = desk_config("2")
    rng = np.random.default_rng(7)
    store = init_store(config, rng)
    model = TinyMLLM(config, store)
    batch = desk_batch(config, rng)
    report = gradcheck(lambda: model.loss_and_grads(batch), store,
                       ["embed.weight", "head.weight", "blocks.1.ffn.w2.weight"])
    assert report.passed, report.to_tsv()


def test_gradcheck_negative_control():
    result = run_kernel_check("3", seed=0, steps=1, corrupt=True)
    assert not result.gradcheck.passed
    assert not result.passed


@pytest.mark.parametrize("stage", ["1", "2", "3"])
def test_freeze_invariance(stage):
    result = run_kernel_check(stage, seed=1, steps=100)
    assert result.frozen_count > 0
    assert result.frozen_unchanged


def test_trainable_params_do_move():
    config = desk_config("3")
    rng = np.random.default_rng(8)
    store = init_store(config, rng)
    before = store.snapshot()
    model = TinyMLLM(config, store)
    batch = desk_batch(config, rng)
    _, grads = model.loss_and_grads(batch)
    adamw_step(store, {n: grads[n] for n in store.trainable_names()}, AdamWHyper(lr=1e-2), AdamWState())
    after = store.snapshot()
    assert all(after[n] != before[n] for n in store.trainable_names())
    assert all(after[n] == before[n] for n in store.names() if n not in store.trainable_names())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overfit_four_token_sequence(seed):
    losses = overfit_losses("3", seed=seed, steps=100)
    assert losses[-1] < 0.1 * losses[0]
    # downward on average: each quarter ends lower than the previous one
    quarters = [np.mean(losses[i:i + 25]) for i in range(0, 100, 25)]
    assert quarters == sorted(quarters, reverse=True)


def test_toy_vocab():
    vocab = ToyVocab(["a plane", "A ship"])
    assert vocab.itos == ["<unk>", "a", "plane", "ship"]
    assert vocab.encode("a boat ship").tolist() == [1, 0, 3]
