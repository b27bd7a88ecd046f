"""Composite loss (cross-entropy + mean-output + proximal) and SGD."""

import math

import numpy as np
import pytest

from fedswarm import (
    ClassPartition,
    ConfigError,
    DimensionError,
    LossConfig,
    RegistryError,
    Tensor,
    TrainableHead,
    cross_entropy,
    flatten_params,
    head_logits,
    init_head,
    mol_loss,
    prox_loss,
    sgd_step,
    total_loss,
)
from fedswarm.gradcheck import REL_TOL, check_case
from fedswarm.tensor import seq_sum


# -- cross-entropy --------------------------------------------------------------


def test_ce_uniform_logits():
    assert abs(cross_entropy(Tensor([0.7, 0.7, 0.7, 0.7]), 1) - math.log(4)) < 1e-6


def test_ce_is_stable_for_huge_logits():
    v = cross_entropy(Tensor([1000.0, 0.0]), 0)
    assert math.isfinite(v)
    assert v < 1e-6


def test_ce_reference_value():
    assert abs(cross_entropy(Tensor([1.0, 2.0, 3.0]), 2) - 0.40760596) < 1e-6


def test_ce_target_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([1.0, 2.0]), 2)
    with pytest.raises(IndexError):
        cross_entropy(Tensor([1.0, 2.0]), -1)


def test_ce_nonnegative_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = Tensor(rng.standard_normal(6).astype(np.float32))
        assert cross_entropy(z, int(rng.integers(6))) >= 0.0


# -- mean-output regularizer -----------------------------------------------------


def _part(old, new):
    return ClassPartition(frozenset(old), frozenset(new))


def test_mol_zero_for_equal_logits():
    p = _part({2, 3}, {0, 1})
    assert mol_loss(Tensor([1.0, 1.0, 1.0, 1.0]), 0, p) == 0.0


def test_mol_both_sides():
    # A = new \ {target} = {1} with mean 0, B = {2, 3} with mean 2
    p = _part({2, 3}, {0, 1})
    assert mol_loss(Tensor([2.0, 0.0, 4.0, 0.0]), 0, p) == 4.0


def test_mol_fallback_squares_old_mean():
    # lone new class is the target, so only the old mean remains
    p = _part({1, 2}, {0})
    assert mol_loss(Tensor([5.0, 1.0, 3.0]), 0, p) == 4.0


def test_mol_no_old_classes_vanishes():
    p = _part(set(), {0, 1, 2})
    assert mol_loss(Tensor([9.0, -3.0, 2.0]), 1, p) == 0.0


def test_mol_target_must_be_in_partition():
    with pytest.raises(RegistryError):
        mol_loss(Tensor([1.0, 2.0, 3.0]), 2, _part({0}, {1}))
    with pytest.raises(IndexError):
        mol_loss(Tensor([1.0, 2.0]), 0, _part({5}, {0}))


def test_partition_sides_disjoint():
    with pytest.raises(RegistryError):
        ClassPartition(frozenset({1, 2}), frozenset({2, 3}))


def test_mol_shift_invariant_when_both_sides_present():
    rng = np.random.default_rng(1)
    p = _part({0, 1, 2}, {3, 4, 5})
    for _ in range(20):
        z = rng.standard_normal(6).astype(np.float32)
        c = np.float32(rng.uniform(-3, 3))
        a = mol_loss(Tensor(z), 4, p)
        b = mol_loss(Tensor(z + c), 4, p)
        assert abs(a - b) < 1e-4 * max(1.0, abs(a))
        assert a >= 0.0


# -- proximal term ----------------------------------------------------------------


def test_prox_zero_at_global():
    w = Tensor([1.0, 2.0, 3.0])
    assert prox_loss(w, w, 3.8) == 0.0


def test_prox_reference_value():
    w = Tensor([2.0, 0.0])
    wg = Tensor([1.0, 1.0])  # diff [1, -1]
    assert abs(prox_loss(w, wg, 3.8) - 3.8) < 1e-6


def test_prox_disabled_at_zero_lambda():
    rng = np.random.default_rng(2)
    w = Tensor(rng.standard_normal(10).astype(np.float32))
    wg = Tensor(rng.standard_normal(10).astype(np.float32))
    assert prox_loss(w, wg, 0.0) == 0.0
    assert prox_loss(w, wg, 1.0) >= 0.0


def test_prox_length_mismatch():
    with pytest.raises(DimensionError):
        prox_loss(Tensor([1.0]), Tensor([1.0, 2.0]), 1.0)


# -- total loss --------------------------------------------------------------------


def _batch(rng, head, n, classes):
    return [
        (Tensor(rng.standard_normal(head.c_feat).astype(np.float32)), int(t))
        for t in rng.integers(0, classes, n)
    ]


def test_total_loss_reduces_to_mean_ce():
    rng = np.random.default_rng(3)
    head = init_head(4, 3, 5, rng)
    batch = _batch(rng, head, 3, 5)
    part = ClassPartition(frozenset({0, 1}), frozenset({2, 3, 4}))
    cfg = LossConfig(mu=0.0, lam=0.0, lr=0.01)
    val, _ = total_loss(head, batch, part, flatten_params(head), cfg)
    # standalone path: eager per-sample CE, same fixed-order mean
    ces = np.array(
        [cross_entropy(head_logits(head, f), t) for f, t in batch], np.float32
    )
    assert val == float(np.float32(seq_sum(ces) / np.float32(len(ces))))


def test_total_loss_single_sample_at_global_is_ce():
    rng = np.random.default_rng(4)
    head = init_head(4, 3, 4, rng)
    f = Tensor(rng.standard_normal(4).astype(np.float32))
    part = ClassPartition(frozenset(), frozenset(range(4)))
    cfg = LossConfig(mu=0.0, lam=3.8, lr=0.01)
    val, _ = total_loss(head, [(f, 2)], part, flatten_params(head), cfg)
    assert val == cross_entropy(head_logits(head, f), 2)


def test_total_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    head = init_head(3, 2, 4, rng)
    batch = [(Tensor(rng.standard_normal(3).astype(np.float32)), 2 + int(t)) for t in rng.integers(0, 2, 3)]
    part = ClassPartition(frozenset({0, 1}), frozenset({2, 3}))
    wg = Tensor(flatten_params(head).data + 0.1)
    cfg = LossConfig(mu=2.0, lam=3.8, lr=0.01)
    r = check_case(head, batch, part, wg, cfg)
    assert r["max_scaled_err"] < REL_TOL


def test_total_loss_empty_batch():
    head = init_head(3, 2, 2, np.random.default_rng(6))
    part = ClassPartition(frozenset(), frozenset({0, 1}))
    with pytest.raises(DimensionError):
        total_loss(head, [], part, flatten_params(head), LossConfig())


# -- SGD step ----------------------------------------------------------------------


def _unit_head(value: float) -> TrainableHead:
    return TrainableHead(
        conv_w=Tensor([[value]]),
        conv_b=Tensor([value]),
        cls_w=Tensor([[value]]),
        cls_b=Tensor([value]),
    )


def test_sgd_zero_lr_is_identity():
    rng = np.random.default_rng(7)
    head = init_head(4, 3, 2, rng)
    part = ClassPartition(frozenset(), frozenset({0, 1}))
    _, grads = total_loss(
        head, _batch(rng, head, 2, 2), part, flatten_params(head), LossConfig()
    )
    assert sgd_step(head, grads, 0.0) == head


def test_sgd_single_step_arithmetic():
    from fedswarm import HeadGrads

    head = _unit_head(1.0)
    grads = HeadGrads(
        conv_w=Tensor([[2.0]]), conv_b=Tensor([2.0]),
        cls_w=Tensor([[2.0]]), cls_b=Tensor([2.0]),
    )
    stepped = sgd_step(head, grads, 0.5)
    assert stepped == _unit_head(0.0)


def test_sgd_shape_mismatch():
    from fedswarm import HeadGrads

    head = _unit_head(1.0)
    grads = HeadGrads(
        conv_w=Tensor([[2.0, 1.0]]), conv_b=Tensor([2.0]),
        cls_w=Tensor([[2.0]]), cls_b=Tensor([2.0]),
    )
    with pytest.raises(DimensionError):
        sgd_step(head, grads, 0.5)


def test_sgd_drives_down_separable_toy_loss():
    rng = np.random.default_rng(8)
    head = init_head(2, 4, 2, rng)
    batch = []
    for i in range(8):
        center = np.array([1.5, 0.0] if i % 2 == 0 else [-1.5, 0.0], np.float32)
        x = center + rng.standard_normal(2).astype(np.float32) * 0.1
        batch.append((Tensor(x), i % 2))
    part = ClassPartition(frozenset(), frozenset({0, 1}))
    cfg = LossConfig(mu=0.0, lam=0.0, lr=0.1, batch_size=8)
    losses = []
    for _ in range(150):
        val, grads = total_loss(head, batch, part, flatten_params(head), cfg)
        head = sgd_step(head, grads, cfg.lr)
        losses.append(val)
    windows = [sum(losses[i : i + 10]) / 10 for i in range(0, 150, 10)]
    assert all(b < a for a, b in zip(windows, windows[1:]))
    assert losses[-1] < 0.1


# -- config validation ----------------------------------------------------------


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(mu=-0.1)
    with pytest.raises(ConfigError):
        LossConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        LossConfig(lr=0.0)
    with pytest.raises(ConfigError):
        LossConfig(batch_size=0)
    with pytest.raises(ConfigError):
        LossConfig(local_epochs_per_round=0)


def test_loss_config_defaults():
    cfg = LossConfig()
    assert cfg.mu == 2.0 and cfg.lam == 3.8
    assert cfg.lr == 0.01 and cfg.batch_size == 4
