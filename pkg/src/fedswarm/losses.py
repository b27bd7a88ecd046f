"""Training objective: cross-entropy + mu * mean-output regularizer +
(lambda/2) * proximal pull toward the last global model, plus plain SGD.

The mean-output term compares the average logit of this session's
classes against the average logit of previously learned classes,
excluding the sample's own target output. When the node holds a single
new class (so the new-side set is empty after exclusion) it falls back
to suppressing the old-class mean directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, RegistryError
from .model import TrainableHead, head_forward_graph, head_param_leaves
from .tensor import Graph, Tensor, seq_sum

__all__ = [
    "LossConfig",
    "ClassPartition",
    "HeadGrads",
    "cross_entropy",
    "mol_loss",
    "prox_loss",
    "total_loss",
    "sgd_step",
]


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and local-training knobs.

    mu weights the mean-output regularizer, lam the proximal term.
    Both at zero reduce the objective to plain cross-entropy.
    """

    mu: float = 2.0
    lam: float = 3.8
    lr: float = 0.01
    batch_size: int = 4
    local_epochs_per_round: int = 1

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigError(f"mu must be nonnegative, got {self.mu}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.local_epochs_per_round < 1:
            raise ConfigError(
                f"local_epochs_per_round must be positive, got {self.local_epochs_per_round}"
            )


@dataclass(frozen=True)
class ClassPartition:
    """Old (previous sessions, global) vs new (this session, this node)."""

    old_classes: frozenset
    new_classes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "old_classes", frozenset(int(c) for c in self.old_classes))
        object.__setattr__(self, "new_classes", frozenset(int(c) for c in self.new_classes))
        overlap = self.old_classes & self.new_classes
        if overlap:
            raise RegistryError(f"classes in both partitions: {sorted(overlap)}")


@dataclass(frozen=True)
class HeadGrads:
    """Gradient of the total loss with respect to each head tensor."""

    conv_w: Tensor
    conv_b: Tensor
    cls_w: Tensor
    cls_b: Tensor


def _check_target(target: int, num_classes: int) -> int:
    t = int(target)
    if not 0 <= t < num_classes:
        raise IndexError(f"target {t} out of range for {num_classes} classes")
    return t


def _ce_kernel(z: np.ndarray, target: int):
    """Stabilized softmax cross-entropy; returns (loss, probabilities)."""
    shifted = z - np.max(z)
    exps = np.exp(shifted)
    total = seq_sum(exps)
    loss = np.float32(np.log(total) - shifted[target])
    return loss, exps / total


def _mol_sets(target: int, part: ClassPartition, num_classes: int):
    t = int(target)
    if t not in part.new_classes and t not in part.old_classes:
        raise RegistryError(f"target {t} is in neither side of the partition")
    a = sorted(part.new_classes - {t})
    b = sorted(part.old_classes - {t})
    for c in a + b:
        if not 0 <= c < num_classes:
            raise IndexError(f"partition class {c} out of range for {num_classes} logits")
    return a, b


def _mol_kernel(z: np.ndarray, a: list, b: list):
    """Value and dL/dz of the mean-output term for precomputed index sets."""
    grad = np.zeros_like(z)
    if not b:
        return np.float32(0.0), grad
    mean_b = seq_sum(z[b]) / np.float32(len(b))
    if a:
        mean_a = seq_sum(z[a]) / np.float32(len(a))
        diff = np.float32(mean_a - mean_b)
        grad[a] = np.float32(2.0) * diff / np.float32(len(a))
        grad[b] = np.float32(-2.0) * diff / np.float32(len(b))
        return np.float32(diff * diff), grad
    grad[b] = np.float32(2.0) * mean_b / np.float32(len(b))
    return np.float32(mean_b * mean_b), grad


def cross_entropy(logits: Tensor, target: int) -> float:
    """-log softmax(logits)[target], max-shifted for stability."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, np.float32)
    t = _check_target(target, z.size)
    loss, _ = _ce_kernel(z.reshape(-1), t)
    return float(loss)


def mol_loss(logits: Tensor, target: int, part: ClassPartition) -> float:
    """Squared gap between new-class and old-class mean logits.

    The target's own logit is excluded from both sides. With no new
    classes left after exclusion the old-class mean itself is squared;
    with no old classes the term vanishes.
    """
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, np.float32)
    z = z.reshape(-1)
    a, b = _mol_sets(target, part, z.size)
    val, _ = _mol_kernel(z, a, b)
    return float(val)


def prox_loss(w: Tensor, w_global: Tensor, lam: float) -> float:
    """(lam/2) * squared distance from the stored global parameters."""
    if w.size != w_global.size:
        raise DimensionError(f"parameter vectors differ: {w.size} vs {w_global.size}")
    d = w.data - w_global.data
    half = np.float32(0.5) * np.float32(lam)
    return float(half * seq_sum(d * d))


def _ce_node(g: Graph, logits: int, target: int) -> int:
    z = g.raw_value(logits).reshape(-1)
    t = _check_target(target, z.size)
    loss, probs = _ce_kernel(z, t)
    shape = g.raw_value(logits).shape

    def backward_fn(gout):
        dz = probs.copy()
        dz[t] -= np.float32(1.0)
        return (dz.reshape(shape) * gout,)

    return g.push_op("cross_entropy", (logits,), loss, backward_fn)


def _mol_node(g: Graph, logits: int, target: int, part: ClassPartition) -> int:
    z = g.raw_value(logits).reshape(-1)
    a, b = _mol_sets(target, part, z.size)
    val, dz = _mol_kernel(z, a, b)
    shape = g.raw_value(logits).shape

    def backward_fn(gout):
        return (dz.reshape(shape) * gout,)

    return g.push_op("mean_output", (logits,), val, backward_fn)


def _mean_node(g: Graph, terms: list) -> int:
    vals = np.array([g.raw_value(t) for t in terms], dtype=np.float32)
    n = np.float32(len(terms))

    def backward_fn(gout):
        gin = gout / n
        return (gin,) * len(terms)

    return g.push_op("batch_mean", tuple(terms), seq_sum(vals) / n, backward_fn)


def _prox_node(g: Graph, param_ids: dict, w_global: Tensor, lam: float) -> int:
    order = ("conv_w", "conv_b", "cls_w", "cls_b")
    leaves = [param_ids[k] for k in order]
    values = [g.raw_value(i) for i in leaves]
    flat = np.concatenate([v.reshape(-1) for v in values])
    if flat.size != w_global.size:
        raise DimensionError(
            f"global snapshot has {w_global.size} values, head has {flat.size}"
        )
    d = flat - w_global.data
    half = np.float32(0.5) * np.float32(lam)
    lam32 = np.float32(lam)

    def backward_fn(gout):
        full = lam32 * d * gout
        out = []
        off = 0
        for v in values:
            out.append(full[off : off + v.size].reshape(v.shape))
            off += v.size
        return tuple(out)

    return g.push_op("prox", tuple(leaves), half * seq_sum(d * d), backward_fn)


def total_loss(
    head: TrainableHead,
    batch,
    part: ClassPartition,
    w_global: Tensor,
    cfg: LossConfig,
):
    """Composite loss over a batch of (features, target) pairs.

    Per sample: cross_entropy + mu * mean-output term; batch-averaged,
    then the proximal pull toward ``w_global`` (a flat snapshot) is
    added once. Returns (loss value, HeadGrads).
    """
    samples = list(batch)
    if not samples:
        raise DimensionError("total_loss needs a nonempty batch")
    g = Graph()
    params = head_param_leaves(g, head)
    per_sample = []
    for feats, target in samples:
        logits = head_forward_graph(g, params, feats)
        term = _ce_node(g, logits, target)
        if cfg.mu != 0.0:
            term = g.add(term, g.scale(_mol_node(g, logits, target, part), cfg.mu))
        per_sample.append(term)
    total = g.add(_mean_node(g, per_sample), _prox_node(g, params, w_global, cfg.lam))
    g.backward(total)
    grads = HeadGrads(
        conv_w=g.grad(params["conv_w"]),
        conv_b=g.grad(params["conv_b"]),
        cls_w=g.grad(params["cls_w"]),
        cls_b=g.grad(params["cls_b"]),
    )
    return float(g.raw_value(total)), grads


def sgd_step(head: TrainableHead, grads: HeadGrads, lr: float) -> TrainableHead:
    """One vanilla descent step: w <- w - lr * g on every head tensor."""
    lr32 = np.float32(lr)

    def step(w: Tensor, gr: Tensor) -> Tensor:
        if w.shape != gr.shape:
            raise DimensionError(f"gradient shape {gr.shape} vs parameter {w.shape}")
        return Tensor(w.data - lr32 * gr.data, w.shape)

    return TrainableHead(
        conv_w=step(head.conv_w, grads.conv_w),
        conv_b=step(head.conv_b, grads.conv_b),
        cls_w=step(head.cls_w, grads.cls_w),
        cls_b=step(head.cls_b, grads.cls_b),
    )
