"""Config-driven experiment driver and report I/O.

One experiment = one strategy (naive, odfcl or joint) over a session
plan, from a single seed. The seed is split hierarchically so data,
initialization and the shuffle streams stay independent: adding a
consumer never perturbs the others. Reports are canonical JSON, byte
reproducible for identical configs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .costs import (
    HPM,
    LPM,
    calibrated_uwb_link,
    epoch_energy,
    federated_epoch_time,
    free_local_epochs,
    peak_training_memory,
)
from .errors import ConfigError, EvaluationError, PlanError
from .federation import NodeState, SimNetwork, run_session, write_trace
from .losses import ClassPartition, LossConfig, sgd_step, total_loss
from .model import (
    SplitModel,
    expand_classifier,
    flatten_params,
    head_message_bytes,
    init_head,
)
from .quant import build_backbone
from .sessions import (
    evaluate,
    make_plan,
    node_train_view,
    precompute_features,
    read_manifest,
    registry_from_plan,
)
from .synthetic import SyntheticSpec, gen_synthetic

__all__ = [
    "BackboneSpec",
    "HeadSpec",
    "PlanSpec",
    "TrainSpec",
    "CostSpec",
    "DataSpec",
    "ExperimentConfig",
    "STRATEGIES",
    "default_config",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "save_config",
    "MetricsReport",
    "run_experiment",
    "emit_report",
    "parse_report",
    "strategy_block_bytes",
    "report_table",
]

STRATEGIES = ("naive", "odfcl", "joint")


def _take(d: dict, allowed, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class BackboneSpec:
    layer_dims: tuple = (4, 32, 48)
    weight_sigma: float = 0.25
    activation_range: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ConfigError(f"layer_dims needs >= 2 positive entries, got {self.layer_dims}")


@dataclass(frozen=True)
class HeadSpec:
    hidden: int = 24
    init_sigma: float = 0.1

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"hidden must be positive, got {self.hidden}")
        if not self.init_sigma > 0:
            raise ConfigError(f"init_sigma must be positive, got {self.init_sigma}")


@dataclass(frozen=True)
class PlanSpec:
    num_classes: int = 10
    num_nodes: int = 3
    base_count: int = 4
    classes_per_session_per_node: int = 1


@dataclass(frozen=True)
class TrainSpec:
    t0_epochs: int = 60
    rounds_per_session: int = 6

    def __post_init__(self):
        if self.t0_epochs < 0 or self.rounds_per_session < 0:
            raise ConfigError("epoch and round counts must be nonnegative")


@dataclass(frozen=True)
class CostSpec:
    calibration_bytes: int = 24576
    calibration_seconds: float = 1.7
    samples_per_epoch: int = 28

    def __post_init__(self):
        if self.calibration_bytes < 1 or not self.calibration_seconds > 0:
            raise ConfigError("link calibration needs positive bytes and seconds")
        if self.samples_per_epoch < 1:
            raise ConfigError("samples_per_epoch must be positive")


@dataclass(frozen=True)
class DataSpec:
    """Either synthetic generation params or a manifest to load."""

    kind: str = "synthetic"
    train_per_class: int = 28
    test_per_class: int = 7
    input_shape: tuple = (4, 3, 3)
    sigma_between: float = 1.0
    sigma_within: float = 0.2
    input_scale: float = 0.05
    input_zero_point: int = 0
    manifest_dir: str = ""

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.kind not in ("synthetic", "manifest"):
            raise ConfigError(f"data kind must be synthetic or manifest, got {self.kind!r}")
        if self.kind == "manifest" and not self.manifest_dir:
            raise ConfigError("manifest data needs manifest_dir")

    def synthetic_spec(self, num_classes: int) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=num_classes,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            input_shape=self.input_shape,
            sigma_between=self.sigma_between,
            sigma_within=self.sigma_within,
            input_scale=self.input_scale,
            input_zero_point=self.input_zero_point,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1234
    strategy: str = "odfcl"
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    head: HeadSpec = field(default_factory=HeadSpec)
    plan: PlanSpec = field(default_factory=PlanSpec)
    # desk default trains hotter than the LossConfig baseline: few sync
    # rounds of several local epochs is where the prox anchor pays off
    loss: LossConfig = field(default_factory=lambda: LossConfig(lr=0.1, local_epochs_per_round=5))
    train: TrainSpec = field(default_factory=TrainSpec)
    cost: CostSpec = field(default_factory=CostSpec)
    data: DataSpec = field(default_factory=DataSpec)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.data.kind == "synthetic" and self.backbone.layer_dims[0] != self.data.input_shape[0]:
            raise ConfigError(
                f"backbone input channels {self.backbone.layer_dims[0]} do not match "
                f"data channels {self.data.input_shape[0]}"
            )
        # surfaces infeasible class counts early, as a config problem
        try:
            make_plan(
                self.plan.num_classes,
                self.plan.num_nodes,
                self.plan.base_count,
                self.plan.classes_per_session_per_node,
            )
        except PlanError as e:
            raise ConfigError(str(e))


def default_config(strategy: str = "odfcl", seed: int = 1234) -> ExperimentConfig:
    return ExperimentConfig(seed=seed, strategy=strategy)


# -- config (de)serialization ------------------------------------------------

_LOSS_KEYS = {"mu": "mu", "lambda": "lam", "lr": "lr", "batch_size": "batch_size",
              "local_epochs_per_round": "local_epochs_per_round"}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "seed": cfg.seed,
        "strategy": cfg.strategy,
        "backbone": asdict(cfg.backbone),
        "head": asdict(cfg.head),
        "plan": asdict(cfg.plan),
        "loss": {
            "mu": cfg.loss.mu,
            "lambda": cfg.loss.lam,
            "lr": cfg.loss.lr,
            "batch_size": cfg.loss.batch_size,
            "local_epochs_per_round": cfg.loss.local_epochs_per_round,
        },
        "train": asdict(cfg.train),
        "cost": asdict(cfg.cost),
        "data": asdict(cfg.data),
    }
    d["backbone"]["layer_dims"] = list(cfg.backbone.layer_dims)
    d["data"]["input_shape"] = list(cfg.data.input_shape)
    return d


def _build(cls, d: dict, where: str):
    names = [f for f in cls.__dataclass_fields__]
    return cls(**_take(d, names, where))


def config_from_dict(d: dict) -> ExperimentConfig:
    top = ("seed", "strategy", "backbone", "head", "plan", "loss", "train", "cost", "data")
    d = _take(dict(d), top, "config")
    loss_d = _take(dict(d.get("loss", {})), _LOSS_KEYS, "loss")
    loss = LossConfig(**{_LOSS_KEYS[k]: v for k, v in loss_d.items()})
    return ExperimentConfig(
        seed=int(d.get("seed", 1234)),
        strategy=d.get("strategy", "odfcl"),
        backbone=_build(BackboneSpec, d.get("backbone", {}), "backbone"),
        head=_build(HeadSpec, d.get("head", {}), "head"),
        plan=_build(PlanSpec, d.get("plan", {}), "plan"),
        loss=loss,
        train=_build(TrainSpec, d.get("train", {}), "train"),
        cost=_build(CostSpec, d.get("cost", {}), "cost"),
        data=_build(DataSpec, d.get("data", {}), "data"),
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {p} is not valid JSON: {e}")
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n")


# -- the experiment ----------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """Everything one run produced: per-session metrics plus cost summary."""

    seed: int
    strategy: str
    config: dict
    sessions: list
    cost: dict

    def __post_init__(self):
        last = -1
        for s in self.sessions:
            if s["session"] != last + 1:
                raise EvaluationError("sessions must be consecutive from 0")
            last = s["session"]
            for key in ("accuracy_seen", "accuracy_base"):
                if not 0.0 <= s[key] <= 1.0:
                    raise EvaluationError(f"{key}={s[key]} outside [0, 1]")

    def final_accuracy(self) -> float:
        return self.sessions[-1]["accuracy_seen"]


def _centralized_epochs(head, pairs, cfg: LossConfig, epochs: int, part, rng):
    """Plain minibatch SGD on one pooled dataset (T0 and joint strategy)."""
    for _ in range(epochs):
        order = [int(i) for i in rng.permutation(len(pairs))]
        for i in range(0, len(order), cfg.batch_size):
            batch = [pairs[j] for j in order[i : i + cfg.batch_size]]
            _, grads = total_loss(head, batch, part, flatten_params(head), cfg)
            head = sgd_step(head, grads, cfg.lr)
    return head


def _pairs(samples, features):
    return [(features[s.sample_id], s.class_id) for s in samples]


def run_experiment(cfg: ExperimentConfig, trace_out=None) -> MetricsReport:
    """Execute one strategy over the full session plan.

    All strategies share the T0 head: pretraining consumes dedicated
    RNG streams, so naive, odfcl and joint runs from the same seed
    start every session sequence from identical parameters. Pass
    ``trace_out`` to dump the simulated link's event log.
    """
    children = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_data = np.random.default_rng(children[0])
    rng_backbone = np.random.default_rng(children[1])
    rng_head = np.random.default_rng(children[2])
    rng_t0 = np.random.default_rng(children[3])
    rng_fed = np.random.default_rng(children[4])
    rng_joint = np.random.default_rng(children[5])

    plan = make_plan(
        cfg.plan.num_classes,
        cfg.plan.num_nodes,
        cfg.plan.base_count,
        cfg.plan.classes_per_session_per_node,
    )
    registry = registry_from_plan(plan)

    if cfg.data.kind == "synthetic":
        train, test = gen_synthetic(cfg.data.synthetic_spec(cfg.plan.num_classes), rng_data)
    else:
        train, test = read_manifest(cfg.data.manifest_dir)
        missing = set(range(cfg.plan.num_classes)) - train.class_ids()
        if missing:
            raise ConfigError(f"manifest lacks training classes {sorted(missing)}")

    backbone = build_backbone(
        cfg.backbone.layer_dims,
        rng_backbone,
        weight_sigma=cfg.backbone.weight_sigma,
        activation_range=cfg.backbone.activation_range,
    )
    feats = precompute_features(backbone, train)
    feats.update(precompute_features(backbone, test))

    # T0: joint pretraining of the head on the base classes, plain CE
    ce_cfg = LossConfig(mu=0.0, lam=0.0, lr=cfg.loss.lr,
                        batch_size=cfg.loss.batch_size,
                        local_epochs_per_round=cfg.loss.local_epochs_per_round)
    base = list(plan.base_classes)
    base_part = ClassPartition(frozenset(), frozenset(base))
    head = init_head(backbone.feature_dim, cfg.head.hidden, len(base), rng_head, cfg.head.init_sigma)
    head = _centralized_epochs(
        head, _pairs(train.of_classes(base).samples, feats), ce_cfg,
        cfg.train.t0_epochs, base_part, rng_t0,
    )

    def acc(h, seen, subset=None):
        # subset narrows the scored samples; predictions always argmax
        # over every seen class (the usual forgetting measurement)
        return evaluate(
            SplitModel(backbone, h), test, seen, features=feats, sample_classes=subset
        )

    def per_class(h, seen):
        return {str(c): acc(h, seen, [c]) for c in seen}

    t0_acc = acc(head, base)
    sessions = [{
        "session": 0,
        "seen_classes": base,
        "new_classes": base,
        "accuracy_seen": t0_acc,
        "accuracy_base": t0_acc,
        "accuracy_per_class": per_class(head, base),
        "rounds": [],
    }]

    link = calibrated_uwb_link(cfg.cost.calibration_bytes, cfg.cost.calibration_seconds)
    net = SimNetwork(link.throughput_bps, link.overhead_s)

    # strategy semantics: naive is the federated pipeline with both
    # regularizers off; odfcl uses the configured weights; joint pools
    # all seen data centrally with plain CE as the upper bound.
    if cfg.strategy == "naive":
        fed_cfg = LossConfig(mu=0.0, lam=0.0, lr=cfg.loss.lr,
                             batch_size=cfg.loss.batch_size,
                             local_epochs_per_round=cfg.loss.local_epochs_per_round)
    else:
        fed_cfg = cfg.loss

    for t in range(1, plan.num_sessions + 1):
        new_ids = plan.session_classes(t)
        seen = registry.seen_through(t)
        old = registry.seen_through(t - 1)
        head = expand_classifier(head, new_ids)
        trace = []
        if cfg.strategy == "joint":
            pool = _pairs(train.of_classes(seen).samples, feats)
            epochs = cfg.train.rounds_per_session * cfg.loss.local_epochs_per_round
            part = ClassPartition(frozenset(), frozenset(seen))
            head = _centralized_epochs(head, pool, ce_cfg, epochs, part, rng_joint)
        else:
            nodes = [
                NodeState(n, head, head, plan.node_classes(t, n))
                for n in range(plan.num_nodes)
            ]
            views = {
                n.node_id: _pairs(node_train_view(train, plan, t, n.node_id).samples, feats)
                for n in nodes
            }
            parts = {
                n.node_id: ClassPartition(frozenset(old), frozenset(n.assignment))
                for n in nodes
            }
            head, trace = run_session(
                nodes, net, cfg.train.rounds_per_session, views, parts, fed_cfg,
                rng_fed, evaluator=lambda h: acc(h, seen),
            )
        sessions.append({
            "session": t,
            "seen_classes": seen,
            "new_classes": new_ids,
            "accuracy_seen": acc(head, seen),
            "accuracy_base": acc(head, seen, base),
            "accuracy_per_class": per_class(head, seen),
            "rounds": trace,
        })

    msg_bytes = head_message_bytes(head)
    fed_s = federated_epoch_time(HPM, link, plan.num_nodes, msg_bytes)
    cost = {
        "message_bytes": msg_bytes,
        "federated_epoch_s": fed_s,
        "epoch_energy_lpm_j": epoch_energy(LPM),
        "epoch_energy_hpm_j": epoch_energy(HPM),
        "free_local_epochs": free_local_epochs(fed_s, LPM.local_epoch_latency_s),
        "peak_training_memory_bytes": peak_training_memory(head, cfg.loss.batch_size),
        "total_comm_s": net.clock_s,
    }
    if trace_out is not None:
        write_trace(net, trace_out)
    return MetricsReport(
        seed=cfg.seed,
        strategy=cfg.strategy,
        config=config_to_dict(cfg),
        sessions=sessions,
        cost=cost,
    )


# -- report I/O ---------------------------------------------------------------


def emit_report(r: MetricsReport, path) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline.

    Identical reports serialize to identical bytes, which is what the
    determinism checks compare.
    """
    payload = {
        "seed": r.seed,
        "strategy": r.strategy,
        "config": r.config,
        "sessions": r.sessions,
        "cost": r.cost,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def parse_report(path) -> MetricsReport:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"report file not found: {p}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"report {p} is not valid JSON: {e}")
    keys = ("seed", "strategy", "config", "sessions", "cost")
    raw = _take(raw, keys, "report")
    return MetricsReport(**{k: raw[k] for k in keys})


def strategy_block_bytes(r: MetricsReport) -> bytes:
    """Session results + cost, serialized without the config echo.

    Two runs that differ only in declared strategy labels (naive vs
    odfcl with both weights zero) must agree on these bytes exactly.
    """
    return json.dumps(
        {"sessions": r.sessions, "cost": r.cost}, sort_keys=True, indent=2
    ).encode()


def report_table(reports) -> str:
    """Accuracy [%] per strategy and session, one row per report."""
    reports = list(reports)
    if not reports:
        raise EvaluationError("no reports to tabulate")
    n_sessions = max(len(r.sessions) for r in reports)
    header = "strategy   " + "  ".join(f"T{t}[%]" for t in range(n_sessions))
    lines = [header]
    for r in reports:
        cells = [f"{100.0 * s['accuracy_seen']:5.1f}" for s in r.sessions]
        lines.append(f"{r.strategy:<10} " + "  ".join(cells))
    return "\n".join(lines) + "\n"
