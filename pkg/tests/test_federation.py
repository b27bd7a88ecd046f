"""Parameter averaging, sync rounds and the simulated link."""

import json

import numpy as np
import pytest

from fedswarm import (
    AggregationError,
    ClassPartition,
    DimensionError,
    LossConfig,
    NodeState,
    SimNetwork,
    SyncMessage,
    Tensor,
    fedavg,
    flatten_params,
    init_head,
    local_epoch,
    run_session,
    sync_round,
    write_trace,
)


def _vec(*values):
    return Tensor(np.asarray(values, np.float32))


# -- fedavg ---------------------------------------------------------------------


def test_fedavg_idempotent_on_identical_vectors():
    v = _vec(0.1, -2.7, 3.3)  # awkward float32 values on purpose
    out = fedavg([v, v, v])
    assert np.array_equal(out.data, v.data)


def test_fedavg_midpoint():
    out = fedavg([_vec(0.0, 2.0), _vec(2.0, 4.0)])
    assert np.array_equal(out.data, np.array([1.0, 3.0], np.float32))


def test_fedavg_sample_count_weights():
    out = fedavg([_vec(0.0), _vec(3.0)], weights=[28, 56])
    assert out.data[0] == 2.0


def test_fedavg_input_validation():
    with pytest.raises(AggregationError):
        fedavg([])
    with pytest.raises(DimensionError):
        fedavg([_vec(1.0), _vec(1.0, 2.0)])
    with pytest.raises(AggregationError):
        fedavg([_vec(1.0), _vec(2.0)], weights=[0.0, 0.0])
    with pytest.raises(AggregationError):
        fedavg([_vec(1.0), _vec(2.0)], weights=[1.0, -1.0])
    with pytest.raises(AggregationError):
        fedavg([_vec(1.0), _vec(2.0)], node_ids=[1, 1])


def test_fedavg_algebra_seeded():
    for seed in range(25):
        rng = np.random.default_rng(900 + seed)
        k = int(rng.integers(1, 6))
        p = int(rng.integers(1, 40))
        vecs = [Tensor(rng.standard_normal(p).astype(np.float32)) for _ in range(k)]
        weights = rng.uniform(0.1, 5.0, k).tolist()
        ids = list(rng.permutation(k * 2)[:k])
        avg = fedavg(vecs, weights, ids)

        # permutation invariance, bit for bit
        perm = list(rng.permutation(k))
        again = fedavg([vecs[i] for i in perm], [weights[i] for i in perm],
                       [ids[i] for i in perm])
        assert np.array_equal(avg.data, again.data)

        # componentwise bounds
        stack = np.stack([v.data for v in vecs])
        assert np.all(avg.data >= stack.min(axis=0))
        assert np.all(avg.data <= stack.max(axis=0))


# -- messages and network -----------------------------------------------------


def test_sync_message_byte_size():
    msg = SyncMessage("upload", 0, Tensor.zeros((6144,)))
    assert msg.byte_size == 24576


def test_sync_message_validation():
    with pytest.raises(AggregationError):
        SyncMessage("gossip", 0, Tensor.zeros((4,)))
    with pytest.raises(DimensionError):
        SyncMessage("upload", 0, Tensor.zeros((2, 2)))  # only flat vectors


def test_network_clock_and_events():
    net = SimNetwork(throughput_bps=100.0, overhead_s=0.5)
    dt = net.send(SyncMessage("upload", 1, Tensor.zeros((25,))))
    assert dt == 0.5 + 100 / 100.0
    net.send(SyncMessage("broadcast", 0, Tensor.zeros((25,))))
    assert net.clock_s == 2 * dt
    assert [e.kind for e in net.events] == ["upload", "broadcast"]
    with pytest.raises(AggregationError):
        SimNetwork(throughput_bps=0.0)


# -- sync rounds -----------------------------------------------------------------


def _swarm(n_nodes, c_feat=5, hidden=4, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n_nodes):
        h = init_head(c_feat, hidden, classes, rng)
        nodes.append(NodeState(i, h, h))
    return nodes


def test_sync_round_single_node_is_identity():
    (node,) = _swarm(1)
    before = flatten_params(node.head)
    net = SimNetwork(1e6)
    sync_round([node], net)
    assert np.array_equal(flatten_params(node.head).data, before.data)


def test_sync_round_reaches_consensus():
    nodes = _swarm(3)
    net = SimNetwork(1e6)
    sync_round(nodes, net)
    ref = flatten_params(nodes[0].head).data
    for n in nodes:
        assert np.array_equal(flatten_params(n.head).data, ref)
        assert n.snapshot == n.head  # prox anchor replaced too


def test_sync_round_communication_time():
    # 6144-param heads on a link calibrated to 1.7 s per 24576 bytes:
    # three uploads + three broadcasts = 10.2 s on the shared link
    rng = np.random.default_rng(1)
    nodes = []
    for i in range(3):
        h = init_head(158, 32, 32, rng)
        nodes.append(NodeState(i, h, h))
    net = SimNetwork(24576 / 1.7)
    elapsed = sync_round(nodes, net)
    assert elapsed == pytest.approx(3 * (1.7 + 1.7), rel=1e-12)
    assert net.clock_s == pytest.approx(10.2, rel=1e-12)


def test_sync_round_rejects_mixed_architectures():
    nodes = _swarm(2)
    rng = np.random.default_rng(2)
    other = init_head(5, 4, 7, rng)
    nodes[1] = NodeState(1, other, other)
    with pytest.raises(AggregationError):
        sync_round(nodes, SimNetwork(1e6))


def test_node_state_architecture_check():
    rng = np.random.default_rng(3)
    with pytest.raises(AggregationError):
        NodeState(0, init_head(5, 4, 3, rng), init_head(5, 4, 2, rng))


# -- local training and sessions ---------------------------------------------------


def _views(nodes, classes, per_node=6, seed=4):
    rng = np.random.default_rng(seed)
    views, parts = {}, {}
    for n in nodes:
        c = n.node_id % classes
        views[n.node_id] = [
            (Tensor(rng.standard_normal(n.head.c_feat).astype(np.float32)), c)
            for _ in range(per_node)
        ]
        parts[n.node_id] = ClassPartition(
            frozenset(k for k in range(classes) if k != c), frozenset({c})
        )
    return views, parts


def test_local_epoch_empty_view_is_noop():
    (node,) = _swarm(1)
    before = node.head
    cfg = LossConfig(lr=0.1)
    loss = local_epoch(node, [], ClassPartition(frozenset(), frozenset({0})),
                       cfg, np.random.default_rng(0))
    assert loss == 0.0
    assert node.head == before
    assert node.epochs == 0


def test_local_epoch_trains_and_counts():
    (node,) = _swarm(1)
    views, parts = _views([node], 3)
    before = node.head
    loss = local_epoch(node, views[0], parts[0], LossConfig(lr=0.1),
                       np.random.default_rng(0))
    assert loss > 0.0
    assert node.head != before
    assert node.epochs == 1


def test_run_session_zero_rounds():
    nodes = _swarm(3)
    before = flatten_params(nodes[0].head)
    views, parts = _views(nodes, 3)
    head, trace = run_session(nodes, SimNetwork(1e6), 0, views, parts,
                              LossConfig(lr=0.1), np.random.default_rng(0))
    assert trace == []
    assert np.array_equal(flatten_params(head).data, before.data)


def test_run_session_all_empty_views_keeps_head():
    # nodes start in consensus, as after any broadcast
    shared = init_head(5, 4, 3, np.random.default_rng(21))
    nodes = [NodeState(i, shared, shared) for i in range(3)]
    before = flatten_params(nodes[0].head)
    views = {n.node_id: [] for n in nodes}
    parts = {n.node_id: ClassPartition(frozenset(), frozenset({0})) for n in nodes}
    head, trace = run_session(nodes, SimNetwork(1e6), 4, views, parts,
                              LossConfig(lr=0.1), np.random.default_rng(0))
    assert np.array_equal(flatten_params(head).data, before.data)
    assert all(e["mean_loss"] == {"0": 0.0, "1": 0.0, "2": 0.0} for e in trace)


def test_run_session_trace_reproducible():
    def go():
        nodes = _swarm(3, seed=7)
        views, parts = _views(nodes, 3)
        net = SimNetwork(1e5)
        head, trace = run_session(nodes, net, 3, views, parts,
                                  LossConfig(mu=2.0, lam=3.8, lr=0.05),
                                  np.random.default_rng(11))
        return flatten_params(head).data, json.dumps(trace, sort_keys=True)

    h1, t1 = go()
    h2, t2 = go()
    assert np.array_equal(h1, h2)
    assert t1 == t2


def test_run_session_rejects_negative_rounds():
    nodes = _swarm(2)
    views, parts = _views(nodes, 3)
    with pytest.raises(AggregationError):
        run_session(nodes, SimNetwork(1e6), -1, views, parts,
                    LossConfig(), np.random.default_rng(0))


# -- trace log ----------------------------------------------------------------------


def test_trace_log_format_and_audit(tmp_path):
    nodes = _swarm(3, seed=9)
    views, parts = _views(nodes, 3)
    net = SimNetwork(1e5)
    run_session(nodes, net, 2, views, parts, LossConfig(lr=0.05),
                np.random.default_rng(1))
    path = tmp_path / "trace.tsv"
    write_trace(net, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_s\tnode\tkind\tbytes"
    assert len(lines) == 1 + len(net.events)
    p_bytes = 4 * nodes[0].head.parameter_count
    times = []
    for ln in lines[1:]:
        t, node, kind, n_bytes = ln.split("\t")
        times.append(float(t))
        assert kind in ("upload", "broadcast")
        # every message is exactly one head; nothing sample-sized leaks
        assert int(n_bytes) == p_bytes
    assert times == sorted(times)
    assert len(lines) - 1 == 2 * 3 * 2  # (upload + broadcast) x nodes x rounds
