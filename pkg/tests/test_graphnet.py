import math

import numpy as np
import pytest
import torch

from naryground.config import ModelConfig
from naryground.graphnet import (
    GraphAttentionLayer,
    GroundingNetwork,
    SceneGraph,
    build_scene_graph,
    complete_graph,
    graph_masks,
    grounding_loss,
    masked_confidences,
    predict_object,
)

from gradcheck import fd_check
from oracles import brute_clique_edges

CFG = ModelConfig(dim=16, heads=2, k1=4, k2=4, dim_2d=8, dropout=0.0)


# --- graph construction -----------------------------------------------------------


def test_single_combo_clique():
    graph = build_scene_graph([frozenset({2, 4, 7, 9})])
    assert graph.nodes == (2, 4, 7, 9)
    assert len(graph.edges) == 6


def test_two_combos_share_node():
    graph = build_scene_graph([frozenset({0, 1}), frozenset({1, 2})])
    assert graph.nodes == (0, 1, 2)
    assert graph.edges == frozenset({(0, 1), (1, 2)})


def test_edges_match_brute_force(rng):
    for _ in range(200):
        n_combos = int(rng.integers(1, 6))
        combos = []
        for _ in range(n_combos):
            size = int(rng.integers(2, 5))
            combos.append(frozenset(int(v) for v in rng.choice(10, size=size, replace=False)))
        graph = build_scene_graph(combos)
        assert set(graph.edges) == brute_clique_edges(combos)
        for combo in combos:  # clique property
            for a in combo:
                for b in combo:
                    if a < b:
                        assert (a, b) in graph.edges
        assert graph.nodes == tuple(sorted(set().union(*combos)))


def test_graph_masks_dense():
    graph = build_scene_graph([frozenset({1, 3})])
    node_mask, adj = graph_masks(graph, 5)
    assert node_mask.tolist() == [False, True, False, True, False]
    assert adj[1, 3] and adj[3, 1] and adj.sum() == 2


def test_complete_graph():
    graph = complete_graph(4)
    assert len(graph.edges) == 6
    assert graph.nodes == (0, 1, 2, 3)


def test_empty_combos_rejected():
    with pytest.raises(ValueError):
        build_scene_graph([])


# --- graph attention layer -----------------------------------------------------------


def gat_reference(layer, x, adj, self_loop):
    """Independent dense masked-attention computation in numpy."""
    n, c = x.shape
    h, d = layer.heads, layer.head_dim
    w_src = layer.proj_src.weight.detach().numpy()
    w_dst = layer.proj_dst.weight.detach().numpy()
    att = layer.att.detach().numpy()
    src = (x @ w_src.T).reshape(n, h, d)
    dst = (x @ w_dst.T).reshape(n, h, d)
    neigh = adj.copy()
    if self_loop:
        neigh |= np.eye(n, dtype=bool)

    def leaky(v):
        return np.where(v > 0, v, 0.2 * v)

    def elu(v):
        return np.where(v > 0, v, np.exp(v) - 1)

    out = np.zeros((n, h, d))
    for i in range(n):
        js = np.nonzero(neigh[i])[0]
        if len(js) == 0:
            out[i] = x[i].reshape(h, d)
            continue
        for k in range(h):
            e = np.array([(leaky(src[i, k] + dst[j, k]) * att[k]).sum() for j in js])
            e = e - e.max()
            alpha = np.exp(e) / np.exp(e).sum()
            agg = (alpha[:, None] * dst[js, k]).sum(axis=0)
            out[i, k] = elu(agg)
    return out.reshape(n, c)


def test_gat_single_neighbor_identity_passes_neighbor_value():
    cfg = ModelConfig(dim=16, heads=2, k1=4, k2=4, gat_self_loop=False, dropout=0.0)
    torch.manual_seed(0)
    layer = GraphAttentionLayer(cfg)
    with torch.no_grad():
        layer.proj_dst.weight.copy_(torch.eye(16))
    layer.act = torch.nn.Identity()
    x = torch.randn(1, 2, 16)
    adj = torch.tensor([[[False, True], [False, False]]])
    out = layer(x, adj)
    # alpha over the single neighbor is exactly 1
    assert torch.allclose(out[0, 0], x[0, 1], atol=1e-6)
    # node 1 has no neighbors: pass-through
    assert torch.equal(out[0, 1], x[0, 1])


def test_gat_matches_dense_reference_on_path_graph():
    torch.manual_seed(1)
    layer = GraphAttentionLayer(CFG).double()
    x = torch.randn(1, 3, CFG.dim, dtype=torch.float64)
    adj = torch.tensor([[[0, 1, 0], [1, 0, 1], [0, 1, 0]]], dtype=torch.bool)
    out = layer(x, adj)
    want = gat_reference(layer, x[0].numpy(), adj[0].numpy(), self_loop=True)
    assert np.allclose(out[0].detach().numpy(), want, atol=1e-9)


def test_gat_matches_dense_reference_random(rng):
    torch.manual_seed(2)
    layer = GraphAttentionLayer(CFG).double()
    for _ in range(20):
        n = int(rng.integers(2, 7))
        x = torch.randn(1, n, CFG.dim, dtype=torch.float64)
        adj_np = rng.random((n, n)) < 0.4
        adj_np = adj_np | adj_np.T
        np.fill_diagonal(adj_np, False)
        adj = torch.from_numpy(adj_np)[None]
        out = layer(x, adj)
        want = gat_reference(layer, x[0].numpy(), adj_np, self_loop=True)
        assert np.allclose(out[0].detach().numpy(), want, atol=1e-9)


def test_gat_attention_rows_normalized():
    # via the reference path: alpha sums to 1 over each neighbor set per head
    torch.manual_seed(3)
    layer = GraphAttentionLayer(CFG)
    n = 4
    x = np.random.default_rng(0).standard_normal((n, CFG.dim))
    adj = np.ones((n, n), dtype=bool)
    np.fill_diagonal(adj, False)
    h, d = layer.heads, layer.head_dim
    src = (x @ layer.proj_src.weight.detach().numpy().T).reshape(n, h, d)
    dst = (x @ layer.proj_dst.weight.detach().numpy().T).reshape(n, h, d)
    att = layer.att.detach().numpy()
    for i in range(n):
        js = np.nonzero(adj[i] | (np.arange(n) == i))[0]
        for k in range(h):
            e = np.array(
                [(np.where((src[i, k] + dst[j, k]) > 0, src[i, k] + dst[j, k], 0.2 * (src[i, k] + dst[j, k])) * att[k]).sum() for j in js]
            )
            alpha = np.exp(e - e.max())
            alpha = alpha / alpha.sum()
            assert alpha.sum() == pytest.approx(1.0, abs=1e-9)


def test_gat_respects_topology():
    torch.manual_seed(4)
    layer = GraphAttentionLayer(CFG)
    x = torch.randn(1, 4, CFG.dim)
    adj = torch.zeros(1, 4, 4, dtype=torch.bool)
    adj[0, 0, 1] = adj[0, 1, 0] = True  # 2 and 3 are not neighbors of 0
    out1 = layer(x, adj)
    x2 = x.clone()
    x2[0, 2] = 0.0
    x2[0, 3] = -7.0
    out2 = layer(x2, adj)
    assert torch.allclose(out1[0, 0], out2[0, 0], atol=1e-6)
    assert torch.allclose(out1[0, 1], out2[0, 1], atol=1e-6)


def test_gat_isolated_node_passthrough():
    cfg = ModelConfig(dim=16, heads=2, k1=4, k2=4, gat_self_loop=False, dropout=0.0)
    torch.manual_seed(5)
    layer = GraphAttentionLayer(cfg)
    x = torch.randn(1, 3, 16)
    adj = torch.zeros(1, 3, 3, dtype=torch.bool)
    out = layer(x, adj)
    assert torch.equal(out, x)


def test_gat_gradient():
    torch.manual_seed(6)
    layer = GraphAttentionLayer(CFG).double()
    x = torch.randn(1, 3, CFG.dim, dtype=torch.float64, requires_grad=True)
    adj = torch.tensor([[[0, 1, 1], [1, 0, 0], [1, 0, 0]]], dtype=torch.bool)
    weight = torch.randn(1, 3, CFG.dim, dtype=torch.float64)

    def loss():
        return (layer(x, adj) * weight).sum()

    tensors = {"x": x}
    tensors.update({n: p for n, p in layer.named_parameters()})
    fd_check(loss, tensors, coords_per_tensor=4, tol=1e-4)


# --- grounding network ------------------------------------------------------------------


def make_inputs(b=2, n=5, k=3, dtype=torch.float32, seed=7):
    torch.manual_seed(seed)
    node_feats = torch.randn(b, n, CFG.dim, dtype=dtype)
    rel_feats = torch.randn(b, k, CFG.dim, dtype=dtype)
    text = torch.randn(b, CFG.dim, dtype=dtype)
    node_mask = torch.ones(b, n, dtype=torch.bool)
    adj = torch.zeros(b, n, n, dtype=torch.bool)
    for i in range(n - 1):
        adj[:, i, i + 1] = adj[:, i + 1, i] = True
    return node_feats, node_mask, adj, text, rel_feats


def test_exactly_two_aggregations_per_forward():
    torch.manual_seed(8)
    net = GroundingNetwork(CFG)
    node_feats, node_mask, adj, text, rel_feats = make_inputs()
    before = net.gat_aggregations()
    net(node_feats, node_mask, adj, text, rel_feats=rel_feats)
    assert net.gat_aggregations() - before == 2
    net(node_feats, node_mask, adj, text)
    assert net.gat_aggregations() - before == 4


def test_single_node_graph_predicted_regardless_of_weights():
    for seed in range(3):
        torch.manual_seed(seed)
        net = GroundingNetwork(CFG)
        node_feats = torch.randn(1, 4, CFG.dim)
        node_mask = torch.tensor([[False, False, True, False]])
        adj = torch.zeros(1, 4, 4, dtype=torch.bool)
        text = torch.randn(1, CFG.dim)
        conf = net(node_feats, node_mask, adj, text)
        assert int(predict_object(conf, node_mask)) == 2


def test_confidences_finite_on_random_inputs():
    torch.manual_seed(9)
    net = GroundingNetwork(CFG)
    node_feats, node_mask, adj, text, rel_feats = make_inputs(b=4)
    node_mask[1, 3:] = False
    conf = net(node_feats, node_mask, adj, text, rel_feats=rel_feats)
    assert torch.isfinite(conf).all()


def test_network_permutation_equivariance():
    torch.manual_seed(10)
    net = GroundingNetwork(CFG)
    net.eval()
    node_feats, node_mask, adj, text, rel_feats = make_inputs(b=1)
    node_mask[0, 4] = False
    perm = torch.tensor([2, 0, 3, 1, 4])
    conf = net(node_feats, node_mask, adj, text, rel_feats=rel_feats)
    conf_p = net(
        node_feats[:, perm],
        node_mask[:, perm],
        adj[:, perm][:, :, perm],
        text,
        rel_feats=rel_feats,
    )
    assert torch.allclose(conf_p[0], conf[0, perm], atol=1e-5)


# --- grounding loss ------------------------------------------------------------------------


def test_grounding_loss_uniform_two_nodes():
    conf = torch.zeros(1, 2, dtype=torch.float64)
    node_mask = torch.ones(1, 2, dtype=torch.bool)
    target = torch.tensor([0])
    assert float(grounding_loss(conf, node_mask, target)) == pytest.approx(
        math.log(2), abs=1e-12
    )


def test_grounding_loss_confident_target_near_zero():
    conf = torch.tensor([[40.0, 0.0, 0.0]], dtype=torch.float64)
    node_mask = torch.ones(1, 3, dtype=torch.bool)
    loss = grounding_loss(conf, node_mask, torch.tensor([0]))
    assert float(loss) == pytest.approx(0.0, abs=1e-12)


def test_grounding_loss_ignores_non_members():
    conf = torch.tensor([[0.0, 0.0, 99.0]], dtype=torch.float64)
    node_mask = torch.tensor([[True, True, False]])
    loss = grounding_loss(conf, node_mask, torch.tensor([0]))
    assert float(loss) == pytest.approx(math.log(2), abs=1e-12)


def test_grounding_loss_target_outside_graph_raises():
    conf = torch.zeros(1, 3, dtype=torch.float64)
    node_mask = torch.tensor([[True, True, False]])
    with pytest.raises(ValueError, match="target not in graph"):
        grounding_loss(conf, node_mask, torch.tensor([2]))


def test_grounding_loss_gradient():
    torch.manual_seed(11)
    conf = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    node_mask = torch.tensor([[True, True, True, False], [True, True, True, True]])
    target = torch.tensor([1, 3])

    def loss():
        return grounding_loss(conf, node_mask, target)

    fd_check(loss, {"conf": conf}, coords_per_tensor=8, tol=1e-4)


def test_predict_ties_resolve_to_lowest_id():
    conf = torch.zeros(1, 4)
    node_mask = torch.tensor([[False, True, True, True]])
    assert int(predict_object(conf, node_mask)) == 1


def test_masked_confidences_shape():
    conf = torch.randn(2, 3)
    node_mask = torch.ones(2, 3, dtype=torch.bool)
    assert torch.equal(masked_confidences(conf, node_mask), conf)
