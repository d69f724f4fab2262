import numpy as np
import pytest
import torch

from naryground.config import ModelConfig
from naryground.data import encode_tokens, tensorize_records
from naryground.encoders import (
    BoxEmbedding,
    FeatureFusion,
    ObjectClassifier,
    PairwiseGeometry,
    TextEncoder,
    ToyObjectEncoder,
    pairwise_descriptor,
    scene_box_tensor,
    scene_noise,
)
from naryground.scenes import Box3

from gradcheck import fd_check


@pytest.fixture
def cfg():
    return ModelConfig(dim=16, heads=2, k1=4, k2=4, dim_2d=8, dropout=0.0)


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


# --- Eq. 1 fusion ---------------------------------------------------------------


def test_fusion_residual_identity_with_zero_maps(cfg):
    fusion = FeatureFusion(cfg)
    zero_(fusion.mlp)
    f2d = torch.randn(3, 5, cfg.dim_2d)
    f3d = torch.randn(3, 5, cfg.dim)
    assert torch.equal(fusion(f2d, f3d), f3d)


def test_fusion_zero_2d_reduces_to_mlp_plus_residual(cfg):
    torch.manual_seed(0)
    fusion = FeatureFusion(cfg)
    with torch.no_grad():
        fusion.phi.bias.zero_()
    f3d = torch.randn(2, 4, cfg.dim)
    f2d = torch.zeros(2, 4, cfg.dim_2d)
    want = fusion.mlp(f3d) + f3d
    assert torch.allclose(fusion(f2d, f3d), want, atol=1e-6)


def test_fusion_gradient_matches_finite_differences(cfg):
    torch.manual_seed(1)
    fusion = FeatureFusion(cfg).double()
    f2d = torch.randn(1, 3, cfg.dim_2d, dtype=torch.float64)
    f3d = torch.randn(1, 3, cfg.dim, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(1, 3, cfg.dim, dtype=torch.float64)

    def loss():
        return (fusion(f2d, f3d) * weight).sum()

    tensors = {"f3d": f3d}
    tensors.update({n: p for n, p in fusion.named_parameters()})
    fd_check(loss, tensors, tol=1e-4)


# --- toy object features ----------------------------------------------------------


def test_toy_features_deterministic_rows(cfg, records30):
    torch.manual_seed(0)
    enc = ToyObjectEncoder(cfg, 6)
    cat = torch.tensor([[1, 1]])
    box = torch.tensor([[[0.0, 0, 0.5, 1, 1, 1], [0.0, 0, 0.5, 1, 1, 1]]])
    noise = torch.zeros(1, 2, cfg.dim)  # sigma = 0
    f2d, f3d = enc(cat, box, noise)
    assert torch.equal(f3d[0, 0], f3d[0, 1])
    assert torch.equal(f2d[0, 0], f2d[0, 1])


def test_toy_features_distinct_categories_differ(cfg):
    torch.manual_seed(0)
    enc = ToyObjectEncoder(cfg, 6)
    cat = torch.tensor([[0, 3]])
    box = torch.zeros(1, 2, 6)
    noise = torch.zeros(1, 2, cfg.dim)
    _, f3d = enc(cat, box, noise)
    assert not torch.allclose(f3d[0, 0], f3d[0, 1])


def test_scene_noise_reproducible(records30, cfg):
    scene = records30[0].scene
    a = scene_noise(scene, cfg.dim, 0.1)
    b = scene_noise(scene, cfg.dim, 0.1)
    assert np.array_equal(a, b)
    assert scene_noise(scene, cfg.dim, 0.0).sum() == 0.0


# --- box embedding -----------------------------------------------------------------


def test_box_embedding_zero_map(cfg):
    emb = BoxEmbedding(cfg)
    zero_(emb)
    out = emb(torch.zeros(4, 6))
    assert torch.equal(out, torch.zeros(4, cfg.dim))


def test_box_embedding_linearity(cfg):
    torch.manual_seed(2)
    emb = BoxEmbedding(cfg)
    a = torch.randn(6)
    b = torch.randn(6)
    bias = emb.proj.bias.detach()
    lhs = emb(a + b)
    rhs = emb(a) + emb(b) - bias
    assert torch.allclose(lhs, rhs, atol=1e-5)


def test_box_embedding_gradient(cfg):
    torch.manual_seed(3)
    emb = BoxEmbedding(cfg).double()
    box = torch.randn(2, 6, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(2, cfg.dim, dtype=torch.float64)

    def loss():
        return (emb(box) * weight).sum()

    fd_check(loss, {"box": box, **dict(emb.named_parameters())}, tol=1e-4)


# --- pairwise geometry ----------------------------------------------------------------


def test_descriptor_diagonal_zero_and_bias(cfg):
    torch.manual_seed(4)
    box6 = torch.tensor(
        [[[0.0, 0, 0.5, 1, 1, 1], [3.0, 4, 0.5, 2, 1, 1]]]
    )
    raw = pairwise_descriptor(box6)
    assert torch.equal(raw[0, 0, 0], torch.zeros(6))
    assert torch.equal(raw[0, 1, 1], torch.zeros(6))
    geo = PairwiseGeometry(cfg)
    out = geo(box6)
    assert torch.allclose(out[0, 0, 0], geo.proj.bias)


def test_descriptor_antisymmetric_offset():
    box6 = torch.randn(5, 6).abs() + 0.1
    raw = pairwise_descriptor(box6)
    delta = raw[..., :3]
    assert torch.allclose(delta, -delta.transpose(0, 1), atol=1e-6)


def test_descriptor_345_distance():
    box6 = torch.tensor([[0.0, 0, 0, 1, 1, 1], [3.0, 4, 0, 1, 1, 1]])
    raw = pairwise_descriptor(box6)
    assert float(raw[0, 1, 3]) == 5.0


def test_descriptor_log_volume_and_gap():
    box6 = torch.tensor(
        [[0.0, 0, 0.5, 1, 1, 1], [0.0, 0, 2.0, 2, 1, 1]]  # second above first
    )
    raw = pairwise_descriptor(box6)
    assert float(raw[0, 1, 4]) == pytest.approx(-np.log(2))  # log(v0 / v1)
    assert float(raw[1, 0, 4]) == pytest.approx(np.log(2))
    # vertical gap from 0's top (1.0) to 1's bottom (1.5)
    assert float(raw[0, 1, 5]) == pytest.approx(0.5)
    assert float(raw[1, 0, 5]) == pytest.approx(-0.5)


def test_geometry_gradient(cfg):
    torch.manual_seed(5)
    geo = PairwiseGeometry(cfg).double()
    box6 = (torch.randn(1, 3, 6, dtype=torch.float64).abs() + 0.3).requires_grad_(True)
    weight = torch.randn(1, 3, 3, cfg.dim, dtype=torch.float64)

    def loss():
        return (geo(box6) * weight).sum()

    fd_check(loss, {"box6": box6, **dict(geo.named_parameters())}, tol=1e-4)


# --- text encoder -----------------------------------------------------------------------


def make_text_encoder(cfg, vocab=("chair", "closest", "table", "the", "to")):
    torch.manual_seed(6)
    return TextEncoder(cfg, len(vocab) + 2, 6), vocab


def test_same_text_same_feature(cfg):
    enc, vocab = make_text_encoder(cfg)
    enc.eval()
    tokens, mask = encode_tokens(["the chair closest to the table"] * 2, vocab, 32)
    pooled, logits = enc(tokens, mask)
    assert torch.equal(pooled[0], pooled[1])
    assert torch.equal(logits[0], logits[1])
    assert logits.shape == (2, 6)


def test_token_permutation_changes_feature(cfg):
    enc, vocab = make_text_encoder(cfg)
    enc.eval()
    tokens, mask = encode_tokens(
        ["the chair closest to the table", "the table closest to the chair"], vocab, 32
    )
    pooled, _ = enc(tokens, mask)
    assert not torch.allclose(pooled[0], pooled[1])


def test_empty_text_raises(cfg):
    with pytest.raises(ValueError, match="empty text"):
        encode_tokens([""], ("chair",), 32)
    with pytest.raises(ValueError, match="empty text"):
        encode_tokens(["   .,! "], ("chair",), 32)


def test_unknown_tokens_map_to_unk(cfg):
    tokens, mask = encode_tokens(["zork chair"], ("chair",), 32)
    assert tokens[0, 0] == 1  # UNK
    assert tokens[0, 1] == 2  # first vocab entry
    assert mask.all()


def test_text_encoder_gradient(cfg):
    enc, vocab = make_text_encoder(cfg)
    enc = enc.double()
    enc.eval()
    tokens, mask = encode_tokens(["the chair closest to the table"], vocab, 32)
    weight = torch.randn(1, cfg.dim, dtype=torch.float64)

    def loss():
        pooled, logits = enc(tokens, mask)
        return (pooled * weight).sum() + logits.square().sum()

    params = {n: p for n, p in enc.named_parameters()}
    fd_check(loss, params, coords_per_tensor=3, tol=1e-4)


# --- object classifier ---------------------------------------------------------------------


def test_classifier_zero_weights_uniform(cfg):
    clf = ObjectClassifier(cfg, 6)
    zero_(clf)
    logits = clf(torch.randn(2, 5, cfg.dim))
    assert logits.shape == (2, 5, 6)
    assert torch.equal(logits, torch.zeros(2, 5, 6))


def test_classifier_gradient(cfg):
    torch.manual_seed(7)
    clf = ObjectClassifier(cfg, 6).double()
    feats = torch.randn(2, 3, cfg.dim, dtype=torch.float64, requires_grad=True)
    target = torch.tensor([[0, 2, 4], [1, 3, 5]])

    def loss():
        return torch.nn.functional.cross_entropy(
            clf(feats).reshape(-1, 6), target.reshape(-1)
        )

    fd_check(loss, {"feats": feats, **dict(clf.named_parameters())}, tol=1e-4)


# --- finiteness across generated scenes --------------------------------------------------------


def test_all_encoder_outputs_finite(records30, category_vocab, token_vocab, tiny_model_cfg):
    torch.manual_seed(8)
    tensors = tensorize_records(records30, category_vocab, token_vocab, tiny_model_cfg)
    toy = ToyObjectEncoder(tiny_model_cfg, len(category_vocab))
    fusion = FeatureFusion(tiny_model_cfg)
    geo = PairwiseGeometry(tiny_model_cfg)
    box_emb = BoxEmbedding(tiny_model_cfg)
    text = TextEncoder(tiny_model_cfg, len(token_vocab) + 2, len(category_vocab))
    f2d, f3d = toy(tensors["cat_idx"], tensors["box"], tensors["noise"])
    objects = fusion(f2d, f3d)
    pooled, logits = text(tensors["tokens"], tensors["token_mask"])
    for out in (objects, geo(tensors["box"]), box_emb(tensors["box"]), pooled, logits):
        assert torch.isfinite(out).all()
