import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfuse import autodiff as ad
from quadfuse.autodiff import Tensor
from quadfuse.config import GcnConfig, ViTConfig, preset
from quadfuse.gcn import GcnParams, QuadGraph, build_adjacency, gcn_forward, mean_pool, split_quadrants
from quadfuse.nn import ModelParams
from quadfuse.rng import Rng
from quadfuse.vit import ViT, patchify


# ---------------------------------------------------------------- ViT

def test_patchify_hand_example():
    img = Tensor(np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4))
    p = patchify(img, 2)
    assert p.shape == (4, 4)
    assert p.data[0].tolist() == [1, 2, 5, 6]
    assert p.data[3].tolist() == [11, 12, 15, 16]


def test_patchify_whole_image():
    img = Tensor(Rng(0).uniform(size=(3, 8, 8)))
    np.testing.assert_array_equal(patchify(img, 8).data[0], img.data.ravel())


def test_patchify_paper_shape():
    assert patchify(Tensor(np.zeros((3, 224, 224))), 16).shape == (196, 768)


def test_patchify_bad_size():
    with pytest.raises(ad.ShapeError):
        patchify(Tensor(np.zeros((1, 10, 10))), 4)


@pytest.mark.parametrize("name, grid, n_patches", [("desk", 8, 64), ("paper", 14, 196)])
def test_preset_geometry(name, grid, n_patches):
    v = preset(name).vit
    assert (v.grid, v.n_patches) == (grid, n_patches)


def test_vit_desk_shapes():
    cfg = preset("desk").vit
    vit = ViT(ModelParams(), cfg, Rng(0))
    out = vit(Tensor(Rng(1).uniform(size=(3, 64, 64))))
    assert out.f_image.shape == (64,)
    assert len(out.attn_by_layer) == 4
    assert all(a.shape == (4, 65, 65) for a in out.attn_by_layer)


def test_vit_batch_and_determinism():
    cfg = ViTConfig(image_size=16, patch_size=4, embed_dim=16, n_layers=2, n_heads=2, mlp_dim=32, dropout=0.1)
    vit = ViT(ModelParams(), cfg, Rng(0))
    x = Rng(2).uniform(size=(3, 3, 16, 16))
    a = vit(Tensor(x), Rng(5), training=True).f_image.data
    b = vit(Tensor(x), Rng(5), training=True).f_image.data
    assert a.shape == (3, 16)
    np.testing.assert_array_equal(a, b)
    single = vit(Tensor(x[2])).f_image.data
    np.testing.assert_allclose(vit(Tensor(x)).f_image.data[2], single, atol=1e-5)


def test_vit_rejects_wrong_image():
    vit = ViT(ModelParams(), preset("desk").vit, Rng(0))
    with pytest.raises(ad.ShapeError):
        vit(Tensor(np.zeros((3, 32, 32))))


@pytest.mark.slow
def test_vit_paper_shapes():
    vit = ViT(ModelParams(), preset("paper").vit, Rng(0))
    out = vit(Tensor(np.full((3, 224, 224), 0.5)))
    assert out.f_image.shape == (768,)
    assert out.attn_by_layer[0].shape == (12, 197, 197)


# ---------------------------------------------------------------- quadrants

def test_split_constant_image():
    q = split_quadrants(Tensor(np.full((2, 8, 8), 0.3)))
    assert q.shape == (4, 2, 8, 8)
    np.testing.assert_allclose(q.data, 0.3, atol=1e-6)


def test_split_corner_blocks():
    img = np.zeros((1, 4, 4), dtype=np.float32)
    img[0, :2, :2], img[0, :2, 2:], img[0, 2:, :2], img[0, 2:, 2:] = 1, 2, 3, 4
    q = split_quadrants(Tensor(img)).data
    for i in range(4):
        np.testing.assert_allclose(q[i], i + 1, atol=1e-6)


def test_split_paper_size():
    assert split_quadrants(Tensor(np.zeros((3, 224, 224)))).shape == (4, 3, 224, 224)


def test_split_batched():
    x = Rng(0).uniform(size=(2, 1, 6, 6))
    q = split_quadrants(Tensor(x)).data
    assert q.shape == (2, 4, 1, 6, 6)
    np.testing.assert_allclose(q[1], split_quadrants(Tensor(x[1])).data, atol=1e-7)


# ---------------------------------------------------------------- graph

@pytest.mark.parametrize("n, value", [(1, 1.0), (2, 0.5), (4, 0.25)])
def test_adjacency_constant(n, value):
    a = build_adjacency(n).data
    assert a.shape == (n, n)
    assert np.all(a == np.float32(value))


def _gcn(d_in, hidden, seed=0, p=0.2):
    return GcnParams(ModelParams(), d_in, hidden, Rng(seed), p)


def test_gcn_identity_input():
    g = _gcn(4, 4)
    g.W0.data = np.eye(4, dtype=np.float32)
    a = build_adjacency(4)
    h1 = ad.relu(ad.matmul(a, ad.matmul(Tensor(np.eye(4)), g.W0)))
    np.testing.assert_allclose(h1.data, 0.25)


def test_gcn_identical_rows_stay_identical():
    x = np.tile(Rng(1).normal(size=(1, 6)), (4, 1))
    h = gcn_forward(QuadGraph(Tensor(x), build_adjacency(4)), _gcn(6, 5)).data
    np.testing.assert_allclose(h, np.tile(h[:1], (4, 1)), atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_gcn_matches_loop_oracle(seed):
    x = Rng(seed).normal(size=(4, 5)).astype(np.float32)
    p = _gcn(5, 3, seed)
    a = build_adjacency(4).data.astype(np.float64)
    w0, w1 = p.W0.data.astype(np.float64), p.W1.data.astype(np.float64)

    def mm(A, B):
        return [[sum(A[i][k] * B[k][j] for k in range(len(B))) for j in range(len(B[0]))] for i in range(len(A))]

    h1 = np.maximum(np.array(mm(a, mm(x.astype(np.float64), w0))), 0)
    h2 = np.maximum(np.array(mm(a, mm(h1, w1))), 0)
    out = gcn_forward(QuadGraph(Tensor(x), build_adjacency(4)), p).data
    assert np.abs(out - h2).max() < 1e-5


def test_gcn_dropout_only_when_training():
    x = Tensor(Rng(0).normal(size=(4, 6)))
    g = QuadGraph(x, build_adjacency(4))
    p = _gcn(6, 64, p=0.5)
    eval_out = gcn_forward(g, p, Rng(1), training=False).data
    np.testing.assert_array_equal(eval_out, gcn_forward(g, p, None, training=False).data)
    train_out = gcn_forward(g, p, Rng(1), training=True).data
    assert not np.array_equal(eval_out, train_out)


def test_gcn_shape_error():
    with pytest.raises(ad.ShapeError, match="gcn"):
        gcn_forward(QuadGraph(Tensor(np.zeros((4, 3))), build_adjacency(4)), _gcn(5, 2))


def test_mean_pool_examples():
    v = Rng(0).normal(size=(1, 5))
    np.testing.assert_allclose(mean_pool(Tensor(np.tile(v, (4, 1)))).data, v[0], atol=1e-6)
    np.testing.assert_allclose(mean_pool(Tensor(np.eye(4))).data, [0.25] * 4)


@pytest.mark.parametrize("name, hidden", [("paper", 256), ("desk", 64)])
def test_mean_pool_preset_width(name, hidden):
    h = preset(name).gcn.hidden
    assert h == hidden
    assert mean_pool(Tensor(np.ones((4, h)))).shape == (hidden,)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.permutations(range(4)))
def test_mean_pool_permutation_bitwise(seed, perm):
    h = Rng(seed).normal(0, 10, (4, 32)).astype(np.float32)
    a = mean_pool(Tensor(h)).data
    b = mean_pool(Tensor(h[list(perm)])).data
    assert a.tobytes() == b.tobytes()
