import numpy as np
import pytest

from metselect import autodiff as ad
from metselect.autodiff import Tape, finite_difference_check
from metselect.encoders import (
    EncoderConfig, GraphOperators, encode, gat_layer, gcn_layer, gin_layer, init_encoder, input_transform,
)
from metselect.graph import Graph, SbmSpec, generate_sbm, normalize_adjacency
from metselect.sparse import ShapeError, SparseCSR


def relu(x):
    return np.maximum(x, 0.0)


def path3(f=3):
    x = np.random.default_rng(0).normal(size=(3, f))
    return Graph(x, [[0, 1], [1, 2]], [0, 1, 0], 2)


def run(layer_fn, h, *consts):
    t = Tape()
    return layer_fn(t.constant(h), *[t.constant(c) if isinstance(c, np.ndarray) else c for c in consts]).value


def test_input_transform_dense_oracle():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(5, 8)), rng.normal(size=(8, 4)), rng.normal(size=4)
    t = Tape()
    out = input_transform(x, t.constant(w), t.constant(b)).value
    np.testing.assert_allclose(out, x @ w + b, atol=1e-12)
    out0 = input_transform(np.zeros((3, 8)), t.constant(w), t.constant(b)).value
    np.testing.assert_allclose(out0, np.tile(b, (3, 1)))


def test_gcn_layer_trivial_cases():
    h = np.abs(np.random.default_rng(2).normal(size=(4, 3)))
    zero = SparseCSR.from_coo(4, 4, [], [], [])
    np.testing.assert_array_equal(run(lambda h, w, b: gcn_layer(h, zero, w, b), h, np.eye(3), np.zeros(3)), 0.0)
    eye = SparseCSR.identity(4)
    np.testing.assert_allclose(run(lambda h, w, b: gcn_layer(h, eye, w, b), h, np.eye(3), np.zeros(3)), h)


def test_gcn_p3_dense_oracle():
    g = path3()
    a = normalize_adjacency(g)
    rng = np.random.default_rng(3)
    h, w, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=3)
    dense = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / np.sqrt(np.outer([1, 2, 1], [1, 2, 1]))
    got = run(lambda h, w, b: gcn_layer(h, a, w, b), h, w, b)
    np.testing.assert_allclose(got, relu(dense @ h @ w + b), atol=1e-12)
    got_final = run(lambda h, w, b: gcn_layer(h, a, w, b, final=True), h, w, b)
    np.testing.assert_allclose(got_final, dense @ h @ w + b, atol=1e-12)


def gat_oracle(h, edges_ti, w, a, slope=0.2, final=False):
    n, d = h.shape
    wh = h @ w
    out = np.zeros_like(wh)
    for i in range(n):
        nbrs = [j for (t, j) in edges_ti if t == i]
        e = np.array([a @ np.concatenate([wh[i], wh[j]]) for j in nbrs])
        e = np.where(e > 0, e, slope * e)
        alpha = np.exp(e - e.max())
        alpha /= alpha.sum()
        out[i] = sum(al * wh[j] for al, j in zip(alpha, nbrs))
    return out if final else relu(out)


def test_gat_star_per_edge_oracle():
    g = Graph(np.zeros((4, 1)), [[0, 1], [0, 2], [0, 3]], [0, 1, 1, 1], 2)
    ops = GraphOperators(g, self_loops=True)
    rng = np.random.default_rng(4)
    h, w, a = rng.normal(size=(4, 3)), rng.normal(size=(3, 3)), rng.normal(size=6)
    got = run(lambda h, w, a: gat_layer(h, ops.att_target, ops.att_source, w, a), h, w, a)
    edges = list(zip(ops.att_target.tolist(), ops.att_source.tolist()))
    np.testing.assert_allclose(got, gat_oracle(h, edges, w, a), atol=1e-12)


def test_gat_isolated_node_attends_to_itself():
    g = Graph(np.zeros((3, 1)), [[0, 1]], [0, 1, 0], 2)
    ops = GraphOperators(g, self_loops=False)
    rng = np.random.default_rng(5)
    h, w, a = rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), rng.normal(size=4)
    got = run(lambda h, w, a: gat_layer(h, ops.att_target, ops.att_source, w, a), h, w, a)
    np.testing.assert_allclose(got[2], relu(h[2] @ w), atol=1e-12)


def test_gat_symmetric_neighbours_get_equal_weight():
    target, source = np.array([0, 0]), np.array([1, 2])
    t = Tape()
    h = np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]])
    wh = h @ np.eye(2)
    scores = ad.leaky_relu(t.constant(np.array([1.0, 1.0]) * (wh[1] @ [1, -1])))
    alpha = ad.segment_softmax(scores, target, 3).value
    np.testing.assert_allclose(alpha, [0.5, 0.5])


def test_gat_bad_attention_shape():
    t = Tape()
    with pytest.raises(ShapeError):
        gat_layer(t.constant(np.ones((2, 3))), np.array([0]), np.array([1]), t.constant(np.eye(3)), t.constant(np.ones(5)))


def test_gin_triangle_identity_mlp():
    g = Graph(np.zeros((3, 1)), [[0, 1], [1, 2], [0, 2]], [0, 1, 0], 2)
    h = np.abs(np.random.default_rng(6).normal(size=(3, 2)))
    eye, zero = np.eye(2), np.zeros(2)
    for eps in (0.0, 0.3, -1.0):
        got = run(lambda h, e, w1, b1, w2, b2: gin_layer(h, g.adjacency(), e, w1, b1, w2, b2),
                  h, np.array([eps]), eye, zero, eye, zero)
        want = (1 + eps) * h + (h.sum(axis=0) - h)
        np.testing.assert_allclose(got, relu(want), atol=1e-12)


def test_gin_isolated_node_is_plain_mlp():
    g = Graph(np.zeros((2, 1)), np.empty((0, 2)), [0, 1], 2)
    rng = np.random.default_rng(7)
    h, w1, b1, w2, b2 = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=(3, 3)), rng.normal(size=3)
    got = run(lambda h, e, *p: gin_layer(h, g.adjacency(), e, *p, final=True), h, np.zeros(1), w1, b1, w2, b2)
    np.testing.assert_allclose(got, relu(h @ w1 + b1) @ w2 + b2, atol=1e-12)


def test_encode_depth2_gcn_straight_line_oracle():
    g = path3(f=4)
    cfg = EncoderConfig("gcn", depth=2, hidden=3, in_features=4)
    p = init_encoder(cfg, np.random.default_rng(8))
    stack = [s.value for s in encode(Tape(), g, g.features, cfg, p)]
    a = normalize_adjacency(g).to_dense()
    h0 = g.features @ p["input.W"] + p["input.b"]
    h1 = relu(a @ h0 @ p["layer1.W"] + p["layer1.b"])
    h2 = a @ h1 @ p["layer2.W"] + p["layer2.b"]
    for got, want in zip(stack, (h0, h1, h2)):
        np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("arch", ["gcn", "gat", "gin"])
@pytest.mark.parametrize("depth", [1, 3])
def test_stack_length_and_shapes(arch, depth):
    g = generate_sbm(SbmSpec(n=20, C=2, p_in=0.3, p_out=0.1, f=4, seed=0))
    cfg = EncoderConfig(arch, depth=depth, hidden=5, in_features=4)
    stack = encode(Tape(), g, g.features, cfg, init_encoder(cfg, np.random.default_rng(0)))
    assert len(stack) == depth + 1
    assert all(s.shape == (20, 5) for s in stack)


@pytest.mark.parametrize("arch", ["gcn", "gat", "gin"])
def test_permutation_equivariance(arch):
    g = generate_sbm(SbmSpec(n=15, C=3, p_in=0.4, p_out=0.1, f=4, seed=2))
    cfg = EncoderConfig(arch, depth=2, hidden=4, in_features=4)
    p = init_encoder(cfg, np.random.default_rng(1))
    perm = np.random.default_rng(3).permutation(15)
    gp = g.permute(perm)
    base = encode(Tape(), g, g.features, cfg, p)
    moved = encode(Tape(), gp, gp.features, cfg, p)
    # permute(perm) relabels node i as perm[i]
    for b, m in zip(base, moved):
        np.testing.assert_allclose(m.value[perm], b.value, atol=1e-10)


@pytest.mark.parametrize("arch", ["gcn", "gat", "gin"])
def test_outputs_finite_under_fuzzing(arch):
    rng = np.random.default_rng(11)
    for k in range(34):
        g = generate_sbm(SbmSpec(n=10, C=2, p_in=0.3, p_out=0.2, f=3, mu_sig=5.0, seed=k))
        cfg = EncoderConfig(arch, depth=2, hidden=4, in_features=3, self_loops=bool(k % 2))
        p = init_encoder(cfg, rng)
        assert all(np.all(np.isfinite(s.value)) for s in encode(Tape(), g, g.features * 10, cfg, p))


def test_gat_attention_rows_sum_to_one():
    g = generate_sbm(SbmSpec(n=30, C=2, p_in=0.2, p_out=0.05, f=3, seed=4))
    ops = GraphOperators(g, self_loops=False)
    e = np.random.default_rng(0).normal(size=len(ops.att_target)) * 10
    alpha = ad.segment_softmax(Tape().constant(e), ops.att_target, g.num_nodes).value
    np.testing.assert_allclose(np.bincount(ops.att_target, weights=alpha, minlength=30), 1.0, atol=1e-12)


@pytest.mark.parametrize("arch", ["gcn", "gat", "gin"])
def test_layer_gradients_match_finite_differences(tiny_graph, arch):
    cfg = EncoderConfig(arch, depth=2, hidden=4, in_features=5)
    p = init_encoder(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for k in p:  # move biases off zero so the MLP ReLUs are not all tied
        if k.endswith(("b1", "b2", ".b")):
            p[k] = rng.normal(size=p[k].shape) * 0.1

    def f(tape, vals):
        st = encode(tape, tiny_graph, tiny_graph.features, cfg, vals)
        return ad.sum_all(ad.mul(st[-1], st[-1])) + ad.sum_all(st[1])

    res = finite_difference_check(f, p)
    assert res.max_error <= 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig("sage")
    with pytest.raises(ValueError):
        EncoderConfig(depth=0)


def test_feature_shape_mismatch():
    g = path3(f=3)
    cfg = EncoderConfig(in_features=4, hidden=2)
    with pytest.raises(ShapeError):
        encode(Tape(), g, g.features, cfg, init_encoder(cfg, np.random.default_rng(0)))
