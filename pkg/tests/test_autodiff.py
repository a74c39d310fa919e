import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import disc_mask, l_shape, smooth_level_set
from ielseg import autodiff as ad
from ielseg.curvemotion import CurveMotionConfig
from ielseg.diffusion import DiffusionConfig, fel_array, iel_array
from ielseg.field import LabelMask
from ielseg.oracles import central_difference, dirichlet_energy_loops

EPS = 1e-6


def project(node, r):
    """Scalar sum(node * r) so any op can be checked through backward()."""
    return ad.Node(np.asarray(float((node.value * r).sum())), (node,), lambda g: (g * r,))


def fd_check(build, inputs, tol=1e-6, seed=0):
    """Compare backward() with central differences for every input entry."""
    rng = np.random.default_rng(seed)
    leaves = [ad.tensor(x, requires_grad=True) for x in inputs]
    out = build(*leaves)
    r = rng.standard_normal(out.shape)
    ad.backward(project(out, r))
    worst = 0.0
    for leaf, x in zip(leaves, inputs):
        for idx in np.ndindex(x.shape):
            def fn():
                return float((build(*[ad.tensor(v) for v in inputs]).value * r).sum())
            num = central_difference(fn, x, idx, EPS)
            a = leaf.grad[idx]
            worst = max(worst, abs(a - num) / max(1.0, abs(num)))
    assert worst <= tol, worst


def test_backward_requires_scalar():
    x = ad.tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.op_scale(x, 2.0))


def test_diamond_graph_accumulates_and_visits_once():
    x = ad.tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.op_add(ad.op_scale(x, 3.0), ad.op_scale(x, -1.0))
    loss = project(y, np.ones(2))
    nodes = ad.graph_nodes(loss)
    assert len(nodes) == len({id(n) for n in nodes}) == 5
    ad.backward(loss)
    assert np.allclose(x.grad, [2.0, 2.0])


def test_op_add_shape_mismatch():
    with pytest.raises(ValueError):
        ad.op_add(ad.tensor(np.ones(2)), ad.tensor(np.ones(3)))


def test_relu_and_maxpool_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 6))
    x[np.abs(x) < 0.05] = 0.3  # keep entries away from the kink
    fd_check(ad.op_relu, [x])
    fd_check(ad.op_maxpool2, [rng.permutation(48 * 2).reshape(2, 3, 4, 4) * 0.01])
    with pytest.raises(ValueError):
        ad.op_maxpool2(ad.tensor(np.ones((1, 1, 3, 4))))


def test_maxpool_ties_go_to_first_entry():
    x = ad.tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ad.backward(project(ad.op_maxpool2(x), np.ones((1, 1, 1, 1))))
    assert x.grad[0, 0].tolist() == [[1, 0], [0, 0]]


def test_upsample_concat_gradients():
    rng = np.random.default_rng(2)
    fd_check(ad.op_upsample_nearest2, [rng.standard_normal((1, 2, 3, 2))])
    fd_check(ad.op_concat_channels, [rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 2, 3, 3))])
    with pytest.raises(ValueError):
        ad.op_concat_channels(ad.tensor(np.ones((1, 1, 2, 2))), ad.tensor(np.ones((1, 1, 3, 2))))


def test_conv3x3_gradients():
    rng = np.random.default_rng(3)
    fd_check(ad.op_conv3x3, [rng.standard_normal((2, 2, 4, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)])


def test_conv3x3_replicate_padding_value():
    # averaging kernel on a ramp: edge outputs see the repeated border value
    x = np.arange(4.0).reshape(1, 1, 1, 4)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1] = 1 / 3
    y = ad.op_conv3x3(ad.tensor(x), ad.tensor(k), ad.tensor(np.zeros(1))).value[0, 0, 0]
    assert np.allclose(y, [1 / 3, 1.0, 2.0, 8 / 3])


def test_conv3x3_errors():
    x = ad.tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        ad.op_conv3x3(x, ad.tensor(np.ones((1, 3, 3, 3))), ad.tensor(np.zeros(1)))
    with pytest.raises(ValueError):
        ad.op_conv3x3(x, ad.tensor(np.ones((1, 2, 3, 3))), ad.tensor(np.zeros(2)))


def test_heat_layers_match_operator_and_gradient():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 5, 4))
    cfg = DiffusionConfig(0.1, 3)
    assert np.array_equal(ad.op_iel_heat(ad.tensor(x), cfg).value, iel_array(x, 0.1, 3))
    assert np.array_equal(ad.op_fel_heat(ad.tensor(x), cfg).value, fel_array(x, 0.1, 3))
    fd_check(lambda t: ad.op_iel_heat(t, cfg), [x])
    fd_check(lambda t: ad.op_fel_heat(t, cfg), [x])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_grad_mag_vjp(rows, cols, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((rows, cols))
    g = rng.standard_normal((rows, cols))

    def fn():
        p = np.pad(u, 1, mode="edge")
        return float((g * np.hypot(p[2:, 1:-1] - p[:-2, 1:-1], p[1:-1, 2:] - p[1:-1, :-2]) / 2).sum())

    vjp = ad.grad_mag_vjp(u, g)
    for idx in np.ndindex(u.shape):
        assert vjp[idx] == pytest.approx(central_difference(fn, u, idx, EPS), abs=1e-5)


def test_curve_iel_identity_on_convex_input():
    score = np.where(disc_mask(24, 6.0) > 0, 1.0, -1.0)
    x = np.stack([np.zeros_like(score), score])[None]
    out = ad.op_curve_iel(ad.tensor(x), CurveMotionConfig(0.1, 3, 1, (2, 3)))
    assert np.array_equal(out.value, x)


def test_curve_iel_gradient_with_fixed_speed():
    f, _ = l_shape(size=20, thick=6, margin=3)
    s = smooth_level_set(f)
    rng = np.random.default_rng(5)
    bg = 0.1 * rng.standard_normal(s.shape)
    x = np.stack([bg, bg + s])[None]
    cfg = CurveMotionConfig(0.1, 2, 1, (2, 3))
    out = ad.op_curve_iel(ad.tensor(x), cfg)
    assert not np.array_equal(out.value, x)
    assert np.array_equal(out.value[0, 0], x[0, 0])
    # perturbations of 1e-6 never cross a speed-map or zero-gradient boundary here
    base = ad.kink_signature(out)
    for idx in [(0, 1, 5, 5), (0, 0, 5, 5), (0, 1, 10, 9)]:
        for sgn in (1, -1):
            y = x.copy()
            y[idx] += sgn * EPS
            assert ad.kink_signature(ad.op_curve_iel(ad.tensor(y), cfg)) == base
    fd_check(lambda t: ad.op_curve_iel(t, cfg), [x], tol=1e-5)


def test_softmax_cross_entropy_values():
    x = ad.tensor(np.zeros((1, 3, 2, 2)))
    loss = ad.softmax_cross_entropy(x, np.zeros((1, 2, 2), dtype=int))
    assert float(loss.value) == pytest.approx(math.log(3))
    big = np.zeros((1, 2, 1, 1))
    big[0, 1] = 50.0
    assert float(ad.softmax_cross_entropy(ad.tensor(big), np.ones((1, 1, 1), int)).value) == pytest.approx(0, abs=1e-12)
    m = LabelMask(np.array([[0, 1]]), 2)
    assert float(ad.softmax_cross_entropy(ad.tensor(np.zeros((1, 2, 1, 2))), m).value) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(x, np.full((1, 2, 2), 3))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(x, np.zeros((1, 3, 2), int))


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    t = rng.integers(0, 3, size=(2, 3, 2))
    fd_check(lambda z: ad.op_scale(ad.softmax_cross_entropy(z, t), 1.0), [rng.standard_normal((2, 3, 3, 2))])


def test_grad_penalty_matches_energy_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 2, 4, 5))
    expected = 0.5 * sum(dirichlet_energy_loops(x[b]) for b in range(2)) / 2
    assert float(ad.grad_penalty_term(ad.tensor(x), 0.5).value) == pytest.approx(expected)
    fd_check(lambda z: ad.grad_penalty_term(z, 0.5), [x])


def test_weight_decay():
    a, b = np.array([1.0, -2.0]), np.array([[3.0]])
    term = ad.weight_decay_term([ad.tensor(a), ad.tensor(b)], 0.1)
    assert float(term.value) == pytest.approx(1.4)
    fd_check(lambda p, q: ad.weight_decay_term([p, q], 0.1), [a, b])


def test_loss_variants():
    assert ad.LossVariant.plain().describe() == "plain"
    v = ad.LossVariant.iel_heat()
    assert (v.diffusion.dt, v.diffusion.n_layers) == (0.1, 10)
    assert ad.LossVariant("fel_heat").diffusion == DiffusionConfig()
    assert ad.LossVariant.curve_iel().curve.radii == (5, 10, 15)
    assert ad.LossVariant.grad_penalty().lam == 1.0
    assert ad.LossVariant.weight_decay().lam == 0.1
    with pytest.raises(ValueError):
        ad.LossVariant("adam")
    with pytest.raises(ValueError):
        ad.LossVariant("weight_decay", lam=-1)


def test_kink_signature_tracks_relu_masks():
    x = np.array([[[[0.5, -0.5]]]])
    s1 = ad.kink_signature(ad.op_relu(ad.tensor(x)))
    s2 = ad.kink_signature(ad.op_relu(ad.tensor(-x)))
    assert s1 != s2
    assert ad.kink_signature(ad.op_scale(ad.tensor(x), 2)) == b""
