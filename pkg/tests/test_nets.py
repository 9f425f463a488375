import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotgan import nets
from cotgan import tensor as tt
from cotgan.causal import CausalConvNet
from cotgan.tensor import Tape, Tensor

seeds = st.integers(0, 10_000)


def sig(a):
    return 1 / (1 + np.exp(-a))


def lstm_loop(p, z, H):
    m, T, _ = z.shape
    h, c = np.zeros((m, H)), np.zeros((m, H))
    out = []
    for t in range(T):
        a = z[:, t] @ p["wx"] + h @ p["wh"] + p["b"]
        i, f, o = sig(a[:, :H]), sig(a[:, H:2 * H]), sig(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(np.maximum(h @ p["u1"] + p["c1"], 0) @ p["u2"] + p["c2"])
    return np.stack(out, axis=1)


def small_gen(head="linear"):
    return nets.Generator(nets.LatentSpec(step_dim=2, static_dim=1, T=5), d=2, state=3, fc=4, head=head)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_generator_matches_loop(seed):
    rng = np.random.default_rng(seed)
    gen = small_gen()
    p = gen.init(rng)
    z = nets.sample_latent(gen.latent, 4, rng)
    np.testing.assert_allclose(nets.generator_forward(gen, p, z).numpy(), lstm_loop(p, z, 3), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(0, 4))
def test_generator_is_adapted_to_latents(seed, s):
    rng = np.random.default_rng(seed)
    gen = small_gen("sigmoid")
    p = gen.init(rng)
    z = nets.sample_latent(gen.latent, 3, rng)
    z2 = z.copy()
    z2[:, s:, :] += 1.0
    a, b = gen.forward(p, z).numpy(), gen.forward(p, z2).numpy()
    np.testing.assert_array_equal(a[:, :s], b[:, :s])


def test_latent_layout():
    spec = nets.LatentSpec(step_dim=3, static_dim=2, T=6)
    z = nets.sample_latent(spec, 4, np.random.default_rng(0))
    assert z.shape == (4, 6, 5)
    np.testing.assert_array_equal(z[:, :, 3:], np.repeat(z[:, :1, 3:], 6, axis=1))
    assert not np.allclose(z[:, 0, :3], z[:, 1, :3])


def test_latent_spec_rejects_zero():
    with pytest.raises(ValueError):
        nets.LatentSpec(step_dim=0)


def test_generator_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    gen = small_gen("tanh")
    p = gen.init(rng)
    z = nets.sample_latent(gen.latent, 2, rng)

    def f(wh):
        return tt.square(gen.forward({**p, "wh": wh}, z)).sum()

    tape = Tape()
    w = tape.watch(p["wh"])
    (g,) = tape.gradient(f(w), [w])
    fd = tt.numeric_grad(lambda v: f(Tensor(v)).item(), p["wh"])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_clip_weights_bounds_every_entry():
    p = {"a": np.array([-1.0, 0.005, 2.0])}
    np.testing.assert_array_equal(nets.clip_weights(p)["a"], [-0.01, 0.005, 0.01])
    with pytest.raises(ValueError):
        nets.clip_weights(p, clip=0)


def test_identity_feature_net_is_the_identity():
    net = CausalConvNet(d=3, out=3, hidden=8, kernel=4)
    x = np.random.default_rng(0).normal(size=(5, 6, 3))
    out = net.forward(nets.identity_feature_params(net), x).numpy()
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_feature_cost_with_identity_is_base_cost():
    net = CausalConvNet(d=2, out=2, hidden=4, kernel=2)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    C = nets.feature_cost(net, nets.identity_feature_params(net), x, y).numpy()
    base = ((x.reshape(3, 1, -1) - y.reshape(1, 3, -1)) ** 2).sum(-1)
    np.testing.assert_allclose(C, base, atol=1e-12)


def test_clipped_forward_uses_clipped_weights():
    net = CausalConvNet(d=1, out=1, hidden=2, kernel=1)
    p = {k: np.ones(s) for k, s in net.param_shapes().items()}
    out = nets.feature_net_forward_clipped(net, p, np.ones((1, 2, 1))).numpy()
    # relu(0.01 + 0.01) summed over two hidden units, times 0.01, plus 0.01
    np.testing.assert_allclose(out, 0.01 * 0.02 * 2 + 0.01)


def test_parameter_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    params = {"gen": small_gen().init(rng), "phi": {"h": {"w1": rng.normal(size=(3, 2))}}}
    nets.save_params(tmp_path, params, {"iteration": 7})
    back, extra = nets.load_params(tmp_path)
    assert extra == {"iteration": 7}
    flat_a, flat_b = dict(nets.flatten_params(params)), dict(nets.flatten_params(back))
    assert flat_a.keys() == flat_b.keys()
    for k in flat_a:
        assert flat_a[k].tobytes() == flat_b[k].tobytes()


def test_load_params_detects_shape_tampering(tmp_path):
    nets.save_params(tmp_path, {"w": np.ones((2, 2))})
    m = (tmp_path / "manifest.json").read_text().replace("[\n        2,\n        2\n      ]", "[4]")
    (tmp_path / "manifest.json").write_text(m)
    with pytest.raises(ValueError):
        nets.load_params(tmp_path)


def test_zero_generator_outputs_zero():
    gen = small_gen()
    p = {k: np.zeros(s) for k, s in gen.param_shapes().items()}
    z = nets.sample_latent(gen.latent, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(gen.forward(p, z).numpy(), 0.0)


def test_latent_is_reproducible_and_centred():
    spec = nets.LatentSpec(step_dim=2, static_dim=2, T=5)
    a = nets.sample_latent(spec, 20_000, np.random.default_rng(4))
    np.testing.assert_array_equal(a, nets.sample_latent(spec, 20_000, np.random.default_rng(4)))
    # static coordinates are one draw per sequence, step coordinates one per (sequence, step)
    n_step, n_static = 20_000 * 5, 20_000
    assert np.all(np.abs(a[..., :2].mean(axis=(0, 1))) < 3 / np.sqrt(n_step))
    assert np.all(np.abs(a[:, 0, 2:].mean(axis=0)) < 3 / np.sqrt(n_static))


@pytest.mark.parametrize("head, lo, hi", [("sigmoid", 0, 1), ("tanh", -1, 1)])
def test_generator_head_range(head, lo, hi):
    gen = small_gen(head)
    p = {k: 20 * v for k, v in gen.init(np.random.default_rng(0)).items()}
    y = gen.forward(p, nets.sample_latent(gen.latent, 8, np.random.default_rng(1))).numpy()
    assert y.min() >= lo and y.max() <= hi


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(1e-3, 1.0))
def test_clip_is_idempotent_and_bounded(seed, clip):
    p = {"w": np.random.default_rng(seed).normal(size=(4, 3))}
    once = nets.clip_weights(p, clip)
    assert np.abs(once["w"]).max() <= clip
    np.testing.assert_array_equal(nets.clip_weights(once, clip)["w"], once["w"])
