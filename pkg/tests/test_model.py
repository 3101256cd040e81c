import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardmax_classifier.initialization import InitConfig, init_mixture, init_network
from hardmax_classifier.model import (AttentionHead, EncodedSequence, FfnWeights,
                                      FinalNetWeights, MixtureState, ModelConfig,
                                      NetworkParams, classify, encode_input, encoder_batch,
                                      final_net, hardmax_attention_layer, identity_final_net,
                                      mixture_forward, mixture_forward_batch, network_forward,
                                      network_forward_batch, pointwise_ffn_layer, relu, truncate)


def _zero_heads(cfg):
    D = cfg.d_model
    return [AttentionHead(np.zeros((cfg.d_key, D)), np.zeros((cfg.d_key, D)),
                          np.zeros((cfg.I, D))) for _ in range(cfg.h)]


def _random_heads(cfg, rng):
    D = cfg.d_model
    return [AttentionHead(rng.normal(size=(cfg.d_key, D)), rng.normal(size=(cfg.d_key, D)),
                          rng.normal(size=(cfg.I, D))) for _ in range(cfg.h)]


def _random_ffn(cfg, rng):
    D = cfg.d_model
    return FfnWeights(rng.normal(size=(cfg.d_ff, D)), rng.normal(size=cfg.d_ff),
                      rng.normal(size=(D, cfg.d_ff)), rng.normal(size=D))


class TestModelConfig:
    def test_derived_widths(self):
        cfg = ModelConfig(d=2, l=4, h=2, I=10, d_key=3, d_ff=5, N=1, J=2, beta=1.0)
        assert cfg.d_model == 20
        assert cfg.d_v == 10
        assert cfg.readout == 7

    @pytest.mark.parametrize("kw", [
        {"I": 6},            # below d+l+4
        {"d_key": 2},
        {"beta": 0.0},
        {"h": 0},
        {"N": -1},
    ])
    def test_rejects_invalid(self, kw):
        base = dict(d=1, l=2, h=1, I=7, d_key=3, d_ff=2, N=1, J=2, beta=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            ModelConfig(**base)

    def test_dict_round_trip(self, small_cfg):
        assert ModelConfig.from_dict(small_cfg.to_dict()) == small_cfg


class TestEncoding:
    def test_encoding_layout(self):
        cfg = ModelConfig(d=2, l=4, h=2, I=10, d_key=3, d_ff=4, N=1, J=2, beta=1.0)
        x = np.array([[0.1, 0.2, 0.3, 0.4], [-0.5, -0.6, -0.7, -0.8]])
        z = encode_input(x, cfg).z
        expected = np.zeros((20, 4))
        expected[:2] = x
        expected[2] = 1.0
        expected[3:7] = np.eye(4)
        assert z.shape == (20, 4)
        assert np.array_equal(z, expected)
        assert np.count_nonzero(np.abs(z).sum(axis=1) == 0) == 13

    def test_smallest_config(self):
        cfg = ModelConfig(d=1, l=1, h=1, I=6, d_key=3, d_ff=1, N=0, J=1, beta=1.0)
        z = encode_input(np.zeros((1, 1)), cfg).z
        assert np.array_equal(z[:, 0], [0, 1, 1, 0, 0, 0])

    @given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_rows_past_positional_block_are_zero(self, d, l, h, seed):
        cfg = ModelConfig(d=d, l=l, h=h, I=d + l + 4, d_key=3, d_ff=1, N=0, J=1, beta=1.0)
        x = np.random.default_rng(seed).uniform(-5, 5, size=(d, l))
        z = encode_input(x, cfg).z
        assert not z[d + l + 1:].any()
        assert np.array_equal(z[:d], x)

    def test_shape_mismatch(self, small_cfg):
        with pytest.raises(ValueError):
            encode_input(np.zeros((2, 2)), small_cfg)

    def test_non_finite(self, small_cfg):
        with pytest.raises(ValueError):
            encode_input(np.array([[np.nan, 0.0]]), small_cfg)


class TestAttention:
    def test_zero_values_give_residual(self, small_cfg, rng):
        heads = _random_heads(small_cfg, rng)
        for hd in heads:
            hd.w_value[:] = 0.0
        z = EncodedSequence(rng.normal(size=(small_cfg.d_model, small_cfg.l)))
        y, _ = hardmax_attention_layer(z, heads)
        assert np.array_equal(y.z, z.z)

    def test_single_token_selects_itself(self, rng):
        cfg = ModelConfig(d=2, l=1, h=3, I=7, d_key=3, d_ff=2, N=1, J=2, beta=1.0)
        z = EncodedSequence(rng.normal(size=(cfg.d_model, 1)))
        _, jhat = hardmax_attention_layer(z, _random_heads(cfg, rng))
        assert np.array_equal(jhat, np.zeros((3, 1), dtype=int))

    def test_ties_go_to_smallest_index(self, small_cfg):
        # all-zero queries: every score ties at 0
        z = EncodedSequence(np.ones((small_cfg.d_model, small_cfg.l)))
        _, jhat = hardmax_attention_layer(z, _zero_heads(small_cfg))
        assert not jhat.any()

    def test_matches_loop_oracle(self, small_cfg, rng):
        heads = _random_heads(small_cfg, rng)
        z = rng.normal(size=(small_cfg.d_model, small_cfg.l))
        y, jhat = hardmax_attention_layer(EncodedSequence(z), heads)
        want = z.copy()
        I = small_cfg.I
        for s, hd in enumerate(heads):
            for i in range(small_cfg.l):
                q = hd.w_query @ z[:, i]
                scores = [q @ (hd.w_key @ z[:, j]) for j in range(small_cfg.l)]
                j = int(np.argmax(scores))
                assert jhat[s, i] == j
                want[s * I:(s + 1) * I, i] += (hd.w_value @ z[:, j]) * scores[j]
        np.testing.assert_allclose(y.z, want, rtol=1e-13, atol=1e-13)

    def test_deterministic(self, small_cfg, rng):
        heads = _random_heads(small_cfg, rng)
        z = EncodedSequence(rng.normal(size=(small_cfg.d_model, small_cfg.l)))
        a = hardmax_attention_layer(z, heads)
        b = hardmax_attention_layer(z, heads)
        assert np.array_equal(a[0].z, b[0].z) and np.array_equal(a[1], b[1])


class TestFfn:
    def test_zero_output_weights(self, small_cfg, rng):
        f = _random_ffn(small_cfg, rng)
        f.w2[:] = 0.0
        f.b2[:] = 0.0
        y = EncodedSequence(rng.normal(size=(small_cfg.d_model, small_cfg.l)))
        assert np.array_equal(pointwise_ffn_layer(y, f).z, y.z)

    def test_bias_only(self, small_cfg, rng):
        D = small_cfg.d_model
        e1 = np.zeros(D)
        e1[0] = 1.0
        f = FfnWeights(np.zeros((small_cfg.d_ff, D)), np.zeros(small_cfg.d_ff),
                       np.zeros((D, small_cfg.d_ff)), e1)
        y = EncodedSequence(rng.normal(size=(D, small_cfg.l)))
        assert np.array_equal(pointwise_ffn_layer(y, f).z, y.z + e1[:, None])

    @given(st.integers(0, 2**31), st.integers(0, 1))
    @settings(max_examples=40, deadline=None)
    def test_token_locality(self, seed, col):
        cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=1, J=2, beta=1.0)
        rng = np.random.default_rng(seed)
        f = _random_ffn(cfg, rng)
        y = rng.normal(size=(cfg.d_model, cfg.l))
        y2 = y.copy()
        y2[:, col] += rng.normal(size=cfg.d_model)
        a = pointwise_ffn_layer(EncodedSequence(y), f).z
        b = pointwise_ffn_layer(EncodedSequence(y2), f).z
        other = 1 - col
        assert np.array_equal(a[:, other], b[:, other])

    def test_shape_mismatch(self, small_cfg, rng):
        f = _random_ffn(small_cfg, rng)
        with pytest.raises(ValueError):
            pointwise_ffn_layer(EncodedSequence(np.zeros((5, 2))), f)


class TestTruncate:
    @pytest.mark.parametrize("v,beta,want", [(3, 2, 2), (-5, 1, -1), (0.4, 2, 0.4)])
    def test_examples(self, v, beta, want):
        assert truncate(v, beta) == want

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            truncate(1.0, -1.0)

    def test_two_relu_identity(self):
        # dyadic grid: every intermediate sum is exactly representable
        rng = np.random.default_rng(7)
        v = rng.integers(-2**20, 2**20, size=1000) / 2**10
        beta = rng.integers(0, 2**12, size=1000) / 2**10
        net = relu(2 * beta - relu(-v + beta)) - beta
        for a, b, c in zip(v, beta, net):
            assert truncate(float(a), float(b)) == c

    @given(st.floats(-1e6, 1e6), st.floats(0.0, 1e3))
    def test_two_relu_identity_general_floats(self, v, beta):
        net = max(2 * beta - max(-v + beta, 0.0), 0.0) - beta
        assert abs(truncate(v, beta) - net) <= 4 * np.spacing(max(abs(v), beta, 1.0))


class TestFinalNet:
    def test_zero_output_weights(self):
        fw = FinalNetWeights(np.zeros(3), np.ones(3), np.ones(3))
        assert final_net(2.5, fw) == 0.0

    def test_single_neuron_negative(self):
        fw = FinalNetWeights(np.ones(1), np.ones(1), np.zeros(1))
        assert final_net(-3.0, fw) == 0.0

    @given(st.floats(-1e6, 1e6))
    def test_identity_net(self, u):
        assert final_net(u, identity_final_net(4)) == u


class TestNetworkForward:
    def test_zero_weights(self, small_cfg, rng):
        theta = NetworkParams.zeros(small_cfg)
        assert network_forward(rng.normal(size=(1, 2)), theta, small_cfg) == 0.0

    def test_residual_identity(self, small_cfg, rng):
        theta, _ = init_network(small_cfg, InitConfig(tau=3, seed=5))
        for L in theta.layers:
            L.wv[:] = 0.0
            L.w2[:] = 0.0
            L.b2[:] = 0.0
        X = rng.uniform(-1, 1, size=(20, 1, 2))
        from hardmax_classifier.model import encode_batch
        assert np.array_equal(encoder_batch(X, theta, small_cfg), encode_batch(X, small_cfg))

    def test_batch_matches_single(self, small_cfg, rng):
        theta, _ = init_network(small_cfg, InitConfig(tau=3, seed=2))
        X = rng.uniform(-1, 1, size=(8, 1, 2))
        batch = network_forward_batch(X, theta, small_cfg)
        single = [network_forward(x, theta, small_cfg) for x in X]
        np.testing.assert_allclose(batch, single, rtol=1e-13, atol=1e-15)

    def test_layer_count_checked(self, small_cfg):
        theta = NetworkParams.zeros(small_cfg.with_(N=1))
        with pytest.raises(ValueError):
            network_forward(np.zeros((1, 2)), theta, small_cfg)


class TestMixture:
    def _setup(self, cfg):
        _, thetas, _ = init_mixture(cfg, InitConfig(tau=3, c4=3.0, seed=11))
        return thetas

    def test_zero_weights(self, small_cfg):
        thetas = self._setup(small_cfg)
        assert mixture_forward(np.zeros((1, 2)), MixtureState(np.zeros(3)), thetas, small_cfg) == 0

    def test_unit_vector(self, small_cfg, rng):
        thetas = self._setup(small_cfg)
        x = rng.uniform(-1, 1, size=(1, 2))
        got = mixture_forward(x, MixtureState(np.array([1.0, 0, 0])), thetas, small_cfg)
        assert got == truncate(network_forward(x, thetas[0], small_cfg), small_cfg.beta)

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_bounded(self, raw, seed):
        cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=2, J=4, beta=2.0, K=3)
        w = np.array(raw)
        if w.sum() > 1:
            w = w / w.sum()
        thetas = self._setup(cfg)
        X = np.random.default_rng(seed).uniform(-1, 1, size=(10, 1, 2))
        f = mixture_forward_batch(X, MixtureState(w), thetas, cfg)
        assert np.all(np.abs(f) <= w.sum() * cfg.beta + 1e-12)

    def test_length_mismatch(self, small_cfg):
        thetas = self._setup(small_cfg)
        with pytest.raises(ValueError):
            mixture_forward(np.zeros((1, 2)), MixtureState(np.zeros(2)), thetas, small_cfg)

    def test_state_invariants(self):
        with pytest.raises(ValueError):
            MixtureState(np.array([-0.1, 0.5]))
        with pytest.raises(ValueError):
            MixtureState(np.array([0.7, 0.5]))


class TestClassify:
    @pytest.mark.parametrize("f,label", [(0.3, 1), (-0.3, -1), (0.0, 1)])
    def test_examples(self, f, label):
        assert classify(f) == label

    def test_array(self):
        assert np.array_equal(classify(np.array([-1.0, 0.0, 2.0])), [-1, 1, 1])
