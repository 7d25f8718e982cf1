"""Layer forward semantics: convolution, local attention, stem, pools, norm."""

import numpy as np
import pytest

from localattn import reference as ref
from localattn.errors import (
    ConfigurationError,
    DimensionError,
    PaddingError,
    UnsupportedExtentError,
)
from localattn.layers import (
    AttentionStem,
    AvgPool2x2,
    BatchNorm2d,
    Conv2d,
    LocalAttention,
    MaxPool,
    absolute_position_signal,
    relative_embedding_lookup,
    stem_mixture_weights,
)

MODES = ("none", "absolute", "relative", "relative_only")


def _attn(mode, k=3, heads=2, d_in=4, d_out=8, seed=0):
    return LocalAttention(d_in, d_out, k=k, heads=heads, encoding_mode=mode,
                          rng=np.random.default_rng(seed), dtype=np.float64)


class TestConv2d:
    def test_identity_1x1_kernel_reproduces_input(self):
        layer = Conv2d(3, 3, 1, rng=np.random.default_rng(0), dtype=np.float64)
        layer.weight[0, 0] = np.eye(3)
        x = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
        y, _ = layer.forward(x)
        np.testing.assert_array_equal(y, x)

    def test_all_ones_3x3_kernel_sums_interior_to_9c(self):
        layer = Conv2d(1, 1, 3, rng=np.random.default_rng(0), dtype=np.float64)
        layer.weight[:] = 1.0
        c = 0.7
        y, _ = layer.forward(np.full((1, 1, 5, 5), c))
        np.testing.assert_allclose(y[0, 0, 2, 2], 9 * c, atol=1e-12)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        layer = Conv2d(2, 3, 3, rng=rng, dtype=np.float64)
        x = rng.standard_normal((1, 2, 5, 5))
        y, _ = layer.forward(x)
        np.testing.assert_allclose(y, ref.conv2d_reference(x, layer.weight),
                                   atol=1e-10)

    def test_strided_output_is_ceil_h_over_s(self):
        layer = Conv2d(2, 2, 3, stride=2, rng=np.random.default_rng(3),
                       dtype=np.float64)
        y, _ = layer.forward(np.zeros((1, 2, 7, 6)))
        assert y.shape == (1, 2, 4, 3)

    def test_strided_matches_oracle(self):
        rng = np.random.default_rng(4)
        layer = Conv2d(3, 4, 5, stride=2, rng=rng, dtype=np.float64)
        x = rng.standard_normal((2, 3, 9, 8))
        y, _ = layer.forward(x)
        np.testing.assert_allclose(y, ref.conv2d_reference(x, layer.weight, 2),
                                   atol=1e-10)

    def test_channel_mismatch_raises(self):
        layer = Conv2d(3, 2, 3, rng=np.random.default_rng(5))
        with pytest.raises(DimensionError):
            layer.forward(np.zeros((1, 4, 5, 5)))


class TestLocalAttention:
    def test_k1_mode_none_is_value_transform(self):
        layer = _attn("none", k=1, heads=2, d_in=4, d_out=4)
        x = np.random.default_rng(6).standard_normal((2, 4, 3, 3))
        y, _ = layer.forward(x)
        want = np.einsum("oi,nihw->nohw", layer.W_V, x)
        np.testing.assert_allclose(y, want, atol=1e-12)

    def test_constant_input_interior_equals_value_transform(self):
        layer = _attn("none", k=3, heads=2, d_in=4, d_out=4)
        x = np.ones((1, 4, 5, 5)) * 0.3
        y, _ = layer.forward(x)
        want = np.einsum("oi,nihw->nohw", layer.W_V, x)
        np.testing.assert_allclose(y[:, :, 2, 2], want[:, :, 2, 2], atol=1e-10)

    @pytest.mark.parametrize("mode", MODES)
    def test_matches_per_pixel_oracle(self, mode):
        rng = np.random.default_rng(7)
        layer = _attn(mode, k=3, heads=2, d_in=4, d_out=8, seed=8)
        x = rng.standard_normal((1, 4, 5, 5))
        y, _ = layer.forward(x)
        want = ref.local_attention_reference(
            x, layer.W_Q, None if mode == "relative_only" else layer.W_K,
            layer.W_V, getattr(layer, "row_emb", None),
            getattr(layer, "col_emb", None), k=3, heads=2, mode=mode)
        np.testing.assert_allclose(y, want, atol=1e-8)

    def test_relative_only_allocates_no_key_transform(self):
        layer = _attn("relative_only")
        assert "W_K" not in layer.params
        assert {"W_Q", "W_V", "row_emb", "col_emb"} <= set(layer.params)

    def test_attention_weights_are_convex_at_borders(self):
        layer = _attn("relative", k=5, heads=2, d_in=4, d_out=8)
        x = np.random.default_rng(9).standard_normal((2, 4, 6, 6))
        _, ctx = layer.forward(x)
        attn = ctx[4]
        np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-6)
        assert np.all(attn >= 0.0)

    def test_neighborhood_permutation_leaves_output_unchanged(self):
        layer = _attn("none", k=3, heads=2, d_in=4, d_out=4)
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 4, 6, 6))
        i = j = 3
        members = [(i - 1 + u, j - 1 + v) for u in range(3) for v in range(3)
                   if (u, v) != (1, 1)]
        x_perm = x.copy()
        order = rng.permutation(len(members))
        for dst, src in enumerate(order):
            x_perm[:, :, members[dst][0], members[dst][1]] = \
                x[:, :, members[src][0], members[src][1]]
        y1, _ = layer.forward(x)
        y2, _ = layer.forward(x_perm)
        assert np.max(np.abs(y1[:, :, i, j] - y2[:, :, i, j])) < 1e-9

    def test_relative_mode_translation_equivariant_in_interior(self):
        layer = _attn("relative", k=3, heads=2, d_in=4, d_out=8)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((1, 4, 10, 10))
        s, half = 2, 1
        y1, _ = layer.forward(x[:, :, :-s, :-s])
        y2, _ = layer.forward(x[:, :, s:, s:])
        lo, hi = s + half, 10 - s - half
        assert np.max(np.abs(y1[:, :, lo:hi, lo:hi]
                             - y2[:, :, lo - s:hi - s, lo - s:hi - s])) < 1e-9

    def test_zero_embedding_tables_reduce_to_content_only(self):
        rel = _attn("relative", seed=12)
        rel.row_emb[:] = 0.0
        rel.col_emb[:] = 0.0
        none = _attn("none", seed=13)
        none.W_Q[:] = rel.W_Q
        none.W_K[:] = rel.W_K
        none.W_V[:] = rel.W_V
        x = np.random.default_rng(14).standard_normal((2, 4, 5, 6))
        y1, _ = rel.forward(x)
        y2, _ = none.forward(x)
        assert np.max(np.abs(y1 - y2)) < 1e-12

    def test_full_extent_window_equals_global_attention(self):
        h, w = 4, 5
        layer = _attn("none", k=2 * max(h, w) - 1, heads=2, d_in=4, d_out=8)
        x = np.random.default_rng(15).standard_normal((2, 4, h, w))
        y, _ = layer.forward(x)
        want = ref.global_attention_reference(x, layer.W_Q, layer.W_K,
                                              layer.W_V, heads=2)
        assert np.max(np.abs(y - want)) < 1e-8

    def test_even_extent_rejected(self):
        with pytest.raises(UnsupportedExtentError):
            _attn("none", k=4)

    def test_odd_head_dim_rejected_for_relative_modes(self):
        with pytest.raises(ConfigurationError):
            _attn("relative", d_in=6, d_out=6, heads=2)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigurationError):
            _attn("none", d_in=5, d_out=8, heads=2)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            _attn("sinusoid")

    def test_absolute_mode_adds_signal_before_transforms(self):
        layer = _attn("absolute", k=3, heads=2, d_in=4, d_out=4, seed=16)
        plain = _attn("none", k=3, heads=2, d_in=4, d_out=4, seed=17)
        for name in ("W_Q", "W_K", "W_V"):
            plain.params[name][:] = layer.params[name]
        x = np.random.default_rng(18).standard_normal((1, 4, 5, 5))
        signal = absolute_position_signal(4, 5, 5)
        y1, _ = layer.forward(x)
        y2, _ = plain.forward(x + signal[None])
        np.testing.assert_allclose(y1, y2, atol=1e-12)


class TestAbsolutePositionSignal:
    def test_row_and_column_halves_factorize(self):
        d, h, w = 8, 6, 7
        signal = absolute_position_signal(d, h, w)
        assert signal.shape == (d, h, w)
        # first half varies only with row index, second half only with column
        assert np.max(np.abs(signal[: d // 2] - signal[: d // 2, :, :1])) == 0.0
        assert np.max(np.abs(signal[d // 2:] - signal[d // 2:, :1, :])) == 0.0

    def test_matches_per_element_reference(self):
        signal = absolute_position_signal(8, 5, 4)
        want = ref.absolute_position_signal_reference(8, 5, 4)
        np.testing.assert_allclose(signal, want, atol=1e-12)

    def test_odd_channel_count_rejected(self):
        with pytest.raises(ConfigurationError):
            absolute_position_signal(5, 4, 4)


class TestRelativeEmbeddingLookup:
    def test_center_offsets_concatenate_center_rows(self):
        layer = _attn("relative", k=3)
        got = relative_embedding_lookup(layer, 0, 0)
        want = np.concatenate([layer.row_emb[2], layer.col_emb[2]])
        np.testing.assert_array_equal(got, want)

    def test_negative_and_positive_offsets_index_around_center(self):
        layer = _attn("relative", k=3)
        got = relative_embedding_lookup(layer, -1, 1)
        # tables hold 2k−1 rows indexed by offset + (k−1)
        want = np.concatenate([layer.row_emb[-1 + 2], layer.col_emb[1 + 2]])
        np.testing.assert_array_equal(got, want)

    def test_exhaustive_k5_lookup_matches_direct_indexing(self):
        layer = _attn("relative", k=5, d_in=4, d_out=8)
        seen = set()
        for row_off in range(-4, 5):
            for col_off in range(-4, 5):
                got = relative_embedding_lookup(layer, row_off, col_off)
                want = np.concatenate([layer.row_emb[row_off + 4],
                                       layer.col_emb[col_off + 4]])
                np.testing.assert_array_equal(got, want)
                seen.add(got.tobytes())
        assert len(seen) == 81

    def test_out_of_range_offset_raises(self):
        layer = _attn("relative", k=3)
        with pytest.raises(IndexError):
            relative_embedding_lookup(layer, 3, 0)


def _stem(seed=0, **kwargs):
    return AttentionStem(3, kwargs.pop("d_out", 8),
                         rng=np.random.default_rng(seed), dtype=np.float64,
                         **kwargs)


class TestAttentionStem:
    def test_matches_compositional_oracle(self):
        rng = np.random.default_rng(20)
        stem = _stem(21)
        stem.norm.running_mean = rng.standard_normal(8)
        stem.norm.running_var = rng.uniform(0.5, 2.0, 8)
        x = rng.standard_normal((1, 3, 8, 8))
        y, _ = stem.forward(x, training=False)
        want = ref.stem_attention_reference(
            x, stem.W_Q, stem.W_K, stem.W_V, stem.emb_row, stem.emb_col,
            stem.nu, heads=stem.heads, gamma=stem.norm.gamma,
            beta=stem.norm.beta, running_mean=stem.norm.running_mean,
            running_var=stem.norm.running_var, epsilon=stem.norm.epsilon)
        np.testing.assert_allclose(y, want, atol=1e-8)

    def test_singleton_mixture_collapses_to_plain_values(self):
        stem = _stem(22, mixtures=1)
        np.testing.assert_allclose(stem.mixture_weights(), 1.0, atol=1e-12)

    def test_equal_mixture_logits_give_uniform_weights(self):
        stem = _stem(23, mixtures=4)
        stem.nu[:] = stem.nu[0]
        np.testing.assert_allclose(stem.mixture_weights(), 0.25, atol=1e-12)

    def test_mixture_weights_match_direct_formula(self):
        stem = _stem(24, mixtures=4)
        p = stem.mixture_weights()
        for a in range(4):
            for b in range(4):
                want = ref.stem_mixture_weights_reference(
                    stem.emb_row, stem.emb_col, stem.nu, a, b)
                np.testing.assert_allclose(p[a, b], want, atol=1e-10)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)

    def test_constant_image_pools_to_batchnormed_constant(self):
        stem = _stem(25)
        x = np.full((1, 3, 8, 8), 0.4)
        y, _ = stem.forward(x, training=False)
        # uniform attention over identical values makes each block constant,
        # so the pooled value equals the normalized constant per channel
        flat = y.reshape(8, -1)
        assert np.max(np.abs(flat - flat[:, :1])) < 1e-10

    def test_output_is_quarter_resolution(self):
        stem = _stem(26)
        y, _ = stem.forward(np.zeros((2, 3, 16, 12)))
        assert y.shape == (2, 8, 4, 3)

    def test_indivisible_input_raises_padding_error(self):
        with pytest.raises(PaddingError):
            _stem(27).forward(np.zeros((1, 3, 10, 8)))

    def test_window_position_accessor_bounds(self):
        stem = _stem(28)
        p = stem_mixture_weights(stem, 0, 3)
        assert p.shape == (4,)
        with pytest.raises(IndexError):
            stem_mixture_weights(stem, 4, 0)


class TestPools:
    def test_max_pool_constant_image(self):
        y, _ = MaxPool(3, 2).forward(np.full((1, 2, 6, 6), 1.5))
        np.testing.assert_array_equal(y, np.full((1, 2, 3, 3), 1.5))

    def test_avg_pool_2x2_arithmetic(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y, _ = AvgPool2x2().forward(x)
        np.testing.assert_allclose(y, [[[[2.5]]]], atol=1e-12)

    def test_max_pool_matches_naive_oracle(self):
        x = np.random.default_rng(30).standard_normal((2, 3, 6, 6))
        y, _ = MaxPool(3, 2).forward(x)
        np.testing.assert_allclose(y, ref.max_pool_reference(x, 3, 2), atol=0)

    def test_avg_pool_borders_average_valid_elements_only(self):
        x = np.random.default_rng(31).standard_normal((1, 1, 3, 3))
        y, _ = AvgPool2x2().forward(x)
        np.testing.assert_allclose(y, ref.avg_pool_2x2_reference(x), atol=1e-12)
        np.testing.assert_allclose(y[0, 0, 1, 1], x[0, 0, 2, 2], atol=1e-12)

    def test_max_pool_padding_never_wins(self):
        x = np.full((1, 1, 5, 5), -7.0)
        y, _ = MaxPool(3, 2).forward(x)
        np.testing.assert_array_equal(y, np.full((1, 1, 3, 3), -7.0))


class TestBatchNorm:
    def test_standardized_input_passes_through(self):
        rng = np.random.default_rng(32)
        x = rng.standard_normal((64, 3, 4, 4))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        bn = BatchNorm2d(3, dtype=np.float64)
        y, _ = bn.forward(x, training=True)
        np.testing.assert_allclose(y, x, atol=1e-4)

    def test_zero_gamma_collapses_to_beta(self):
        bn = BatchNorm2d(2, dtype=np.float64)
        bn.gamma[:] = 0.0
        bn.beta[:] = 5.0
        y, _ = bn.forward(np.random.default_rng(33).standard_normal((4, 2, 3, 3)),
                          training=True)
        np.testing.assert_allclose(y, 5.0, atol=1e-12)

    def test_training_statistics_standardize_batch(self):
        rng = np.random.default_rng(34)
        x = rng.standard_normal((16, 3, 5, 5)) * 4.0 - 2.0
        y, _ = BatchNorm2d(3, dtype=np.float64).forward(x, training=True)
        assert np.max(np.abs(y.mean(axis=(0, 2, 3)))) < 1e-6
        assert np.max(np.abs(y.var(axis=(0, 2, 3)) - 1.0)) < 1e-4

    def test_running_statistics_update_with_decay(self):
        bn = BatchNorm2d(2, decay=0.9, dtype=np.float64)
        x = np.random.default_rng(35).standard_normal((8, 2, 3, 3)) + 3.0
        bn.forward(x, training=True)
        batch_mean = x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(bn.running_mean, 0.1 * batch_mean, atol=1e-10)
        assert np.all(bn.running_var >= 0.0)

    def test_inference_uses_running_statistics(self):
        bn = BatchNorm2d(2, dtype=np.float64)
        bn.running_mean[:] = 1.0
        bn.running_var[:] = 4.0
        x = np.full((1, 2, 2, 2), 3.0)
        y, _ = bn.forward(x, training=False)
        np.testing.assert_allclose(y, (3.0 - 1.0) / np.sqrt(4.0 + bn.epsilon),
                                   atol=1e-9)

    def test_zero_variance_channel_finite_via_epsilon(self):
        bn = BatchNorm2d(1, dtype=np.float64)
        y, _ = bn.forward(np.full((4, 1, 2, 2), 2.0), training=True)
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, 0.0, atol=1e-9)
