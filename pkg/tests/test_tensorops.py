"""Tensor substrate: matmul, masked softmax, neighborhood extraction."""

import numpy as np
import pytest

from localattn.errors import DegenerateGroupError, DimensionError, UnsupportedExtentError
from localattn.reference import matmul_reference
from localattn.tensorops import (
    extract_neighborhood,
    matmul,
    softmax_axis,
    window_validity,
)


class TestMatmul:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(1, 6))))
            b = rng.standard_normal((a.shape[1], int(rng.integers(1, 6))))
            np.testing.assert_allclose(matmul(a, b), matmul_reference(a, b),
                                       rtol=0, atol=1e-12)

    def test_associativity_within_tolerance(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b, c = (rng.standard_normal((4, 5)), rng.standard_normal((5, 3)),
                       rng.standard_normal((3, 6)))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.max(np.abs(left - right) / (np.abs(left) + 1e-12)) < 1e-9

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"2, 3"):
            matmul(np.zeros((2, 3)), np.zeros((4, 5)))


class TestSoftmaxAxis:
    def test_uniform_logits_give_uniform_weights(self):
        np.testing.assert_allclose(softmax_axis(np.zeros(3), -1),
                                   np.full(3, 1.0 / 3.0), atol=1e-15)

    def test_stable_under_large_logits(self):
        out = softmax_axis(np.array([1000.0, 0.0]), -1)
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_masked_two_way_closed_form(self):
        out = softmax_axis(np.array([1.0, 2.0, 3.0]), -1,
                           np.array([True, False, True]))
        e2 = np.e ** 2
        np.testing.assert_allclose(out, [1 / (1 + e2), 0.0, e2 / (1 + e2)],
                                   atol=1e-12)

    def test_masked_slots_exactly_zero(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((4, 6))
        mask = rng.random((4, 6)) < 0.6
        mask[:, 0] = True
        out = softmax_axis(logits, -1, mask)
        assert np.all(out[~mask] == 0.0)
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)
        assert np.all(out >= 0.0)

    def test_invariant_to_constant_shift(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((3, 5)) * 10
        base = softmax_axis(logits, -1)
        shifted = softmax_axis(logits + 123.456, -1)
        assert np.max(np.abs(base - shifted)) < 1e-9

    def test_axis_argument_applies_along_that_axis(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 5))
        np.testing.assert_allclose(softmax_axis(x, 1).sum(axis=1), 1.0, atol=1e-6)

    def test_all_masked_group_raises(self):
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(DegenerateGroupError):
            softmax_axis(np.zeros((2, 2)), -1, mask)


class TestExtractNeighborhood:
    def test_interior_window_fully_valid(self):
        x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
        window, idx = extract_neighborhood(x, 2, 2, 3)
        np.testing.assert_array_equal(window[0, 0], x[0, 0, 1:4, 1:4])
        assert idx.valid_mask.all()

    def test_corner_has_four_valid_slots(self):
        x = np.zeros((1, 1, 6, 7))
        _, idx = extract_neighborhood(x, 0, 0, 3)
        assert int(idx.valid_mask.sum()) == 4

    def test_out_of_image_slots_are_zero(self):
        x = np.ones((1, 2, 4, 4))
        window, idx = extract_neighborhood(x, 0, 0, 3)
        flat = window.reshape(1, 2, -1)
        assert np.all(flat[:, :, ~idx.valid_mask] == 0.0)

    def test_every_window_matches_direct_gather(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 2, 6, 6))
        k = 5
        for i in range(6):
            for j in range(6):
                window, idx = extract_neighborhood(x, i, j, k)
                for u in range(k):
                    for v in range(k):
                        r, c = i - k // 2 + u, j - k // 2 + v
                        inside = 0 <= r < 6 and 0 <= c < 6
                        want = x[:, :, r, c] if inside else 0.0
                        np.testing.assert_array_equal(window[:, :, u, v], want)
                        assert bool(idx.valid_mask[u * k + v]) == inside

    def test_valid_count_matches_geometry(self):
        x = np.zeros((1, 1, 5, 6))
        for k in (3, 5):
            half = k // 2
            for i in range(5):
                for j in range(6):
                    _, idx = extract_neighborhood(x, i, j, k)
                    rows = min(i + half, 4) - max(i - half, 0) + 1
                    cols = min(j + half, 5) - max(j - half, 0) + 1
                    assert int(idx.valid_mask.sum()) == rows * cols

    def test_even_extent_rejected(self):
        with pytest.raises(UnsupportedExtentError):
            extract_neighborhood(np.zeros((1, 1, 4, 4)), 1, 1, 2)

    def test_offsets_are_row_major_relative_positions(self):
        _, idx = extract_neighborhood(np.zeros((1, 1, 5, 5)), 2, 2, 3)
        assert idx.offsets[0] == (-1, -1)
        assert idx.offsets[-1] == (1, 1)
        assert len(idx.offsets) == 9


class TestWindowValidity:
    def test_matches_per_pixel_extraction(self):
        x = np.zeros((1, 1, 4, 5))
        table = window_validity(4, 5, 3)
        for i in range(4):
            for j in range(5):
                _, idx = extract_neighborhood(x, i, j, 3)
                np.testing.assert_array_equal(table[i, j], idx.valid_mask)
