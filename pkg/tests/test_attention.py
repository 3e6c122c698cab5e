"""Grad-CAM, normalization, resampling, and mask codec against naive oracles."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradia.attention import (
    AttentionMap,
    BinaryMask,
    binarize,
    binarize_grid,
    decode_mask_rle,
    encode_mask_rle,
    grad_cam,
    grad_cam_tensor,
    mask_to_target_grid,
    normalize,
    normalize_tensor,
    upsample,
)
from gradia.errors import InputError
from gradia.model import ConvSpec, ModelConfig, forward, grad_wrt_features, init_model

SMALL = ModelConfig(
    input_height=8,
    input_width=8,
    conv_stack=(
        ConvSpec(out_maps=3, kernel=3, stride=1, padding=1, pool="max2"),
        ConvSpec(out_maps=4, kernel=3, stride=1, padding=1, pool="none"),
    ),
)


def naive_grad_cam(trace, class_index):
    """Triple-loop reference: per-map mean gradient weights, weighted sum, ReLU."""
    grads = grad_wrt_features(trace, class_index).detach().numpy()
    maps = trace.feature_maps.detach().numpy()
    k_count, u, v = maps.shape
    out = np.zeros((u, v))
    for i in range(u):
        for j in range(v):
            acc = 0.0
            for k in range(k_count):
                weight = 0.0
                for a in range(u):
                    for b in range(v):
                        weight += grads[k, a, b]
                weight /= u * v
                acc += weight * maps[k, i, j]
            out[i, j] = max(0.0, acc)
    return out


class TestGradCam:
    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            params = init_model(SMALL, seed=trial)
            trace = forward(params, rng.random((8, 8)))
            for c in range(2):
                got = grad_cam(trace, c)
                want = naive_grad_cam(trace, c)
                assert np.abs(got - want).max() <= 1e-10

    def test_rectification_clamps_negative_cells(self):
        rng = np.random.default_rng(1)
        params = init_model(SMALL, seed=3)
        trace = forward(params, rng.random((8, 8)))
        assert grad_cam(trace, 0).min() >= 0.0

    def test_higher_order_keeps_graph(self):
        params = init_model(SMALL, seed=5)
        trace = forward(params, np.random.default_rng(2).random((8, 8)))
        raw = grad_cam_tensor(trace, 0, higher_order=True)
        assert raw.requires_grad
        (g,) = torch.autograd.grad(raw.sum(), params.head_weight, allow_unused=True)
        assert g is not None

    def test_stop_gradient_mode_detaches_weights(self):
        params = init_model(SMALL, seed=5)
        trace = forward(params, np.random.default_rng(2).random((8, 8)))
        raw = grad_cam_tensor(trace, 0, higher_order=False)
        # the map still depends on the feature maps, which depend on params,
        # but the per-map weights must not carry second-order structure
        (g,) = torch.autograd.grad(raw.sum(), trace.feature_maps, retain_graph=True)
        assert g.shape == trace.feature_maps.shape


class TestNormalize:
    def test_unit_range(self):
        rng = np.random.default_rng(3)
        raw = rng.random((5, 7)) * 4 - 1
        out = normalize(raw)
        assert out.normalized
        assert out.grid.min() == 0.0
        assert out.grid.max() == 1.0

    def test_constant_map_becomes_zeros(self):
        out = normalize(np.full((4, 4), 2.5))
        assert (out.grid == 0.0).all()

    def test_known_values(self):
        out = normalize(np.array([[0.0, 1.0], [3.0, 4.0]]))
        assert np.allclose(out.grid, [[0.0, 0.25], [0.75, 1.0]])

    def test_rejects_non_2d(self):
        with pytest.raises(InputError):
            normalize(np.zeros(4))

    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            normalize(np.array([[np.nan, 0.0], [0.0, 0.0]]))

    def test_tensor_variant_matches(self):
        rng = np.random.default_rng(4)
        raw = rng.random((2, 5, 5))
        got = normalize_tensor(torch.as_tensor(raw)).numpy()
        for b in range(2):
            want = normalize(raw[b]).grid
            assert np.abs(got[b] - want).max() <= 1e-12

    def test_tensor_variant_constant_slice(self):
        raw = torch.ones((2, 3, 3), dtype=torch.float64)
        raw[1, 0, 0] = 2.0
        got = normalize_tensor(raw).numpy()
        assert (got[0] == 0.0).all()
        assert got[1].max() == 1.0


def naive_bilinear(grid, height, width):
    """Standard half-pixel-center bilinear resampling with edge clamping."""
    in_h, in_w = grid.shape
    out = np.zeros((height, width))
    for oy in range(height):
        sy = (oy + 0.5) * in_h / height - 0.5
        y0 = int(np.floor(sy))
        ty = sy - y0
        y0c = min(max(y0, 0), in_h - 1)
        y1c = min(max(y0 + 1, 0), in_h - 1)
        for ox in range(width):
            sx = (ox + 0.5) * in_w / width - 0.5
            x0 = int(np.floor(sx))
            tx = sx - x0
            x0c = min(max(x0, 0), in_w - 1)
            x1c = min(max(x0 + 1, 0), in_w - 1)
            top = grid[y0c, x0c] * (1 - tx) + grid[y0c, x1c] * tx
            bottom = grid[y1c, x0c] * (1 - tx) + grid[y1c, x1c] * tx
            out[oy, ox] = top * (1 - ty) + bottom * ty
    return out


class TestUpsample:
    def test_matches_naive_bilinear(self):
        rng = np.random.default_rng(5)
        for in_dims, out_dims in [((4, 4), (8, 8)), ((3, 5), (9, 10)), ((6, 6), (4, 4))]:
            grid = rng.random(in_dims)
            grid = (grid - grid.min()) / (grid.max() - grid.min())
            att = AttentionMap(grid=grid, normalized=True, class_index=0)
            got = upsample(att, *out_dims)
            want = naive_bilinear(grid, *out_dims)
            assert np.abs(got - want).max() <= 1e-12

    def test_requires_normalized(self):
        att = AttentionMap(grid=np.ones((4, 4)), normalized=False, class_index=0)
        with pytest.raises(InputError):
            upsample(att, 8, 8)

    def test_rejects_degenerate_dims(self):
        att = AttentionMap(grid=np.ones((4, 4)), normalized=True, class_index=0)
        with pytest.raises(InputError):
            upsample(att, 0, 8)

    def test_identity_when_same_size(self):
        rng = np.random.default_rng(6)
        grid = rng.random((5, 5))
        grid[0, 0], grid[-1, -1] = 0.0, 1.0
        att = AttentionMap(grid=grid, normalized=True, class_index=0)
        assert np.abs(upsample(att, 5, 5) - grid).max() <= 1e-12


class TestBinarize:
    def test_threshold_semantics(self):
        att = AttentionMap(
            grid=np.array([[0.0, 0.5], [0.49, 1.0]]), normalized=True, class_index=0
        )
        mask = binarize(att, 0.5)
        assert mask.grid.tolist() == [[False, True], [False, True]]
        assert mask.provenance == "binarized-attention"

    def test_threshold_out_of_range(self):
        att = AttentionMap(grid=np.zeros((2, 2)), normalized=True, class_index=0)
        with pytest.raises(InputError):
            binarize(att, 1.5)

    def test_grid_variant(self):
        grid = np.array([[0.2, 0.8]])
        assert binarize_grid(grid, 0.5).tolist() == [[False, True]]


def naive_target_grid(mask, u, v):
    """Per-cell covered-area fraction via explicit pixel-overlap loops."""
    h, w = mask.shape
    out = np.zeros((u, v))
    for r in range(u):
        for c in range(v):
            acc = 0
            for i in range(h):
                row_overlap = min((r + 1) * h, (i + 1) * u) - max(r * h, i * u)
                if row_overlap <= 0:
                    continue
                for j in range(w):
                    col_overlap = min((c + 1) * w, (j + 1) * v) - max(c * w, j * v)
                    if col_overlap > 0 and mask[i, j]:
                        acc += row_overlap * col_overlap
            out[r, c] = acc / (h * w)
    return out


class TestTargetGrid:
    def test_matches_naive_area_fractions(self):
        rng = np.random.default_rng(7)
        for h, w, u, v in [(8, 8, 4, 4), (10, 6, 3, 4), (7, 7, 2, 2), (5, 9, 5, 3)]:
            mask = BinaryMask(grid=rng.random((h, w)) > 0.6, provenance="oracle")
            got = mask_to_target_grid(mask, u, v).grid
            want = naive_target_grid(mask.grid, u, v)
            assert np.abs(got - want).max() <= 1e-12

    def test_full_mask_gives_ones(self):
        mask = BinaryMask(grid=np.ones((8, 8), dtype=bool), provenance="oracle")
        assert np.allclose(mask_to_target_grid(mask, 4, 4).grid, 1.0)

    def test_empty_mask_gives_zeros(self):
        mask = BinaryMask(grid=np.zeros((8, 8), dtype=bool), provenance="oracle")
        assert (mask_to_target_grid(mask, 4, 4).grid == 0.0).all()

    def test_provenance_carried(self):
        mask = BinaryMask(grid=np.ones((4, 4), dtype=bool), provenance="human")
        assert mask_to_target_grid(mask, 2, 2).source_provenance == "human"


class TestMaskRle:
    def test_known_encoding(self):
        grid = np.array([[False, True], [True, False]])
        assert encode_mask_rle(grid) == [2, 2, 1, 2, 1]

    def test_leading_true_gets_zero_first_run(self):
        grid = np.array([[True, False]])
        assert encode_mask_rle(grid) == [2, 1, 0, 1, 1]

    def test_all_false(self):
        grid = np.zeros((3, 2), dtype=bool)
        assert encode_mask_rle(grid) == [2, 3, 6]

    @settings(max_examples=200, deadline=None)
    @given(
        h=st.integers(1, 12),
        w=st.integers(1, 12),
        bits=st.data(),
    )
    def test_round_trip(self, h, w, bits):
        flat = bits.draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
        grid = np.array(flat, dtype=bool).reshape(h, w)
        encoded = encode_mask_rle(grid)
        assert encoded[0] == w and encoded[1] == h
        runs = encoded[2:]
        assert all(r > 0 for r in runs[1:])
        assert sum(runs) == w * h
        decoded = decode_mask_rle(encoded)
        assert (decoded == grid).all()

    def test_decode_rejects_short_input(self):
        with pytest.raises(InputError):
            decode_mask_rle([2, 2])

    def test_decode_rejects_bad_sum(self):
        with pytest.raises(InputError):
            decode_mask_rle([2, 2, 3])

    def test_decode_rejects_zero_interior_run(self):
        with pytest.raises(InputError):
            decode_mask_rle([2, 2, 1, 0, 3])

    def test_decode_rejects_negative_run(self):
        with pytest.raises(InputError):
            decode_mask_rle([2, 2, -1, 5])

    def test_decode_accepts_binary_mask_wrapper(self):
        mask = BinaryMask(grid=np.eye(3, dtype=bool), provenance="human")
        assert (decode_mask_rle(encode_mask_rle(mask)) == mask.grid).all()
