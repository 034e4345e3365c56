"""Backbone checks: zero-init head, determinism, equivariance, gradients."""

import numpy as np
import pytest

from jetflow import numerics as nm
from jetflow.errors import ConfigError
from jetflow.numerics import Tensor
from jetflow.oracles import finite_difference_grad, relative_error
from jetflow.vit import ViTConfig, init_vit, vit_forward

from helpers import randomize_head


def _config(depth=1, width=16, heads=2, tokens=8, in_width=3, out_width=6):
    return ViTConfig(depth, width, heads, tokens, in_width, out_width)


class TestInit:
    @pytest.mark.parametrize("depth,width,heads", [(0, 8, 2), (1, 16, 2), (2, 64, 4)])
    def test_fresh_backbone_outputs_zero(self, depth, width, heads):
        cfg = _config(depth=depth, width=width, heads=heads)
        params = init_vit(cfg, seed=1)
        rng = np.random.default_rng(0)
        tokens = Tensor(rng.standard_normal((cfg.tokens, cfg.in_width)).astype(np.float32))
        out = vit_forward(params, tokens)
        np.testing.assert_array_equal(out.data, np.zeros((cfg.tokens, cfg.out_width)))

    def test_deterministic_in_seed(self):
        cfg = _config(depth=2)
        a = init_vit(cfg, seed=7)
        b = init_vit(cfg, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seeds_differ(self):
        cfg = _config(depth=1)
        a = init_vit(cfg, seed=7)
        b = init_vit(cfg, seed=8)
        assert not np.array_equal(a.w_embed.data, b.w_embed.data)

    def test_parameter_count_formula(self):
        """Closed-form count for depth=2, width=64, heads=4, T=32, in=3, out=6."""
        cfg = ViTConfig(2, 64, 4, 32, 3, 6)
        w = 64
        embed = 3 * w + w
        pos = 32 * w
        per_block = 2 * w + 4 * (w * w + w) + 2 * w + (w * 4 * w + 4 * w) + (4 * w * w + w)
        head = w * 6 + 6
        expected = embed + pos + 2 * per_block + 2 * w + head
        assert cfg.parameter_count() == expected
        actual = sum(p.data.size for p in init_vit(cfg, seed=0).parameters())
        assert actual == expected

    def test_width_must_divide_by_heads(self):
        with pytest.raises(ConfigError):
            ViTConfig(1, 10, 4, 8, 3, 6)

    def test_truncated_init_bounded(self):
        params = init_vit(_config(depth=1, width=64), seed=3)
        assert np.abs(params.w_embed.data).max() <= 2 * 0.02 + 1e-9


class TestForward:
    def test_identical_tokens_identical_rows(self):
        """Without position information, attention cannot distinguish tokens."""
        cfg = _config(depth=2)
        params = init_vit(cfg, seed=4)
        params.pos.assign(np.zeros(params.pos.shape))
        randomize_head(params, seed=4)
        row = np.random.default_rng(1).standard_normal(cfg.in_width)
        tokens = Tensor(np.tile(row, (cfg.tokens, 1)).astype(np.float32))
        out = vit_forward(params, tokens).data
        np.testing.assert_allclose(out, np.tile(out[0], (cfg.tokens, 1)), atol=1e-6)

    def test_permutation_equivariance_without_positions(self):
        cfg = _config(depth=2, tokens=6)
        params = init_vit(cfg, seed=5, dtype=np.float64)
        params.pos.assign(np.zeros(params.pos.shape))
        randomize_head(params, seed=5)
        rng = np.random.default_rng(2)
        tokens = rng.standard_normal((cfg.tokens, cfg.in_width))
        for trial in range(5):
            perm = np.random.default_rng(trial).permutation(cfg.tokens)
            base = vit_forward(params, Tensor(tokens)).data
            permuted = vit_forward(params, Tensor(tokens[perm])).data
            np.testing.assert_allclose(permuted, base[perm], atol=1e-10)

    def test_attention_rows_normalized(self):
        rng = np.random.default_rng(6)
        scores = Tensor(rng.standard_normal((12, 12)) * 5.0)
        rows = nm.softmax_rows(scores).data.sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-6)

    def test_gradient_against_finite_differences(self):
        """Mid-block weight gradient of sum(output), depth-1 width-16, 64-bit."""
        cfg = _config(depth=1, width=16, heads=2, tokens=4)
        params = init_vit(cfg, seed=9, dtype=np.float64)
        randomize_head(params, seed=9)
        rng = np.random.default_rng(3)
        tokens = rng.standard_normal((cfg.tokens, cfg.in_width))
        target = params.blocks[0].w_up

        loss = vit_forward(params, Tensor(tokens)).sum()
        nm.backward(loss)

        def scalar_fn(arr):
            with nm.no_grad():
                saved = target.data.copy()
                target.assign(arr)
                value = float(vit_forward(params, Tensor(tokens)).data.sum())
                target.assign(saved)
                return value

        fd = finite_difference_grad(scalar_fn, target.data.copy())
        assert relative_error(target.grad, fd) < 1e-3
