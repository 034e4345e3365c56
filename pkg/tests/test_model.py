"""Full-flow checks: schedule, logdet additivity, likelihood, sampling."""

import numpy as np
import pytest

from jetflow.coupling import CouplingMode, couple_forward
from jetflow.model import (
    ALL_CHANNEL,
    BackboneSpec,
    JetConfig,
    SpatialPolicy,
    build_jet,
    flow_forward,
    flow_inverse,
    nll_bpd,
    sample,
    sample_continuous,
    schedule,
)
from jetflow.numerics import Tensor
from jetflow.oracles import (
    finite_difference_jacobian,
    gaussian_identity_bpd,
    log_abs_det,
    uniform_identity_bpd,
)
from jetflow.patches import PatchGeometry
from jetflow.splitting import SplitKind

from helpers import randomize_head

C, R, COL, CHK = SplitKind.CHANNEL, SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD


def _small_config(num_couplings=2, channel_ratio=1, dtype="float64", seed=0,
                  policy=SpatialPolicy.ALTERNATE, mode=CouplingMode.PAIRING,
                  geom=None, depth=1, width=16, heads=2):
    geom = geom or PatchGeometry(4, 4, 2, 2)
    return JetConfig(
        geom=geom,
        num_couplings=num_couplings,
        channel_ratio=channel_ratio,
        spatial_policy=policy,
        backbone=BackboneSpec(depth=depth, width=width, heads=heads),
        mode=mode,
        seed=seed,
        dtype=dtype,
    )


def _random_tokens(geom, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((geom.tokens, geom.token_width)).astype(dtype))


class TestSchedule:
    def test_two_to_one_alternating(self):
        assert schedule(6, 2, SpatialPolicy.ALTERNATE) == [C, C, R, C, C, COL]

    def test_all_channel_sentinel(self):
        assert schedule(4, ALL_CHANNEL, SpatialPolicy.ALTERNATE) == [C, C, C, C]

    def test_all_spatial_fixed_kind(self):
        assert schedule(3, 0, SpatialPolicy.CHECKERBOARD_ONLY) == [CHK, CHK, CHK]

    def test_partial_group_truncates_channel_first(self):
        assert schedule(5, 2, SpatialPolicy.ALTERNATE) == [C, C, R, C, C]
        assert schedule(7, 2, SpatialPolicy.ALTERNATE) == [C, C, R, C, C, COL, C]

    def test_alternation_cycles_row_col_checker(self):
        kinds = schedule(9, 0, SpatialPolicy.ALTERNATE)
        assert kinds == [R, COL, CHK, R, COL, CHK, R, COL, CHK]

    def test_model_layers_follow_schedule(self):
        cfg = _small_config(num_couplings=6, channel_ratio=2)
        model = build_jet(cfg)
        assert [l.plan.kind for l in model.layers] == schedule(
            6, 2, SpatialPolicy.ALTERNATE
        )

    def test_channel_plans_vary_by_layer(self):
        cfg = _small_config(num_couplings=4, channel_ratio=ALL_CHANNEL,
                            geom=PatchGeometry(4, 4, 3, 2))
        model = build_jet(cfg)
        first, second = model.layers[0].plan, model.layers[1].plan
        assert not np.array_equal(first.select_a, second.select_a)

    def test_build_deterministic(self):
        cfg = _small_config(num_couplings=3)
        a, b = build_jet(cfg), build_jet(cfg)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)


class TestFlowForward:
    def test_identity_at_init(self):
        model = build_jet(_small_config(num_couplings=4, dtype="float32"))
        x = _random_tokens(model.geom, dtype=np.float32)
        result = flow_forward(model, x)
        np.testing.assert_array_equal(result.latent.data, x.data)
        assert float(result.log_det.data) == 0.0

    def test_logdet_is_sum_of_layer_logdets(self):
        model = build_jet(_small_config(num_couplings=3))
        for layer in model.layers:
            randomize_head(layer.net, seed=layer.index, scale=0.2)
        x = _random_tokens(model.geom, seed=1)
        total = flow_forward(model, x)

        running = x
        per_layer = 0.0
        for layer in model.layers:
            step = couple_forward(layer, running)
            per_layer += float(step.log_det.data)
            running = step.y
        np.testing.assert_allclose(float(total.log_det.data), per_layer, rtol=1e-12)
        np.testing.assert_array_equal(total.latent.data, running.data)

    def test_end_to_end_logdet_matches_jacobian(self):
        """Composite logdet vs brute-force Jacobian on an 8-dimensional model."""
        geom = PatchGeometry(2, 2, 2, 1)
        model = build_jet(_small_config(geom=geom, num_couplings=2, channel_ratio=1,
                                        width=8, policy=SpatialPolicy.CHECKERBOARD_ONLY))
        for layer in model.layers:
            randomize_head(layer.net, seed=20 + layer.index, scale=0.3)
        x0 = np.random.default_rng(2).standard_normal((4, 2))

        def flat_forward(flat):
            return flow_forward(model, Tensor(flat.reshape(4, 2))).latent.data.reshape(-1)

        jac = finite_difference_jacobian(flat_forward, x0.reshape(-1))
        analytic = float(flow_forward(model, Tensor(x0)).log_det.data)
        assert abs(analytic - log_abs_det(jac)) < 1e-3


class TestFlowInverse:
    def test_identity_at_init(self):
        model = build_jet(_small_config(num_couplings=4, dtype="float32"))
        z = _random_tokens(model.geom, dtype=np.float32)
        np.testing.assert_array_equal(flow_inverse(model, z).data, z.data)

    @pytest.mark.parametrize("mode", [CouplingMode.PAIRING, CouplingMode.MASKING])
    def test_round_trip_eight_couplings_float32(self, mode):
        cfg = _small_config(num_couplings=8, channel_ratio=1, dtype="float32", mode=mode)
        model = build_jet(cfg)
        for layer in model.layers:
            randomize_head(layer.net, seed=40 + layer.index, scale=0.1)
        x = _random_tokens(model.geom, seed=3, dtype=np.float32)
        z = flow_forward(model, x).latent
        np.testing.assert_allclose(flow_inverse(model, z).data, x.data, atol=1e-3)
        np.testing.assert_allclose(
            flow_forward(model, flow_inverse(model, z)).latent.data, z.data, atol=1e-3
        )

    def test_round_trip_float64(self):
        model = build_jet(_small_config(num_couplings=4, channel_ratio=1))
        for layer in model.layers:
            randomize_head(layer.net, seed=60 + layer.index, scale=0.1)
        x = _random_tokens(model.geom, seed=4)
        z = flow_forward(model, x).latent
        np.testing.assert_allclose(flow_inverse(model, z).data, x.data, atol=1e-10)


class TestBitsPerDimension:
    def test_uniform_baseline_at_identity_init(self):
        """Identity flow on dequantized-uniform values: 9.3859 bits/dim."""
        model = build_jet(_small_config(num_couplings=2, geom=PatchGeometry(8, 8, 3, 2)))
        rng = np.random.default_rng(9)
        values = []
        for _ in range(256):
            x = rng.random((model.geom.tokens, model.geom.token_width)) - 0.5
            values.append(float(nll_bpd(model, Tensor(x)).data))
        np.testing.assert_allclose(np.mean(values), uniform_identity_bpd(), atol=0.01)
        np.testing.assert_allclose(uniform_identity_bpd(), 9.3859, atol=1e-4)

    def test_gaussian_baseline_without_rescale(self):
        """Identity flow on unit-Gaussian inputs in raw mode: half log2(2 pi e)."""
        model = build_jet(_small_config(num_couplings=2, geom=PatchGeometry(8, 8, 3, 2)))
        rng = np.random.default_rng(10)
        values = []
        for _ in range(256):
            x = rng.standard_normal((model.geom.tokens, model.geom.token_width))
            values.append(float(nll_bpd(model, Tensor(x), rescale_bpd=0.0).data))
        np.testing.assert_allclose(np.mean(values), gaussian_identity_bpd(), atol=0.02)
        np.testing.assert_allclose(gaussian_identity_bpd(), 2.0471, atol=1e-4)

    def test_bpd_positive_for_random_models(self):
        """The scale cap bounds logdet, keeping bits/dim strictly positive."""
        for seed in range(3):
            model = build_jet(_small_config(num_couplings=3, seed=seed))
            for layer in model.layers:
                randomize_head(layer.net, seed=80 + seed + layer.index, scale=1.0)
            x = _random_tokens(model.geom, seed=seed)
            assert float(nll_bpd(model, x).data) > 0.0


class TestSampling:
    def test_same_seed_same_samples(self):
        model = build_jet(_small_config(num_couplings=2, dtype="float32"))
        a = sample(model, count=3, rng_seed=5)
        b = sample(model, count=3, rng_seed=5)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, 4, 4, 2)
        assert a.dtype == np.uint8

    def test_identity_model_matches_rescaled_prior_moments(self):
        """Identity flow: pixels are a clamped round of 256*(z+0.5), mean ~127.5."""
        model = build_jet(_small_config(num_couplings=2, dtype="float32",
                                        geom=PatchGeometry(8, 8, 3, 2)))
        images = sample(model, count=64, rng_seed=6)
        assert abs(images.mean() - 127.5) < 2.0

    def test_forward_recovers_drawn_latents(self):
        cfg = _small_config(num_couplings=3, channel_ratio=1, dtype="float64")
        model = build_jet(cfg)
        for layer in model.layers:
            randomize_head(layer.net, seed=90 + layer.index, scale=0.1)
        latents, tokens = sample_continuous(model, count=2, rng_seed=7)
        for z, seq in zip(latents, tokens):
            recovered = flow_forward(model, Tensor(seq)).latent.data
            np.testing.assert_allclose(recovered, z, atol=1e-9)
