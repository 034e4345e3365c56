"""Verification suites: invariants with measured errors vs tolerances.

Each check builds its own models, measures an error against an
independent reference (finite differences, brute-force Jacobians,
analytic baselines, byte-level round trips) and reports a `CheckResult`.
The `jet verify` command and the acceptance test module both run these;
`fast` covers everything but training, `full` adds the optimization
checks.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataSpec, RunConfig, training_checkpoint
from .coupling import CouplingMode, couple_forward, scale_bias, _select_group_b
from .data import CIFAR_RECORD_BYTES, load_cifar10, synth_dataset
from .errors import DataFormatError
from .model import (
    ALL_CHANNEL,
    BackboneSpec,
    JetConfig,
    SpatialPolicy,
    build_jet,
    flow_forward,
    flow_inverse,
    schedule,
)
from .numerics import Tensor
from .oracles import (
    finite_difference_grad,
    finite_difference_jacobian,
    log_abs_det,
    relative_error,
    uniform_identity_bpd,
)
from .patches import PatchGeometry
from .seeding import stream
from .splitting import SplitKind, build_channel_plan, build_spatial_plan, merge, split
from .training import OptState, TrainConfig, eval_bpd, train

FAST_LEVEL = "fast"
FULL_LEVEL = "full"


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (
            f"check={self.name} value={self.value:.3e} tol={self.tolerance:.3e} "
            f"status={status} seconds={self.seconds:.1f}"
        )
        if self.detail:
            text += f" detail={self.detail}"
        return text


def _timed(name, tolerance, fn, detail="") -> CheckResult:
    start = time.perf_counter()
    value = fn()
    elapsed = time.perf_counter() - start
    return CheckResult(
        name=name,
        value=float(value),
        tolerance=tolerance,
        passed=bool(value < tolerance),
        detail=detail,
        seconds=elapsed,
    )


def _randomize_heads(model, seed, scale=0.1):
    rng = stream(seed, 12345)
    for layer in model.layers:
        layer.net.w_head.assign(rng.normal(0.0, scale, layer.net.w_head.shape))
        layer.net.b_head.assign(rng.normal(0.0, scale, layer.net.b_head.shape))


def _randomize_everything(model, seed):
    rng = stream(seed, 54321)
    for p in model.parameters():
        base = p.data
        if p.name.endswith(".gain"):
            p.assign(1.0 + rng.normal(0.0, 0.1, base.shape))
        else:
            p.assign(rng.normal(0.0, 0.2, base.shape))


# ---------------------------------------------------------------------------
# 1. bijectivity


def check_round_trip(inputs: int = 100) -> list[CheckResult]:
    """32 couplings, depth-2 width-64 backbones, all split kinds, both modes."""
    geom = PatchGeometry(8, 8, 3, 2)
    tolerances = {"float32": 1e-3, "float64": 1e-10}
    results = []
    for mode in (CouplingMode.PAIRING, CouplingMode.MASKING):
        for dtype, tol in tolerances.items():
            cfg = JetConfig(
                geom=geom, num_couplings=32, channel_ratio=1,
                spatial_policy=SpatialPolicy.ALTERNATE,
                backbone=BackboneSpec(depth=2, width=64, heads=4),
                mode=mode, seed=3, dtype=dtype,
            )
            model = build_jet(cfg)
            kinds = {layer.plan.kind for layer in model.layers}
            assert kinds == set(SplitKind)
            # Head std 0.05 keeps per-layer scales in roughly (0.5, 1.5): a
            # clearly non-identity flow whose activations stay float32-sized.
            _randomize_heads(model, seed=17, scale=0.05)
            rng = stream(23)

            def worst(model=model, rng=rng, dtype=dtype):
                err = 0.0
                with nm.no_grad():
                    for _ in range(inputs):
                        x = rng.standard_normal((geom.tokens, geom.token_width))
                        x = x.astype(dtype)
                        z = flow_forward(model, Tensor(x)).latent
                        back = flow_inverse(model, z)
                        err = max(err, float(np.abs(back.data - x).max()))
                return err

            results.append(
                _timed(f"round_trip[{dtype},{mode.value}]", tol, worst,
                       detail=f"{inputs} inputs, 32 couplings")
            )
    return results


# ---------------------------------------------------------------------------
# 2. log-determinant exactness


def check_logdet(draws: int = 20) -> CheckResult:
    """Analytic logdet vs brute-force Jacobian on a 2-coupling, 8-dim model."""
    geom = PatchGeometry(2, 2, 2, 1)
    spatial = (SpatialPolicy.ROW_ONLY, SpatialPolicy.COLUMN_ONLY,
               SpatialPolicy.CHECKERBOARD_ONLY)

    def worst():
        err = 0.0
        for draw in range(draws):
            mode = CouplingMode.PAIRING if draw % 2 == 0 else CouplingMode.MASKING
            cfg = JetConfig(
                geom=geom, num_couplings=2, channel_ratio=1,
                spatial_policy=spatial[draw % 3],
                backbone=BackboneSpec(depth=1, width=8, heads=2),
                mode=mode, seed=draw, dtype="float64",
            )
            model = build_jet(cfg)
            _randomize_heads(model, seed=100 + draw, scale=0.3)
            x0 = stream(200 + draw).standard_normal((geom.tokens, geom.token_width))

            def flat(arr):
                with nm.no_grad():
                    out = flow_forward(model, Tensor(arr.reshape(x0.shape))).latent
                return out.data.reshape(-1)

            jac = finite_difference_jacobian(flat, x0.reshape(-1), step=1e-5)
            analytic = float(flow_forward(model, Tensor(x0)).log_det.data)
            err = max(err, abs(analytic - log_abs_det(jac)))
        return err

    return _timed("logdet_vs_jacobian", 1e-3, worst, detail=f"{draws} random draws, D=8")


def logdet_discrepancy_without_cap_term(num_draws: int = 5) -> float:
    """Mean |(logdet - dims*ln cap) - jacobian logdet| per layer.

    Demonstrates the suite's sensitivity: an implementation that forgot
    the cap term would be off by exactly (transformed dims) * ln(cap)
    per layer, which this function measures.
    """
    geom = PatchGeometry(2, 2, 2, 1)
    gaps = []
    for draw in range(num_draws):
        cfg = JetConfig(geom=geom, num_couplings=2, channel_ratio=ALL_CHANNEL,
                        backbone=BackboneSpec(depth=1, width=8, heads=2),
                        seed=draw, dtype="float64")
        model = build_jet(cfg)
        _randomize_heads(model, seed=300 + draw, scale=0.3)
        x0 = stream(400 + draw).standard_normal((geom.tokens, geom.token_width))

        def flat(arr):
            with nm.no_grad():
                return flow_forward(model, Tensor(arr.reshape(x0.shape))).latent.data.reshape(-1)

        reference = log_abs_det(finite_difference_jacobian(flat, x0.reshape(-1)))
        half_dims = geom.dimensions // 2
        broken = float(flow_forward(model, Tensor(x0)).log_det.data)
        broken -= len(model.layers) * half_dims * math.log(2.0)
        gaps.append(abs(broken - reference) / len(model.layers))
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# 3. identity at initialization


def check_identity_init() -> CheckResult:
    """Fresh models are the identity bitwise with exactly zero logdet."""

    def worst():
        failures = 0.0
        for mode in (CouplingMode.PAIRING, CouplingMode.MASKING):
            for dtype in ("float32", "float64"):
                for ratio in (1, ALL_CHANNEL, 0):
                    cfg = JetConfig(
                        geom=PatchGeometry(8, 8, 3, 2), num_couplings=6,
                        channel_ratio=ratio, spatial_policy=SpatialPolicy.ALTERNATE,
                        backbone=BackboneSpec(depth=1, width=16, heads=2),
                        mode=mode, seed=5, dtype=dtype,
                    )
                    model = build_jet(cfg)
                    rng = stream(7)
                    with nm.no_grad():
                        for _ in range(3):
                            x = rng.standard_normal((16, 12)).astype(dtype)
                            result = flow_forward(model, Tensor(x))
                            if not np.array_equal(result.latent.data, x):
                                failures += 1.0
                            if float(result.log_det.data) != 0.0:
                                failures += 1.0
                            inverse = flow_inverse(model, Tensor(x))
                            if not np.array_equal(inverse.data, x):
                                failures += 1.0
        return failures

    return _timed("identity_at_init", 1.0, worst,
                  detail="12 configs x 3 inputs, bitwise + exact-zero logdet")


# ---------------------------------------------------------------------------
# 4. analytic bpd baseline


def check_bpd_baseline(images: int = 4096) -> CheckResult:
    """Identity-init model on uniform pixels evaluates to the analytic value."""
    geom = PatchGeometry(8, 8, 3, 2)
    cfg = JetConfig(geom=geom, num_couplings=2, channel_ratio=ALL_CHANNEL,
                    backbone=BackboneSpec(depth=1, width=16, heads=2),
                    seed=11, dtype="float32")
    model = build_jet(cfg)
    data = synth_dataset("constant_plus_noise", images, 8, 8, 3, seed=31)

    def gap():
        measured, _ = eval_bpd(model, data.images, noise_seed=77)
        return abs(measured - uniform_identity_bpd())

    return _timed("bpd_analytic_baseline", 0.01, gap,
                  detail=f"{images} uniform images vs {uniform_identity_bpd():.4f}")


# ---------------------------------------------------------------------------
# 5. gradient correctness


def check_gradients(step: float = 1e-5) -> CheckResult:
    """Full-model loss gradient vs central differences over every parameter."""
    geom = PatchGeometry(4, 4, 2, 2)
    cfg = JetConfig(geom=geom, num_couplings=2, channel_ratio=1,
                    spatial_policy=SpatialPolicy.CHECKERBOARD_ONLY,
                    backbone=BackboneSpec(depth=1, width=16, heads=2),
                    seed=13, dtype="float64")
    model = build_jet(cfg)
    _randomize_everything(model, seed=19)
    x = Tensor(stream(21).standard_normal((geom.tokens, geom.token_width)))

    from .model import nll_bpd

    def worst():
        model.zero_grads()
        nm.backward(nll_bpd(model, x))
        err = 0.0
        for param in model.parameters():
            def scalar_fn(arr, p=param):
                with nm.no_grad():
                    saved = p.data.copy()
                    p.assign(arr)
                    value = float(nll_bpd(model, x).data)
                    p.assign(saved)
                    return value

            fd = finite_difference_grad(scalar_fn, param.data.copy(), step=step)
            err = max(err, relative_error(param.grad, fd))
        return err

    total = sum(p.data.size for p in model.parameters())
    return _timed("gradient_vs_finite_differences", 1e-3, worst,
                  detail=f"{total} parameters, central step {step:g}")


# ---------------------------------------------------------------------------
# 6 & 7. training signal and entropy floor


def training_run_config(epochs: int = 200) -> RunConfig:
    """The reference desk-scale training run: uniform pixels, 64-image batch."""
    jet = JetConfig(
        geom=PatchGeometry(8, 8, 3, 2), num_couplings=3, channel_ratio=ALL_CHANNEL,
        backbone=BackboneSpec(depth=1, width=64, heads=4),
        mode=CouplingMode.PAIRING, seed=0, dtype="float32",
    )
    train_cfg = TrainConfig(epochs=epochs, batch_size=64, warmup_steps=0, log_interval=1)
    data = DataSpec(source="synthetic", kind="constant_plus_noise", n=64, seed=5)
    return RunConfig(jet=jet, train=train_cfg, data=data, out_dir=None)


def check_training_signal(epochs: int = 200) -> tuple[CheckResult, CheckResult, object]:
    """200 AdamW steps cut >= 0.5 bits/dim off the analytic baseline,
    bitwise reproducibly; returns the trained model for the entropy check."""
    run = training_run_config(epochs)
    data = run.data.load(run.jet.geom)

    start = time.perf_counter()
    model = build_jet(run.jet)
    state = train(model, data.images, run.train)
    final = state.records[-1]["train_bpd"]
    drop = uniform_identity_bpd() - final
    elapsed = time.perf_counter() - start
    signal = CheckResult(
        name="training_signal",
        value=drop,
        tolerance=0.5,
        passed=drop >= 0.5,
        detail=f"init {uniform_identity_bpd():.4f} -> final {final:.4f} in {epochs} steps",
        seconds=elapsed,
    )

    # Determinism: replay a short prefix twice and demand identical metrics.
    start = time.perf_counter()
    short = TrainConfig(epochs=20, batch_size=64, warmup_steps=0, log_interval=1)
    first = train(build_jet(run.jet), data.images, short).records
    second = train(build_jet(run.jet), data.images, short).records
    identical = first == second
    determinism = CheckResult(
        name="training_determinism",
        value=0.0 if identical else 1.0,
        tolerance=1.0,
        passed=identical,
        detail="20-step metrics bitwise identical across reruns",
        seconds=time.perf_counter() - start,
    )
    return signal, determinism, model


def check_entropy_floor(trained_model=None) -> CheckResult:
    """A model trained on uniform pixels cannot beat 8 bits/dim on fresh data."""
    if trained_model is None:
        signal, _, trained_model = check_training_signal(epochs=30)

    def floor_gap():
        fresh = synth_dataset("constant_plus_noise", 512, 8, 8, 3, seed=91)
        measured, _ = eval_bpd(trained_model, fresh.images, noise_seed=93)
        # Positive margin above the floor passes; report how far above.
        return (8.0 - 0.02) - measured

    return _timed("entropy_floor", 0.0, floor_gap,
                  detail="eval bpd on fresh uniform data must stay >= 7.98")


# ---------------------------------------------------------------------------
# 8. schedule semantics


def _reference_schedule(n: int, ratio, policy: SpatialPolicy) -> list[SplitKind]:
    # Independent derivation by absolute position index.
    if ratio == ALL_CHANNEL:
        return [SplitKind.CHANNEL] * n
    cycle = {
        SpatialPolicy.ROW_ONLY: [SplitKind.ROW],
        SpatialPolicy.COLUMN_ONLY: [SplitKind.COLUMN],
        SpatialPolicy.CHECKERBOARD_ONLY: [SplitKind.CHECKERBOARD],
        SpatialPolicy.ALTERNATE: [SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD],
    }[policy]
    out = []
    for i in range(n):
        position = i % (ratio + 1)
        if position < ratio:
            out.append(SplitKind.CHANNEL)
        else:
            out.append(cycle[(i // (ratio + 1)) % len(cycle)])
    return out


def check_schedule() -> CheckResult:
    """Kind sequences match the ratio rule over a 30-case grid, exactly."""

    def mismatches():
        cases = 0
        wrong = 0.0
        for policy in SpatialPolicy:
            for ratio in (0, 1, 2, 3, ALL_CHANNEL):
                for n in (1, 5, 7):
                    if cases >= 30:
                        break
                    cases += 1
                    if schedule(n, ratio, policy) != _reference_schedule(n, ratio, policy):
                        wrong += 1.0
        # A built model must realize its schedule, too.
        cfg = JetConfig(geom=PatchGeometry(8, 8, 3, 2), num_couplings=7, channel_ratio=2,
                        backbone=BackboneSpec(depth=0, width=8, heads=2), seed=1)
        model = build_jet(cfg)
        if [l.plan.kind for l in model.layers] != _reference_schedule(
            7, 2, SpatialPolicy.ALTERNATE
        ):
            wrong += 1.0
        return wrong

    return _timed("schedule_semantics", 1.0, mismatches, detail="30-case grid, exact match")


# ---------------------------------------------------------------------------
# 9. format round trips


def _fake_cifar_dir(root: Path, records_per_file: int = 10000) -> Path:
    data_dir = root / "cifar"
    data_dir.mkdir()
    rng = stream(113)
    for i in range(1, 6):
        block = np.empty((records_per_file, CIFAR_RECORD_BYTES), dtype=np.uint8)
        block[:, 0] = rng.integers(0, 10, records_per_file)
        block[:, 1:] = rng.integers(0, 256, (records_per_file, 3072))
        block.tofile(data_dir / f"data_batch_{i}.bin")
    return data_dir


def check_formats() -> CheckResult:
    """Checkpoint byte round trip, CIFAR layout, bitwise split/merge."""

    def failures():
        bad = 0.0
        with tempfile.TemporaryDirectory() as tmp:
            tmp_path = Path(tmp)

            # Checkpoint: save -> load -> save must be byte-identical.
            run = training_run_config(epochs=1)
            model = build_jet(run.jet)
            opt = OptState.for_parameters(model.parameters())
            state = training_checkpoint(run, model, opt, step=41)
            first = tmp_path / "first.jetf"
            second = tmp_path / "second.jetf"
            save_checkpoint(state, first)
            save_checkpoint(load_checkpoint(first), second)
            if first.read_bytes() != second.read_bytes():
                bad += 1.0
            reloaded = load_checkpoint(first)
            if reloaded.step != 41 or list(reloaded.tensors) != list(state.tensors):
                bad += 1.0
            for name, tensor in state.tensors.items():
                if not np.array_equal(reloaded.tensors[name], tensor):
                    bad += 1.0
                    break

            corrupted = bytearray(first.read_bytes())
            corrupted[:4] = b"XXXX"
            broken = tmp_path / "broken.jetf"
            broken.write_bytes(bytes(corrupted))
            try:
                load_checkpoint(broken)
                bad += 1.0
            except DataFormatError:
                pass

            # CIFAR-10: 5 batch files of 10000 records -> 50000 images.
            data_dir = _fake_cifar_dir(tmp_path)
            dataset = load_cifar10(data_dir, split="train")
            if dataset.count != 50000 or dataset.images.shape != (50000, 32, 32, 3):
                bad += 1.0
            raw = np.fromfile(data_dir / "data_batch_1.bin", dtype=np.uint8)
            record = raw[:CIFAR_RECORD_BYTES]
            planar = record[1:].reshape(3, 32, 32)
            if not np.array_equal(dataset.images[0], planar.transpose(1, 2, 0)):
                bad += 1.0

            # Split/merge bitwise inversion through full-precision matmuls.
            rng = stream(127)
            x = Tensor(rng.standard_normal((16, 12)).astype(np.float32))
            plans = [build_channel_plan(12, seed=3)] + [
                build_spatial_plan(4, 4, kind)
                for kind in (SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD)
            ]
            for plan in plans:
                x1, x2 = split(x, plan)
                if not np.array_equal(merge(x1, x2, plan).data, x.data):
                    bad += 1.0
        return bad

    return _timed("format_round_trips", 1.0, failures,
                  detail="checkpoint bytes, CIFAR layout, split/merge bitwise")


# ---------------------------------------------------------------------------
# 10. mode wiring


def check_wiring() -> CheckResult:
    """Pairing routes to documented partners; masking blinds the net to x2."""

    def failures():
        bad = 0.0
        # Pairing: with a depth-0 net, nudging one conditioning token moves
        # exactly itself and its documented partner.
        for kind in (SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD):
            plan = build_spatial_plan(4, 4, kind)
            from .coupling import CouplingLayer, spatial_backbone_config
            from .vit import init_vit

            cfg = spatial_backbone_config(plan, 6, CouplingMode.PAIRING, 0, 16, 2)
            net = init_vit(cfg, seed=7, dtype=np.float64)
            rng = stream(500)
            net.w_head.assign(rng.normal(0.0, 0.5, net.w_head.shape))
            net.b_head.assign(rng.normal(0.0, 0.5, net.b_head.shape))
            layer = CouplingLayer(plan=plan, net=net, mode=CouplingMode.PAIRING)
            x = stream(501).standard_normal((16, 6))
            base = couple_forward(layer, Tensor(x)).y.data
            a_tokens = plan.select_a.argmax(axis=1)
            b_tokens = plan.select_b.argmax(axis=1)
            for a_pos in (0, 5, 7):
                bumped = x.copy()
                bumped[a_tokens[a_pos]] += 1.0
                out = couple_forward(layer, Tensor(bumped)).y.data
                changed = set(np.flatnonzero(np.any(out != base, axis=1)).tolist())
                expected = {int(a_tokens[a_pos]), int(b_tokens[plan.pairing[a_pos]])}
                if changed != expected:
                    bad += 1.0

        # Masking: the transformed group's values must have zero influence on
        # the predicted fields, and discarded output rows must be unreachable.
        cfg = JetConfig(geom=PatchGeometry(8, 8, 3, 2), num_couplings=1, channel_ratio=0,
                        spatial_policy=SpatialPolicy.CHECKERBOARD_ONLY,
                        backbone=BackboneSpec(depth=1, width=16, heads=2),
                        mode=CouplingMode.MASKING, seed=2, dtype="float64")
        model = build_jet(cfg)
        _randomize_heads(model, seed=503, scale=0.5)
        layer = model.layers[0]
        x = stream(504).standard_normal((16, 12))
        x1, x2 = split(Tensor(x), layer.plan)
        raw_a, shift_a = scale_bias(layer, x1)
        y_base = couple_forward(layer, Tensor(x)).y.data

        noisy = merge(x1, Tensor(x2.data + 3.0), layer.plan)
        raw_b, shift_b = scale_bias(layer, split(noisy, layer.plan)[0])
        if not np.array_equal(raw_a.data, raw_b.data):
            bad += 1.0
        if not np.array_equal(shift_a.data, shift_b.data):
            bad += 1.0
        y1_base, _ = split(Tensor(y_base), layer.plan)
        y1_noisy, _ = split(couple_forward(layer, noisy).y, layer.plan)
        if not np.array_equal(y1_base.data, y1_noisy.data):
            bad += 1.0

        rng = stream(505)
        out = rng.standard_normal((16, 24))
        doctored = out.copy()
        doctored[layer.plan.select_a.argmax(axis=1)] += 1.0
        routed = _select_group_b(Tensor(out), layer.plan).data
        routed_doctored = _select_group_b(Tensor(doctored), layer.plan).data
        if not np.array_equal(routed, routed_doctored):
            bad += 1.0
        return bad

    return _timed("mode_wiring", 1.0, failures,
                  detail="pairing partner routing; masking zero influence")


# ---------------------------------------------------------------------------
# 11. sampling sanity


def check_sampling() -> CheckResult:
    """Identity-init samples are quantized rescaled prior noise: the pixel
    mean sits at mid-range and regeneration from the same seed is bitwise."""
    from .model import sample

    cfg = JetConfig(geom=PatchGeometry(8, 8, 3, 2), num_couplings=2,
                    channel_ratio=ALL_CHANNEL,
                    backbone=BackboneSpec(depth=1, width=16, heads=2),
                    seed=29, dtype="float32")
    model = build_jet(cfg)

    def failures():
        first = sample(model, count=64, rng_seed=31)
        second = sample(model, count=64, rng_seed=31)
        bad = 0.0
        if not np.array_equal(first, second):
            bad += 1.0
        if abs(float(first.mean()) - 127.5) > 2.0:
            bad += 1.0
        return bad

    return _timed("sampling_moments", 1.0, failures,
                  detail="64 identity-init samples: mean near 127.5, seeded bitwise")


# ---------------------------------------------------------------------------
# runner


def run_verify(level: str = FAST_LEVEL) -> list[CheckResult]:
    if level not in (FAST_LEVEL, FULL_LEVEL):
        raise ValueError(f"verify level must be {FAST_LEVEL} or {FULL_LEVEL}")
    results: list[CheckResult] = []
    results.extend(check_round_trip())
    results.append(check_logdet())
    results.append(check_identity_init())
    results.append(check_bpd_baseline())
    results.append(check_gradients())
    results.append(check_schedule())
    results.append(check_formats())
    results.append(check_wiring())
    results.append(check_sampling())
    if level == FULL_LEVEL:
        signal, determinism, model = check_training_signal()
        results.extend([signal, determinism])
        results.append(check_entropy_floor(model))
    return results
