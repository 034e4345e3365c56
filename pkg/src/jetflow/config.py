"""Run configuration: canonical text format, strict validation, bridging.

A run config is INI-style sections of key=value pairs.  Unknown sections
or keys are hard errors, every run writes its fully resolved config next
to its outputs, and the same canonical text is embedded in checkpoints
so a model can be rebuilt from its checkpoint alone.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import CheckpointState, load_checkpoint
from .coupling import CouplingMode
from .data import Dataset, SynthKind, load_cifar10, synth_dataset
from .errors import ConfigError, DataFormatError
from .model import ALL_CHANNEL, BackboneSpec, JetConfig, JetModel, SpatialPolicy, build_jet
from .patches import PatchGeometry
from .training import OptState, TrainConfig


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"  # "synthetic" | "cifar10"
    path: Optional[str] = None
    split: str = "train"
    kind: str = SynthKind.CONSTANT_PLUS_NOISE.value
    n: int = 512
    seed: int = 0
    constant: int = 0
    amplitude: int = 255
    max_blobs: int = 3

    def load(self, geom: PatchGeometry) -> Dataset:
        if self.source == "cifar10":
            if self.path is None:
                raise ConfigError("data.path is required when data.source = cifar10")
            if (geom.image_height, geom.image_width, geom.channels) != (32, 32, 3):
                raise ConfigError(
                    "cifar10 images are 32x32x3; geometry "
                    f"{geom.image_height}x{geom.image_width}x{geom.channels} does not match"
                )
            return load_cifar10(self.path, self.split)
        if self.source == "synthetic":
            return synth_dataset(
                self.kind, self.n, geom.image_height, geom.image_width,
                geom.channels, self.seed, constant=self.constant,
                amplitude=self.amplitude, max_blobs=self.max_blobs,
            )
        raise ConfigError(f"unknown data.source {self.source!r}")


@dataclass(frozen=True)
class RunConfig:
    jet: JetConfig
    train: TrainConfig
    data: DataSpec
    out_dir: Optional[str] = None


def _default_run() -> RunConfig:
    return RunConfig(
        jet=JetConfig(geom=PatchGeometry(8, 8, 3, 2)),
        train=TrainConfig(),
        data=DataSpec(),
        out_dir=None,
    )


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def canonical_text(run: RunConfig) -> str:
    """Deterministic, fully resolved text form of a run config."""
    jet, train, data = run.jet, run.train, run.data
    geom = jet.geom
    sections = [
        ("geometry", [
            ("height", geom.image_height),
            ("width", geom.image_width),
            ("channels", geom.channels),
            ("patch", geom.patch),
        ]),
        ("model", [
            ("num_couplings", jet.num_couplings),
            ("channel_ratio", jet.channel_ratio),
            ("spatial_policy", jet.spatial_policy.value),
            ("mode", jet.mode.value),
            ("seed", jet.seed),
            ("dtype", jet.dtype),
        ]),
        ("backbone", [
            ("depth", jet.backbone.depth),
            ("width", jet.backbone.width),
            ("heads", jet.backbone.heads),
            ("mlp_ratio", jet.backbone.mlp_ratio),
        ]),
        ("train", [
            ("base_lr", train.base_lr),
            ("weight_decay", train.weight_decay),
            ("beta1", train.beta1),
            ("beta2", train.beta2),
            ("eps", train.eps),
            ("epochs", train.epochs),
            ("batch_size", train.batch_size),
            ("warmup_steps", train.warmup_steps),
            ("grad_clip_norm", train.grad_clip_norm),
            ("data_seed", train.data_seed),
            ("noise_seed", train.noise_seed),
            ("eval_interval", train.eval_interval),
            ("eval_batches", train.eval_batches),
            ("checkpoint_interval", train.checkpoint_interval),
            ("log_interval", train.log_interval),
        ]),
        ("data", [
            ("source", data.source),
            ("path", data.path),
            ("split", data.split),
            ("kind", data.kind),
            ("n", data.n),
            ("seed", data.seed),
            ("constant", data.constant),
            ("amplitude", data.amplitude),
            ("max_blobs", data.max_blobs),
        ]),
        ("run", [
            ("out_dir", run.out_dir),
        ]),
    ]
    lines = []
    for section, pairs in sections:
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_fmt(value)}" for key, value in pairs)
        lines.append("")
    return "\n".join(lines)


def _to_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {text!r}") from None


def _to_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None


def _to_optional_float(text: str, where: str):
    return None if text.lower() == "none" else _to_float(text, where)


def _to_optional_str(text: str):
    return None if text.lower() == "none" else text


_SCHEMA: dict[str, set[str]] = {
    "geometry": {"height", "width", "channels", "patch"},
    "model": {"num_couplings", "channel_ratio", "spatial_policy", "mode", "seed", "dtype"},
    "backbone": {"depth", "width", "heads", "mlp_ratio"},
    "train": {
        "preset", "base_lr", "weight_decay", "beta1", "beta2", "eps", "epochs",
        "batch_size", "warmup_steps", "grad_clip_norm", "data_seed", "noise_seed",
        "eval_interval", "eval_batches", "checkpoint_interval", "log_interval",
    },
    "data": {"source", "path", "split", "kind", "n", "seed", "constant", "amplitude", "max_blobs"},
    "run": {"out_dir"},
}


def parse_run_config(text: str) -> RunConfig:
    """Parse and validate; unknown sections or keys are hard errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            values[section][key] = raw.strip()

    def get(section: str, key: str, default):
        return values.get(section, {}).get(key, default)

    base = _default_run()
    geom_default = base.jet.geom
    geom = PatchGeometry(
        image_height=_to_int(get("geometry", "height", str(geom_default.image_height)), "geometry.height"),
        image_width=_to_int(get("geometry", "width", str(geom_default.image_width)), "geometry.width"),
        channels=_to_int(get("geometry", "channels", str(geom_default.channels)), "geometry.channels"),
        patch=_to_int(get("geometry", "patch", str(geom_default.patch)), "geometry.patch"),
    )

    ratio_raw = str(get("model", "channel_ratio", base.jet.channel_ratio))
    channel_ratio = ALL_CHANNEL if ratio_raw == ALL_CHANNEL else _to_int(ratio_raw, "model.channel_ratio")
    try:
        policy = SpatialPolicy(get("model", "spatial_policy", base.jet.spatial_policy.value))
    except ValueError:
        raise ConfigError(
            f"model.spatial_policy must be one of {[p.value for p in SpatialPolicy]}"
        ) from None
    try:
        mode = CouplingMode(get("model", "mode", base.jet.mode.value))
    except ValueError:
        raise ConfigError(
            f"model.mode must be one of {[m.value for m in CouplingMode]}"
        ) from None

    jet = JetConfig(
        geom=geom,
        num_couplings=_to_int(get("model", "num_couplings", str(base.jet.num_couplings)), "model.num_couplings"),
        channel_ratio=channel_ratio,
        spatial_policy=policy,
        backbone=BackboneSpec(
            depth=_to_int(get("backbone", "depth", str(base.jet.backbone.depth)), "backbone.depth"),
            width=_to_int(get("backbone", "width", str(base.jet.backbone.width)), "backbone.width"),
            heads=_to_int(get("backbone", "heads", str(base.jet.backbone.heads)), "backbone.heads"),
            mlp_ratio=_to_int(get("backbone", "mlp_ratio", str(base.jet.backbone.mlp_ratio)), "backbone.mlp_ratio"),
        ),
        mode=mode,
        seed=_to_int(get("model", "seed", str(base.jet.seed)), "model.seed"),
        dtype=get("model", "dtype", base.jet.dtype),
    )

    t = base.train
    preset_name = values.get("train", {}).get("preset")
    if preset_name:
        from .training import preset as train_preset

        t = train_preset(preset_name)  # explicit keys below still override
    train = TrainConfig(
        base_lr=_to_float(get("train", "base_lr", str(t.base_lr)), "train.base_lr"),
        weight_decay=_to_float(get("train", "weight_decay", str(t.weight_decay)), "train.weight_decay"),
        beta1=_to_float(get("train", "beta1", str(t.beta1)), "train.beta1"),
        beta2=_to_float(get("train", "beta2", str(t.beta2)), "train.beta2"),
        eps=_to_float(get("train", "eps", str(t.eps)), "train.eps"),
        epochs=_to_int(get("train", "epochs", str(t.epochs)), "train.epochs"),
        batch_size=_to_int(get("train", "batch_size", str(t.batch_size)), "train.batch_size"),
        warmup_steps=_to_int(get("train", "warmup_steps", str(t.warmup_steps)), "train.warmup_steps"),
        grad_clip_norm=_to_optional_float(str(get("train", "grad_clip_norm", t.grad_clip_norm)), "train.grad_clip_norm"),
        data_seed=_to_int(get("train", "data_seed", str(t.data_seed)), "train.data_seed"),
        noise_seed=_to_int(get("train", "noise_seed", str(t.noise_seed)), "train.noise_seed"),
        eval_interval=_to_int(get("train", "eval_interval", str(t.eval_interval)), "train.eval_interval"),
        eval_batches=_to_int(get("train", "eval_batches", str(t.eval_batches)), "train.eval_batches"),
        checkpoint_interval=_to_int(get("train", "checkpoint_interval", str(t.checkpoint_interval)), "train.checkpoint_interval"),
        log_interval=_to_int(get("train", "log_interval", str(t.log_interval)), "train.log_interval"),
    )

    d = base.data
    data = DataSpec(
        source=get("data", "source", d.source),
        path=_to_optional_str(str(get("data", "path", d.path))),
        split=get("data", "split", d.split),
        kind=get("data", "kind", d.kind),
        n=_to_int(get("data", "n", str(d.n)), "data.n"),
        seed=_to_int(get("data", "seed", str(d.seed)), "data.seed"),
        constant=_to_int(get("data", "constant", str(d.constant)), "data.constant"),
        amplitude=_to_int(get("data", "amplitude", str(d.amplitude)), "data.amplitude"),
        max_blobs=_to_int(get("data", "max_blobs", str(d.max_blobs)), "data.max_blobs"),
    )
    if data.source not in ("synthetic", "cifar10"):
        raise ConfigError(f"data.source must be synthetic or cifar10, got {data.source!r}")
    try:
        SynthKind(data.kind)
    except ValueError:
        raise ConfigError(
            f"data.kind must be one of {[k.value for k in SynthKind]}"
        ) from None

    out_dir = _to_optional_str(str(get("run", "out_dir", base.out_dir)))
    return RunConfig(jet=jet, train=train, data=data, out_dir=out_dir)


def read_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_run_config(path.read_text())


def parse_dataset_arg(text: str, base: Optional[DataSpec] = None) -> DataSpec:
    """Dataset reference for the command line.

    Either a CIFAR-10 batch directory, or `synth:<kind>[,key=value...]`
    with keys n, seed, constant, amplitude, max_blobs.
    """
    base = base or DataSpec()
    if not text.startswith("synth:"):
        return replace(base, source="cifar10", path=text)
    body = text[len("synth:"):]
    kind, _, rest = body.partition(",")
    try:
        SynthKind(kind)
    except ValueError:
        raise ConfigError(f"unknown synthetic kind {kind!r}") from None
    spec = replace(base, source="synthetic", kind=kind, path=None)
    if rest:
        for pair in rest.split(","):
            key, sep, value = pair.partition("=")
            if not sep or key not in {"n", "seed", "constant", "amplitude", "max_blobs"}:
                raise ConfigError(f"bad synthetic dataset option {pair!r}")
            spec = replace(spec, **{key: _to_int(value, f"dataset.{key}")})
    return spec


# ---------------------------------------------------------------------------
# checkpoint bridging

_OPT_STEP_KEY = "optimizer.t"


def training_checkpoint(run: RunConfig, model: JetModel, opt: Optional[OptState],
                        step: int) -> CheckpointState:
    state = CheckpointState(config_text=canonical_text(run), step=step)
    for p in model.parameters():
        state.add(f"model.{p.name}", p.data.copy())
    if opt is not None:
        state.add(_OPT_STEP_KEY, np.asarray(opt.t, dtype=np.int64))
        for name, value in opt.m.items():
            state.add(f"optimizer.m.{name}", value.copy())
        for name, value in opt.v.items():
            state.add(f"optimizer.v.{name}", value.copy())
    return state


def restore_checkpoint(path) -> tuple[RunConfig, JetModel, Optional[OptState], int]:
    """Rebuild the run config and model (and optimizer state, if saved)."""
    ck = load_checkpoint(path)
    run = parse_run_config(ck.config_text)
    model = build_jet(run.jet)
    registry = model.parameter_registry()
    stored = {k[len("model."):] for k in ck.tensors if k.startswith("model.")}
    missing = sorted(set(registry) - stored)
    surplus = sorted(stored - set(registry))
    if missing or surplus:
        raise DataFormatError(
            f"{path}: parameter table does not match the configured model "
            f"(missing {missing[:3]}, surplus {surplus[:3]})"
        )
    for name, param in registry.items():
        param.assign(ck.tensors[f"model.{name}"])
    opt = None
    if _OPT_STEP_KEY in ck.tensors:
        opt = OptState.for_parameters(model.parameters())
        opt.t = int(ck.tensors[_OPT_STEP_KEY])
        for name in registry:
            opt.m[name][...] = ck.tensors[f"optimizer.m.{name}"]
            opt.v[name][...] = ck.tensors[f"optimizer.v.{name}"]
    return run, model, opt, ck.step
