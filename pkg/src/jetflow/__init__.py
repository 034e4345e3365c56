"""Coupling-based normalizing flow with transformer backbones.

Exact-likelihood training in bits per dimension, closed-form inversion
for sampling, and a built-in verification suite.  See the `jet` command
line tool for the operator surface.
"""

from .coupling import (
    SCALE_CAP,
    CouplingLayer,
    CouplingMode,
    CouplingResult,
    couple_forward,
    couple_inverse,
    scale_bias,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DimensionError,
    DTypeError,
    JetError,
    NumericError,
    UsageError,
)
from .model import (
    ALL_CHANNEL,
    RESCALE_BPD,
    BackboneSpec,
    FlowResult,
    JetConfig,
    JetModel,
    SpatialPolicy,
    build_jet,
    flow_forward,
    flow_inverse,
    nll_bpd,
    sample,
    schedule,
)
from .numerics import (
    Parameter,
    PrecisionMode,
    Tensor,
    backward,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    sigmoid,
)
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import (
    DataSpec,
    RunConfig,
    canonical_text,
    parse_run_config,
    read_run_config,
    restore_checkpoint,
    training_checkpoint,
)
from .data import Dataset, SynthKind, load_cifar10, synth_dataset, write_ppm
from .patches import PatchGeometry, patchify, unpatchify
from .splitting import (
    IDENTITY_PLAN_SEED,
    SplitKind,
    SplitPlan,
    build_channel_plan,
    build_spatial_plan,
    merge,
    split,
)
from .training import (
    PRESETS,
    OptState,
    TrainConfig,
    TrainState,
    adamw_step,
    cosine_lr,
    dequantize,
    eval_bpd,
    train,
)
from .verify import CheckResult, run_verify
from .vit import ViTConfig, ViTParams, init_vit, vit_forward

__version__ = "0.1.0"
