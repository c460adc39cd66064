"""
psmamba_core
~~~~~~~~~~~~
Progressive split state-space restoration networks on a small numpy
autograd engine.

Public surface
--------------
Every public symbol is re-exported here so callers never import from
sub-modules directly::

    from psmamba_core import ModelConfig, RestoreTask, build_hierarchy, hierarchy_forward

Sub-module summary
------------------
:mod:`psmamba_core.tensor`
    Tensor, graph construction, precision / deterministic / no_grad modes,
    MAC counting.
:mod:`psmamba_core.functional`
    Differentiable feature-map ops (conv2d, layer_norm, pooling, padding...).
:mod:`psmamba_core.ssm`
    Diagonal linear state-space scan (JIT kernels in :mod:`~psmamba_core.kernels`)
    and impulse-response / decay diagnostics.
:mod:`psmamba_core.partition`
    Split / merge, patch rasters and the adjacency-distortion report.
:mod:`psmamba_core.block` / :mod:`psmamba_core.network`
    The split block and the progressive hierarchy.
:mod:`psmamba_core.checkpoint`
    Binary checkpoint format.
:mod:`psmamba_core.losses`, :mod:`psmamba_core.optim`, :mod:`psmamba_core.degrade`,
:mod:`psmamba_core.metrics`, :mod:`psmamba_core.data`, :mod:`psmamba_core.train`
    Everything needed to train and evaluate at desk scale.
:mod:`psmamba_core.gradcheck`
    Finite-difference gradient oracle.
"""

from __future__ import annotations

# --- Blocks and hierarchy ---------------------------------------------------
from psmamba_core.block import (
    BlockParams,
    Bottleneck,
    LayerNormParams,
    block_forward,
    channel_attention,
    conv_preprocess,
    dual_attention,
    gated_fusion,
    patch_mamba_core,
    spatial_attention,
)

# --- Checkpoints ------------------------------------------------------------
from psmamba_core.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    apply_checkpoint,
    load_checkpoint,
    load_model,
    read_records,
    restore_store,
    save_checkpoint,
    write_records,
)

# --- Settings ---------------------------------------------------------------
from psmamba_core.config import Settings, settings

# --- Data -------------------------------------------------------------------
from psmamba_core.data import (
    LoadedImage,
    center_crop,
    list_images,
    load_folder,
    load_image,
    random_crop,
    save_image,
    split_holdout,
    synthesize_texture,
    write_synthetic_corpus,
)
from psmamba_core.degrade import add_noise, area_downsample, augment, degrade, mod_crop

# --- Exceptions -------------------------------------------------------------
from psmamba_core.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GradcheckError,
    PartitionError,
    PSMambaError,
    ShapeError,
)

# --- Ops --------------------------------------------------------------------
from psmamba_core.functional import (
    ConvKernel,
    PadRecord,
    add,
    channel_max,
    channel_mean,
    concat,
    conv2d,
    conv2d_backward,
    crop,
    global_avg_pool,
    layer_norm,
    linear,
    mul,
    pad_to_multiple,
    pixel_shuffle,
    place,
    relu,
    reshape,
    resize_bilinear,
    scale,
    scale_channels,
    scale_pixels,
    sigmoid,
    split_axis,
    sub,
    take,
    window,
)
from psmamba_core.gradcheck import GradcheckReport, gradcheck

# --- Logging ----------------------------------------------------------------
from psmamba_core.logging import JsonFormatter, configure_logging
from psmamba_core.losses import charbonnier_loss, l1_loss, task_loss
from psmamba_core.metrics import PSNR_CAP_DB, psnr, ssim

# --- Models -----------------------------------------------------------------
from psmamba_core.models import (
    LossKind,
    ModelConfig,
    RestoreTask,
    SplitLevel,
    TaskKind,
    TrainConfig,
)
from psmamba_core.network import (
    HierarchyParams,
    Stage,
    build_hierarchy,
    count_parameters,
    hierarchy_forward,
    named_parameters,
)
from psmamba_core.optim import ParamStore, adam_step

# --- Partitions -------------------------------------------------------------
from psmamba_core.partition import (
    AdjacencyReport,
    AdjacencyStats,
    PartitionSpec,
    PatchSet,
    adjacency_distortion,
    distortion_table,
    fold,
    lcm_grid,
    merge,
    split,
    unfold,
)

# --- State-space scan -------------------------------------------------------
from psmamba_core.ssm import (
    ChannelDecay,
    DecayReport,
    SSMGrads,
    SSMParams,
    TokenSequence,
    decay_profile,
    envelope_log10,
    impulse_response,
    log_impulse_response,
    scan_macs,
    ssm_scan,
    ssm_scan_backward,
    transition,
)

# --- Tensors ----------------------------------------------------------------
from psmamba_core.tensor import (
    MacCounter,
    Tensor,
    as_tensor,
    count_macs,
    deterministic,
    get_dtype,
    is_deterministic,
    make_node,
    no_grad,
    parameter,
    precision,
    set_deterministic,
    set_precision,
)

# --- Training ---------------------------------------------------------------
from psmamba_core.train import (
    AblationRow,
    AblationTable,
    TrainResult,
    Validation,
    make_batch,
    prepare_validation,
    restore_image,
    run_channel_ablation,
    run_split_ablation,
    train,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    # Version
    "__version__",
    # Tensors
    "MacCounter",
    "Tensor",
    "as_tensor",
    "count_macs",
    "deterministic",
    "get_dtype",
    "is_deterministic",
    "make_node",
    "no_grad",
    "parameter",
    "precision",
    "set_deterministic",
    "set_precision",
    # Ops
    "ConvKernel",
    "PadRecord",
    "add",
    "channel_max",
    "channel_mean",
    "concat",
    "conv2d",
    "conv2d_backward",
    "crop",
    "global_avg_pool",
    "layer_norm",
    "linear",
    "mul",
    "pad_to_multiple",
    "pixel_shuffle",
    "place",
    "relu",
    "reshape",
    "resize_bilinear",
    "scale",
    "scale_channels",
    "scale_pixels",
    "sigmoid",
    "split_axis",
    "sub",
    "take",
    "window",
    # State-space scan
    "ChannelDecay",
    "DecayReport",
    "SSMGrads",
    "SSMParams",
    "TokenSequence",
    "decay_profile",
    "envelope_log10",
    "impulse_response",
    "log_impulse_response",
    "scan_macs",
    "ssm_scan",
    "ssm_scan_backward",
    "transition",
    # Partitions
    "AdjacencyReport",
    "AdjacencyStats",
    "PartitionSpec",
    "PatchSet",
    "adjacency_distortion",
    "distortion_table",
    "fold",
    "lcm_grid",
    "merge",
    "split",
    "unfold",
    # Blocks and hierarchy
    "BlockParams",
    "Bottleneck",
    "HierarchyParams",
    "LayerNormParams",
    "Stage",
    "block_forward",
    "build_hierarchy",
    "channel_attention",
    "conv_preprocess",
    "count_parameters",
    "dual_attention",
    "gated_fusion",
    "hierarchy_forward",
    "named_parameters",
    "patch_mamba_core",
    "spatial_attention",
    # Checkpoints
    "FORMAT_VERSION",
    "MAGIC",
    "Checkpoint",
    "apply_checkpoint",
    "load_checkpoint",
    "load_model",
    "read_records",
    "restore_store",
    "save_checkpoint",
    "write_records",
    # Training
    "AblationRow",
    "AblationTable",
    "GradcheckReport",
    "PSNR_CAP_DB",
    "ParamStore",
    "TrainResult",
    "Validation",
    "adam_step",
    "add_noise",
    "area_downsample",
    "augment",
    "charbonnier_loss",
    "degrade",
    "gradcheck",
    "l1_loss",
    "make_batch",
    "mod_crop",
    "prepare_validation",
    "psnr",
    "restore_image",
    "run_channel_ablation",
    "run_split_ablation",
    "ssim",
    "task_loss",
    "train",
    "validate",
    # Data
    "LoadedImage",
    "center_crop",
    "list_images",
    "load_folder",
    "load_image",
    "random_crop",
    "save_image",
    "split_holdout",
    "synthesize_texture",
    "write_synthetic_corpus",
    # Models
    "LossKind",
    "ModelConfig",
    "RestoreTask",
    "SplitLevel",
    "TaskKind",
    "TrainConfig",
    # Errors
    "CheckpointError",
    "ConfigError",
    "DataError",
    "GradcheckError",
    "PSMambaError",
    "PartitionError",
    "ShapeError",
    # Settings and logging
    "JsonFormatter",
    "Settings",
    "configure_logging",
    "settings",
]
