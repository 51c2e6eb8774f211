"""natseg: a self-contained differentiable road-segmentation engine.

numpy-backed 4-D tensors with tape autodiff, hand-written convolution and
neighborhood-attention kernels, residual U-shaped model assembly, losses,
metrics, an Adam training loop and binary checkpoints.
"""

from .attention import (
    AttentionConfig,
    AttentionParams,
    NeighborhoodIndex,
    attention_param_count,
    attention_weights,
    build_neighborhood_index,
    neighborhood_attention,
)
from .data import (
    SamplePair,
    SynthConfig,
    draw_line,
    extract_patches,
    generate_synthetic,
    load_image,
    load_split,
    load_tile_pair,
    save_image,
    save_mask,
    split,
    write_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateStatsError,
    GraphError,
    MetricError,
    NatsegError,
    ShapeError,
    TrainingAborted,
)
from .hetconv import (
    HetConvLayer,
    ResidualUnit,
    hetconv_forward,
    param_count,
    residual_unit_forward,
)
from .model import (
    LayerSummaryRow,
    Model,
    ModelConfig,
    build_model,
    render_summary_csv,
    render_summary_text,
    summarize,
    total_param_count,
)
from .nnops import (
    BatchNormState,
    Conv2dParams,
    batch_norm,
    conv2d,
    conv_output_size,
    pointwise_conv,
    relu,
    sigmoid,
    softmax_lastdim,
    upsample_nearest2x,
)
from .objectives import (
    ConfusionCounts,
    MetricsReport,
    bce_loss,
    confusion,
    evaluate,
    prf_dice,
    roc_auc,
    roc_auc_per_image,
    soft_dice,
    soft_iou_loss,
    thresholded_dice,
)
from .tensor import (
    GradCheckReport,
    Tape,
    Tensor,
    backward,
    concat_channels,
    elementwise_add,
    elementwise_mul,
    full,
    grad_check,
    he_normal,
    mean_all,
    ones,
    set_float64,
    slice_channels,
    sum_all,
    uniform,
    zeros,
)
from .training import (
    AdamState,
    Checkpoint,
    TrainConfig,
    TrainLog,
    adam_step,
    evaluate_samples,
    load_checkpoint,
    resume_training,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
