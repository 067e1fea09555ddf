"""Multiple-hypothesis spatio-temporal alignment of object anchors.

The library propagates instance anchors across ego-motion and a time step
under a bank of kinematic models, fuses the hypotheses with a learned
decoder, and benchmarks the result against classical single-model and
IMM-filter baselines on a synthetic trajectory suite.
"""

__version__ = "0.1.0"

from .align import AlignConfig, AlignerParams, AlignmentResult, InstanceBank, align
from .baselines import (
    ImmState,
    ImplicitParams,
    KalmanState,
    anchor_to_state,
    imm_estimate,
    imm_step,
    implicit_sta,
    kf_predict,
    kf_update,
    make_imm,
    single_model_sta,
    state_to_anchor,
)
from .config import ExperimentConfig, derive_seed
from .errors import (
    ConfigError,
    ContractError,
    DegenerateYawError,
    HypalignError,
    NumericalError,
    ShapeError,
    TrainingError,
    ValidationError,
)
from .geometry import (
    ANCHOR_DIM,
    EgoTransform,
    build_augmented,
    compose,
    ego_step,
    invert,
    make_anchor,
    warp_anchor,
    world_to_ego,
    yaw_normalize,
)
from .harness import (
    AlignerMethod,
    EvalReport,
    ImplicitMethod,
    SingleModelMethod,
    TrainOptions,
    evaluate,
    measure_latency,
    train_aligner,
    train_implicit,
    weight_report,
)
from .motion import (
    MODEL_ORDER,
    LatentKinematics,
    MotionModelKind,
    integrate_oracle,
    predict,
)
from .sim import (
    NoiseConfig,
    Observations,
    Scene,
    SimConfig,
    WindowEncoder,
    generate_scene,
    gt_in_ego,
    observe,
    query_window,
)
from .tensor import NUMPY_OPS, TENSOR_OPS, Adam, Tensor, grad_check, no_grad

__all__ = [
    "ANCHOR_DIM",
    "Adam",
    "AlignConfig",
    "AlignerMethod",
    "AlignerParams",
    "AlignmentResult",
    "ConfigError",
    "ContractError",
    "DegenerateYawError",
    "EgoTransform",
    "EvalReport",
    "ExperimentConfig",
    "HypalignError",
    "ImmState",
    "ImplicitMethod",
    "ImplicitParams",
    "InstanceBank",
    "KalmanState",
    "LatentKinematics",
    "MODEL_ORDER",
    "MotionModelKind",
    "NUMPY_OPS",
    "NoiseConfig",
    "NumericalError",
    "Observations",
    "Scene",
    "ShapeError",
    "SimConfig",
    "SingleModelMethod",
    "TENSOR_OPS",
    "Tensor",
    "TrainOptions",
    "TrainingError",
    "ValidationError",
    "WindowEncoder",
    "align",
    "anchor_to_state",
    "build_augmented",
    "compose",
    "derive_seed",
    "ego_step",
    "evaluate",
    "generate_scene",
    "grad_check",
    "gt_in_ego",
    "imm_estimate",
    "imm_step",
    "implicit_sta",
    "integrate_oracle",
    "invert",
    "kf_predict",
    "kf_update",
    "make_anchor",
    "make_imm",
    "measure_latency",
    "no_grad",
    "observe",
    "predict",
    "query_window",
    "single_model_sta",
    "state_to_anchor",
    "train_aligner",
    "train_implicit",
    "warp_anchor",
    "weight_report",
    "world_to_ego",
    "yaw_normalize",
]
