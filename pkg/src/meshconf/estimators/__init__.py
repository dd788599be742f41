from .base import TECHNIQUES, JointRanking, MeshVerdict, label_arrays
from .features import FeatureStats
from .linear import LinearJointModel, fit_linear, predict_linear
from .mlp import (
    MC_LAYERS,
    WJC_LAYERS,
    MlpModel,
    TrainConfig,
    TrainHistory,
    init_mlp,
    mlp_forward,
    mlp_gradients,
    mlp_loss,
    train_mlp,
)
from .raw import raw_mesh_rule, raw_worst_joint
from .techniques import (
    DEFAULT_THRESHOLD,
    Artifacts,
    classify,
    fit_artifacts,
    train_mesh_classifier,
    train_worst_joint_classifier,
)
