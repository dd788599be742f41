"""One interface over the three confidence techniques."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..metrics import EdVector
from .base import TECHNIQUES, JointRanking, MeshVerdict, label_arrays
from .features import FeatureStats
from .linear import LinearJointModel, fit_linear, predict_linear
from .mlp import MC_LAYERS, WJC_LAYERS, MlpModel, TrainConfig, mlp_forward, train_mlp
from .raw import raw_mesh_rule, raw_worst_joint

DEFAULT_THRESHOLD = 10.0


@dataclass
class Artifacts:
    """Whatever a technique needs at inference time.

    ``stats`` supplies the undetected-joint fill values for the raw and
    linear techniques; the MLPs carry their own copy in ``input_stats``.
    """

    threshold: float = DEFAULT_THRESHOLD
    stats: Optional[FeatureStats] = None
    linear: Optional[LinearJointModel] = None
    mc: Optional[MlpModel] = None
    wjc: Optional[MlpModel] = None


def classify(technique: str, artifacts: Artifacts, ed: EdVector) -> Tuple[MeshVerdict, JointRanking]:
    fill = artifacts.stats.fill if artifacts.stats is not None else None
    if technique == "raw":
        return raw_mesh_rule(ed, artifacts.threshold), raw_worst_joint(ed, fill)
    if technique == "linear":
        if artifacts.linear is None:
            raise ValueError("linear technique needs a fitted linear model")
        if not ed.mask.any():
            raise ValueError("no valid joints")
        se_hat = predict_linear(artifacts.linear, ed)
        verdict = raw_mesh_rule(se_hat, artifacts.threshold, technique="linear")
        if fill is not None:
            se_hat = predict_linear(artifacts.linear, ed, fill)
        return verdict, raw_worst_joint(se_hat)
    if technique == "mlp":
        if artifacts.mc is None or artifacts.wjc is None:
            raise ValueError("mlp technique needs both the mesh and worst-joint classifiers")
        if artifacts.mc.head != "binary" or artifacts.wjc.head != "softmax":
            raise ValueError("mesh classifier must be binary and worst-joint classifier softmax")
        p_bad = mlp_forward(artifacts.mc, _features(artifacts.mc, ed))
        probs = mlp_forward(artifacts.wjc, _features(artifacts.wjc, ed))
        verdict = MeshVerdict("bad" if p_bad >= 0.5 else "good", float(p_bad), "mlp")
        return verdict, JointRanking.from_scores(probs)
    raise ValueError(f"unknown technique {technique!r}; expected one of {TECHNIQUES}")


def _features(model: MlpModel, ed: EdVector) -> np.ndarray:
    if model.input_stats is None:
        raise ValueError("MLP model has no input statistics")
    return model.input_stats.transform(ed.values, ed.mask)


def train_mesh_classifier(ed, mask, se, threshold, val=None, config: TrainConfig = TrainConfig()):
    """Fit feature stats on the training ED, derive labels from SE, train the 14-10-8-6-1 network."""
    return _train(MC_LAYERS, "binary", ed, mask, se, threshold, val, config, pick=0)


def train_worst_joint_classifier(ed, mask, se, val=None, config: TrainConfig = TrainConfig()):
    return _train(WJC_LAYERS, "softmax", ed, mask, se, 0.0, val, config, pick=1)


def _train(layers, head, ed, mask, se, threshold, val, config, pick):
    stats = FeatureStats.fit(ed, mask)
    y = label_arrays(se, threshold)[pick].astype(np.int64)
    xv = yv = None
    if val is not None and len(val[0]):
        ved, vmask, vse = val
        xv = stats.transform(ved, vmask)
        yv = label_arrays(vse, threshold)[pick].astype(np.int64)
    model, hist = train_mlp(layers, head, stats.transform(ed, mask), y, xv, yv, config)
    model.input_stats = stats
    if head == "binary":
        model.config["threshold"] = float(threshold)
    return model, hist


def fit_artifacts(train, threshold=DEFAULT_THRESHOLD, val=None, config: TrainConfig = TrainConfig(), techniques=TECHNIQUES):
    """Fit everything the requested techniques need from (ed, mask, se) training arrays."""
    ed, mask, se = train
    if not len(ed):
        raise ValueError("empty training set")
    art = Artifacts(threshold=threshold, stats=FeatureStats.fit(ed, mask))
    if "linear" in techniques:
        art.linear = fit_linear(ed, se, mask)
    if "mlp" in techniques:
        art.mc, _ = train_mesh_classifier(ed, mask, se, threshold, val, config)
        art.wjc, _ = train_worst_joint_classifier(ed, mask, se, val, config)
    return art
