"""Ground-truth labels, accuracy metrics and the technique ablation table."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .estimators import TECHNIQUES, Artifacts, JointRanking, MeshVerdict, TrainConfig, classify, fit_artifacts, label_arrays
from .joints import Joint
from .metrics import EdVector, SeVector, feature_matrix, pearson_from_arrays
from .poses import Dataset

Prediction = Optional[Tuple[MeshVerdict, JointRanking]]
METRICS = ("mesh_acc", "wj_r1", "wj_r3")
METRIC_LABELS = {"mesh_acc": "Mesh", "wj_r1": "WJ-R1", "wj_r3": "WJ-R3"}
TECHNIQUE_LABELS = {"raw": "ED", "linear": "L. Regressor", "mlp": "Classifier"}


@dataclass(frozen=True, eq=False)
class SampleLabels:
    mesh_bad: bool
    worst_joint: Joint
    se: SeVector


def build_labels(dataset: Dataset, threshold: float) -> List[SampleLabels]:
    _, _, se = feature_matrix(dataset)
    bad, worst = label_arrays(se, threshold)
    return [SampleLabels(bool(b), Joint(int(w)), SeVector.full(s)) for b, w, s in zip(bad, worst, se)]


@dataclass(frozen=True)
class TechniqueScores:
    technique: str
    mesh_acc: float
    wj_r1: float
    wj_r3: float
    n: int


@dataclass
class EvalReport:
    dataset: str
    variant: str
    pcc: Optional[float]
    n: int
    n_excluded: int
    scores: Dict[str, TechniqueScores] = field(default_factory=dict)

    def _primary(self) -> TechniqueScores:
        return self.scores.get("mlp") or next(iter(self.scores.values()))

    @property
    def mesh_acc(self) -> float:
        return self._primary().mesh_acc

    @property
    def wj_r1(self) -> float:
        return self._primary().wj_r1

    @property
    def wj_r3(self) -> float:
        return self._primary().wj_r3

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "variant": self.variant,
            "pcc": self.pcc,
            "n": self.n,
            "n_excluded": self.n_excluded,
            "techniques": {t: {m: getattr(s, m) for m in METRICS + ("n",)} for t, s in self.scores.items()},
        }

    def to_text(self) -> str:
        pcc = "undefined" if self.pcc is None else f"{self.pcc:.3f}"
        lines = [
            f"dataset {self.dataset}  variant {self.variant}  n {self.n}  excluded(no detections) {self.n_excluded}  PCC {pcc}",
            f"{'technique':<14}{'Mesh':>8}{'WJ-R1':>8}{'WJ-R3':>8}",
        ]
        for t, s in self.scores.items():
            lines.append(f"{t:<14}{s.mesh_acc:>7.1f}%{s.wj_r1:>7.1f}%{s.wj_r3:>7.1f}%")
        return "\n".join(lines) + "\n"


def _percent(hits: int, n: int) -> float:
    return 100.0 * hits / n


def evaluate(
    predictions: Mapping[str, Sequence[Prediction]],
    labels: Sequence[SampleLabels],
    dataset: str = "dataset",
    variant: str = "regular",
    pcc: Optional[float] = None,
) -> EvalReport:
    """Score each technique's predictions against the labels.

    A ``None`` prediction marks a sample with no detected joints; such samples
    are left out of every metric and counted in ``n_excluded``.
    """
    if not labels:
        raise ValueError("empty evaluation set")
    report = None
    for technique, preds in predictions.items():
        if len(preds) != len(labels):
            raise ValueError(f"{technique}: {len(preds)} predictions for {len(labels)} labels")
        used = [(p, lab) for p, lab in zip(preds, labels) if p is not None]
        excluded = len(labels) - len(used)
        if report is None:
            report = EvalReport(dataset, variant, pcc, len(used), excluded)
        elif excluded != report.n_excluded:
            raise ValueError("techniques disagree on which samples are excluded")
        if not used:
            raise ValueError("no evaluable samples")
        mesh = sum((v.label == "bad") == lab.mesh_bad for (v, _), lab in used)
        r1 = sum(int(r.order[0]) == int(lab.worst_joint) for (_, r), lab in used)
        r3 = sum(int(lab.worst_joint) in r.order[:3] for (_, r), lab in used)
        n = len(used)
        report.scores[technique] = TechniqueScores(technique, _percent(mesh, n), _percent(r1, n), _percent(r3, n), n)
    if report is None:
        raise ValueError("no techniques to evaluate")
    return report


def predict(technique: str, artifacts: Artifacts, ed: np.ndarray, mask: np.ndarray) -> List[Prediction]:
    out: List[Prediction] = []
    for values, m in zip(ed, mask):
        out.append(classify(technique, artifacts, EdVector(values, m)) if m.any() else None)
    return out


def evaluate_dataset(dataset: Dataset, artifacts: Artifacts, techniques=TECHNIQUES, variant: str = "regular") -> EvalReport:
    ed, mask, se = feature_matrix(dataset)
    labels = build_labels(dataset, artifacts.threshold)
    pcc = pearson_from_arrays(ed, se, mask).mean_r
    preds = {t: predict(t, artifacts, ed, mask) for t in techniques}
    return evaluate(preds, labels, dataset.name, variant, None if np.isnan(pcc) else pcc)


@dataclass
class AblationTable:
    """Techniques as columns; rows are (variant, metric) pairs."""

    dataset: str
    techniques: Tuple[str, ...]
    reports: Dict[str, EvalReport]

    def value(self, variant: str, metric: str, technique: str) -> float:
        return getattr(self.reports[variant].scores[technique], metric)

    def to_text(self) -> str:
        head = f"{'variant':<10}{'metric':<8}" + "".join(f"{TECHNIQUE_LABELS.get(t, t):>14}" for t in self.techniques)
        lines = [f"dataset {self.dataset}", head]
        for variant, rep in self.reports.items():
            for metric in METRICS:
                cells = "".join(f"{getattr(rep.scores[t], metric):>14.1f}" for t in self.techniques)
                lines.append(f"{variant:<10}{METRIC_LABELS[metric]:<8}{cells}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "techniques": list(self.techniques),
            "variants": {v: r.to_dict() for v, r in self.reports.items()},
        }


def ablation_matrix(variants: Mapping[str, Dataset], artifacts: Artifacts, techniques=TECHNIQUES, name: str = "dataset") -> AblationTable:
    reports = {v: evaluate_dataset(d, artifacts, techniques, v) for v, d in variants.items()}
    return AblationTable(name, tuple(techniques), reports)


def format_report(obj, fmt: str) -> str:
    if fmt == "machine":
        return json.dumps(obj.to_dict(), indent=2) + "\n"
    return obj.to_text()


def synthetic_benchmark(
    seed: int = 0,
    n_train: int = 10000,
    n_test: int = 2000,
    occlusion_rate: float = 0.5,
    target_rho: float = 0.7,
    threshold: float = 10.0,
    val_fraction: float = 0.1,
    config: Optional[TrainConfig] = None,
    techniques=TECHNIQUES,
) -> AblationTable:
    """Train every technique on synthetic data and tabulate them on regular and occluded test sets.

    The last ``val_fraction`` of the training samples is held out for early
    stopping; test sets draw from disjoint per-sample streams.
    """
    from .synth import SynthConfig, generate

    config = config or TrainConfig(seed=seed)
    base = dict(seed=seed, target_rho=target_rho)
    train = generate(SynthConfig(n_samples=n_train, occlusion_rate=occlusion_rate, **base))
    n_val = int(round(n_train * val_fraction))
    ed, mask, se = feature_matrix(train)
    cut = n_train - n_val
    artifacts = fit_artifacts(
        (ed[:cut], mask[:cut], se[:cut]),
        threshold,
        val=(ed[cut:], mask[cut:], se[cut:]) if n_val else None,
        config=config,
        techniques=techniques,
    )
    tests = {
        "regular": generate(SynthConfig(n_samples=n_test, occlusion_rate=0.0, split="test", **base), start_index=n_train),
        "occluded": generate(
            SynthConfig(n_samples=n_test, occlusion_rate=occlusion_rate, split="test", **base), start_index=n_train + n_test
        ),
    }
    return ablation_matrix(tests, artifacts, techniques, name=f"synth-{seed}")
