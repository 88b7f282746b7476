"""
Test-set evaluation and the class-accuracy report (text table and JSON).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from core.exceptions import ConfigError, ShapeMismatchError
from core.training import batch_order
from evaluation.metrics import ConfusionMatrix, Metrics, metrics
from factoformer_project.tracing import trace_function
from hsi.datasets import SampleSet

EVAL_BATCH = 256


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    scores: Metrics
    class_names: list = field(default_factory=list)

    @property
    def support(self):
        return self.confusion.counts.sum(axis=1)


def predict_labels(model, patches: torch.Tensor) -> np.ndarray:
    """1-based predictions from anything that maps (n, S, S, B) patches to (n, C) logits."""
    with torch.no_grad():
        logits = model(patches)
    return (logits.argmax(dim=-1) + 1).cpu().numpy()


@trace_function(name='evaluate', attributes={'stage': 'evaluate'})
def evaluate(model, test: SampleSet, classes: int, class_names=None, batch_size=EVAL_BATCH) -> EvaluationReport:
    if test.labels is None or len(test) == 0:
        raise ConfigError("evaluation needs a non-empty labeled test set")
    if hasattr(model, 'eval'):
        model.eval()
    cm = ConfusionMatrix.empty(classes)
    for indices in batch_order(len(test), batch_size):
        patches, targets = test.batch(indices)
        predicted = predict_labels(model, patches)
        if predicted.shape != (len(indices),):
            raise ShapeMismatchError(f"model returned {predicted.shape} predictions for {len(indices)} samples")
        cm = cm + ConfusionMatrix.from_predictions(targets.numpy() + 1, predicted, classes)
    names = list(class_names) if class_names else [f'Class {c}' for c in range(1, classes + 1)]
    return EvaluationReport(confusion=cm, scores=metrics(cm), class_names=names)


def render_report(report: EvaluationReport, title=None) -> str:
    """Per-class accuracy and OA/AA in percent (2 decimals), kappa to 4 decimals."""
    width = max([len(name) for name in report.class_names] + [len('Kappa')])
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'No.':>4}  {'Class':<{width}}  {'Test':>7}  {'Acc (%)':>8}")
    for index, (name, support, accuracy) in enumerate(
        zip(report.class_names, report.support, report.scores.per_class), start=1
    ):
        lines.append(f"{index:>4}  {name:<{width}}  {support:>7d}  {100 * accuracy:>8.2f}")
    lines.append(f"{'':>4}  {'Total':<{width}}  {report.confusion.total:>7d}")
    lines.append(f"{'':>4}  {'OA (%)':<{width}}  {'':>7}  {100 * report.scores.overall_accuracy:>8.2f}")
    lines.append(f"{'':>4}  {'AA (%)':<{width}}  {'':>7}  {100 * report.scores.average_accuracy:>8.2f}")
    lines.append(f"{'':>4}  {'Kappa':<{width}}  {'':>7}  {report.scores.kappa:>8.4f}")
    return '\n'.join(lines)


def report_json(report: EvaluationReport, seed=None, config_hash=None) -> dict:
    return {
        **report.scores.to_dict(),
        'classes': report.class_names,
        'support': [int(value) for value in report.support],
        'confusion': report.confusion.counts.tolist(),
        'total': report.confusion.total,
        'seed': seed,
        'config_hash': config_hash,
    }


def write_report(report: EvaluationReport, out_dir, name, seed=None, config_hash=None, title=None):
    """``reports/<name>.txt`` and ``reports/<name>.json`` under ``out_dir``."""
    reports = Path(out_dir) / 'reports'
    reports.mkdir(parents=True, exist_ok=True)
    text = reports / f'{name}.txt'
    text.write_text(render_report(report, title) + '\n')
    data = reports / f'{name}.json'
    data.write_text(json.dumps(report_json(report, seed, config_hash), indent=2))
    return text, data
