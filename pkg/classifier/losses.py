import torch
import torch.nn.functional as F

from core.exceptions import LabelError


def check_targets(targets: torch.Tensor, classes: int):
    """0-based targets must index the logits."""
    if targets.numel() and (targets.min() < 0 or targets.max() >= classes):
        raise LabelError(f"labels must lie in [1, {classes}], got {targets.min().item() + 1}..{targets.max().item() + 1}")


def batch_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over a batch of 0-based targets."""
    check_targets(targets, logits.shape[-1])
    return F.cross_entropy(logits, targets)


def cross_entropy(logits: torch.Tensor, label: int) -> torch.Tensor:
    """-log softmax(logits)[label] for one sample with a 1-based label."""
    classes = logits.shape[-1]
    if not 1 <= int(label) <= classes:
        raise LabelError(f"label {label} outside [1, {classes}]")
    target = torch.tensor([int(label) - 1])
    return F.cross_entropy(logits.reshape(1, classes), target)
