"""Training objectives (differentiable) for occupancy and skinning weights."""

from __future__ import annotations

from ..autodiff import F, Value, as_value


def occupancy_loss(predictions, targets) -> Value:
    """Mean over points of the squared error between probability and 0/1 label."""
    predictions, targets = as_value(predictions), as_value(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"prediction shape {predictions.shape} vs targets {targets.shape}")
    return F.mean(F.square(F.sub(predictions, targets)))


def lbs_weight_loss(predicted, pseudo_gt) -> Value:
    """Mean over points of the L1 distance between weight vectors."""
    predicted, pseudo_gt = as_value(predicted), as_value(pseudo_gt)
    if predicted.shape != pseudo_gt.shape:
        raise ValueError(f"weight shape {predicted.shape} vs targets {pseudo_gt.shape}")
    return F.mean(F.sum(F.abs(F.sub(predicted, pseudo_gt)), axis=-1))
