"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LinearModel, cross_entropy

DEFAULT_STEP = 1e-5
# entries whose gradient magnitude sits below this are compared on an
# absolute scale; a pure ratio would amplify finite-difference noise
SMALL_GRAD_FLOOR = 1e-4


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    step: float

    def as_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "per_param": dict(self.per_param),
            "step": self.step,
        }


def _loss_only(model, x: np.ndarray, y: np.ndarray, weight_decay: float) -> float:
    if isinstance(model, LinearModel):
        loss = cross_entropy(model.forward(x), y)
        if weight_decay:
            loss += 0.5 * weight_decay * float(np.sum(model.weight**2))
        return loss
    logits, _ = model.forward_train(x, None)
    loss = cross_entropy(logits, y)
    if weight_decay:
        penalty = sum(
            float(np.sum(v**2))
            for k, v in model.parameters().items()
            if k.startswith("w")
        )
        loss += 0.5 * weight_decay * penalty
    return loss


def gradient_check(
    model,
    x: np.ndarray,
    y: np.ndarray,
    step: float = DEFAULT_STEP,
    weight_decay: float = 0.0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, entry by entry.

    The model is evaluated in training mode with dropout disabled so the
    same deterministic graph is differentiated both ways.  Relative error
    uses max(|analytic|, |numeric|, floor) in the denominator; the floor
    keeps near-zero gradients from turning round-off into spurious blowups.
    The model state is restored before returning.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("gradient check needs a non-empty batch")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")

    saved = model.state()
    try:
        _, analytic = model.loss_and_grads(x, y, weight_decay=weight_decay,
                                           dropout_rng=None)
        per_param: dict[str, float] = {}
        for name, param in model.parameters().items():
            flat = param.reshape(-1)
            grad = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                plus = _loss_only(model, x, y, weight_decay)
                flat[i] = orig - step
                minus = _loss_only(model, x, y, weight_decay)
                flat[i] = orig
                numeric = (plus - minus) / (2.0 * step)
                denom = max(abs(grad[i]), abs(numeric), SMALL_GRAD_FLOOR)
                worst = max(worst, abs(grad[i] - numeric) / denom)
            per_param[name] = worst
    finally:
        model.load_state(saved)

    return GradCheckReport(
        max_rel_error=max(per_param.values()),
        per_param=per_param,
        step=step,
    )
