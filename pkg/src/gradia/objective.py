"""Joint prediction/attention fine-tuning objective.

The total loss is an affine combination over the training batch and the three
adjustable quadrants:

    total = L_train_p
          + alpha * L_UA_p  + (1 - alpha) * L_UA_a
          + beta  * L_UIA_p + (1 - beta)  * L_UIA_a
          + gamma * L_RIA_p + (1 - gamma) * L_RIA_a

Prediction terms are cross-entropy and are always included for the quadrant
samples at their factor weights; attention terms are included only for the
quadrants a study condition activates (C1: none, C2: RIA+UIA, C3: UA+UIA,
C4: all three). Quadrant attention maps are recomputed from the current
parameters for the ground-truth class on every call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import model as model_mod
from .attention import TargetAttentionGrid, grad_cam_tensor, normalize_tensor
from .errors import CapabilityError, DataError, InputError
from .model import Parameters, forward_batch, grad_wrt_params

ADJUSTABLE_QUADRANTS = ("UA", "UIA", "RIA")

CONDITION_ATTENTION_QUADRANTS = {
    "C1": frozenset(),
    "C2": frozenset({"RIA", "UIA"}),
    "C3": frozenset({"UA", "UIA"}),
    "C4": frozenset({"UA", "UIA", "RIA"}),
}


@dataclass(frozen=True)
class BalanceFactors:
    """Per-quadrant weights trading prediction loss (f) against attention loss (1-f)."""

    alpha: float = 0.2  # UA
    beta: float = 0.5  # UIA
    gamma: float = 0.8  # RIA

    def validate(self) -> None:
        for name, value in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if not 0.0 <= value <= 1.0:
                raise InputError(f"balance factor {name}={value} outside [0, 1]")

    def for_quadrant(self, quadrant: str) -> float:
        try:
            return {"UA": self.alpha, "UIA": self.beta, "RIA": self.gamma}[quadrant]
        except KeyError:
            raise InputError(f"no balance factor for quadrant {quadrant!r}") from None


@dataclass
class QuadrantBatch:
    """Instances from one adjustable quadrant: (image, label, target grid) triples."""

    quadrant: str
    instances: list[tuple[np.ndarray, int, TargetAttentionGrid | None]]

    def __post_init__(self):
        if self.quadrant not in ADJUSTABLE_QUADRANTS:
            raise InputError(f"quadrant must be one of {ADJUSTABLE_QUADRANTS}")


@dataclass
class LossBreakdown:
    l_train_p: float
    l_ua_p: float
    l_uia_p: float
    l_ria_p: float
    l_ua_a: float
    l_uia_a: float
    l_ria_a: float
    total: float
    condition: str
    factors: BalanceFactors
    higher_order: bool
    total_tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)
    params: Parameters | None = field(default=None, repr=False, compare=False)


def _ce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    n = logits.shape[-1]
    if bool((labels < 0).any()) or bool((labels >= n).any()):
        raise InputError("label out of range")
    return F.cross_entropy(logits, labels)


def prediction_loss(logits, label) -> float:
    """Mean cross-entropy: -log softmax(logits)[label], averaged over a batch."""
    t = torch.as_tensor(np.asarray(logits, dtype=np.float64)) if not isinstance(
        logits, torch.Tensor
    ) else logits.to(torch.float64)
    if t.dim() == 1:
        t = t.unsqueeze(0)
        labels = torch.as_tensor([int(label)], dtype=torch.long)
    else:
        labels = torch.as_tensor(np.asarray(label), dtype=torch.long)
    return float(_ce(t, labels).item())


def _divergence(m: torch.Tensor, target: torch.Tensor, metric: str) -> torch.Tensor:
    if m.shape != target.shape:
        raise InputError(f"grid shapes differ: {tuple(m.shape)} vs {tuple(target.shape)}")
    if metric == "absolute":
        return (m - target).abs().mean()
    if metric == "squared":
        return ((m - target) ** 2).mean()
    raise InputError(f"unknown divergence metric {metric!r}")


def attention_loss(m, mprime, metric: str = "absolute") -> float:
    """Mean elementwise divergence between an attention map and its target."""
    a = np.asarray(getattr(m, "grid", m), dtype=np.float64)
    b = np.asarray(getattr(mprime, "grid", mprime), dtype=np.float64)
    return float(_divergence(torch.as_tensor(a), torch.as_tensor(b), metric).item())


def _batch_arrays(instances, dtype):
    images = torch.stack(
        [torch.as_tensor(np.asarray(img), dtype=dtype) for img, _, *_ in instances]
    )
    labels = torch.as_tensor([int(lbl) for _, lbl, *_ in instances], dtype=torch.long)
    return images, labels


def gradia_objective(
    params: Parameters,
    train_batch,
    ua: QuadrantBatch | None,
    uia: QuadrantBatch | None,
    ria: QuadrantBatch | None,
    factors: BalanceFactors,
    condition: str,
    *,
    higher_order: bool = True,
    divergence: str = "absolute",
) -> LossBreakdown:
    """Assemble the full objective for one step; batches may be empty."""
    factors.validate()
    if condition not in CONDITION_ATTENTION_QUADRANTS:
        raise InputError(f"unknown condition {condition!r}")
    if divergence not in ("absolute", "squared"):
        raise InputError(f"unknown divergence metric {divergence!r}")
    if higher_order and not model_mod.HIGHER_ORDER_SUPPORTED:
        raise CapabilityError("higher-order differentiation is not available")
    active = CONDITION_ATTENTION_QUADRANTS[condition]
    dtype = params.config.torch_dtype

    total = torch.zeros((), dtype=dtype)
    values = {
        "l_train_p": 0.0,
        "l_ua_p": 0.0,
        "l_uia_p": 0.0,
        "l_ria_p": 0.0,
        "l_ua_a": 0.0,
        "l_uia_a": 0.0,
        "l_ria_a": 0.0,
    }

    if train_batch:
        images, labels = _batch_arrays([(img, lbl) for img, lbl in train_batch], dtype)
        l_train = _ce(forward_batch(params, images).logits, labels)
        values["l_train_p"] = float(l_train.item())
        total = total + l_train

    for slot, batch in (("UA", ua), ("UIA", uia), ("RIA", ria)):
        if batch is None:
            continue
        if batch.quadrant != slot:
            raise InputError(f"batch tagged {batch.quadrant!r} passed in the {slot} slot")
        if not batch.instances:
            continue
        q = batch.quadrant
        f = factors.for_quadrant(q)
        images, labels = _batch_arrays(batch.instances, dtype)
        trace = forward_batch(params, images)
        l_p = _ce(trace.logits, labels)
        values[f"l_{q.lower()}_p"] = float(l_p.item())
        total = total + f * l_p

        attention_weight = 1.0 - f
        if q in active and attention_weight > 0.0:
            targets = []
            for img, lbl, grid in batch.instances:
                if grid is None:
                    raise DataError(f"instance in active quadrant {q} lacks a target grid")
                targets.append(torch.as_tensor(np.asarray(grid.grid), dtype=dtype))
            target = torch.stack(targets)
            cams = grad_cam_tensor(trace, labels, higher_order=higher_order)
            l_a = _divergence(normalize_tensor(cams), target, divergence)
            values[f"l_{q.lower()}_a"] = float(l_a.item())
            total = total + attention_weight * l_a

    return LossBreakdown(
        **values,
        total=float(total.item()),
        condition=condition,
        factors=factors,
        higher_order=higher_order,
        total_tensor=total,
        params=params,
    )


def objective_gradient(breakdown: LossBreakdown) -> list[torch.Tensor]:
    """Gradient of breakdown.total with respect to every parameter tensor."""
    if breakdown.higher_order and not model_mod.HIGHER_ORDER_SUPPORTED:
        raise CapabilityError("higher-order differentiation is not available")
    if breakdown.total_tensor is None or breakdown.params is None:
        raise InputError("breakdown does not carry its computation context")
    tensors = breakdown.params.tensors()
    if not breakdown.total_tensor.requires_grad:
        return [torch.zeros_like(t) for t in tensors]
    return grad_wrt_params(breakdown.total_tensor, breakdown.params)
