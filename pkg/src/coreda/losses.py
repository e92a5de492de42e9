"""Supervised, consistency and total losses, built as graphs over numkernel."""

from __future__ import annotations

from dataclasses import dataclass

from .numkernel import ContractError, DimensionError, Tensor, as_tensor, detach, mse


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma"):
            if getattr(self, k) < 0:
                raise ContractError(f"loss weight {k} must be >= 0, got {getattr(self, k)}")


@dataclass
class StepLosses:
    """Loss terms of one step.  A term that was not built is ``None``."""

    sup_rel: Tensor | None = None
    sup_abs: Tensor | None = None
    cons_s: Tensor | None = None
    cons_t: Tensor | None = None
    sup_target: Tensor | None = None
    total: Tensor | None = None

    TERMS = ("sup_rel", "sup_abs", "cons_s", "cons_t", "sup_target")

    def values(self) -> dict[str, float]:
        out = {}
        for k in self.TERMS + ("total",):
            t = getattr(self, k)
            out[k] = 0.0 if t is None else t.item()
        return out


def loss_sup_rel(delta_hat, y_s, y_e) -> Tensor:
    """MSE between predicted and true source-minus-exemplar score differences."""
    y_s, y_e = as_tensor(y_s), as_tensor(y_e)
    if y_s.shape != y_e.shape:
        raise DimensionError(f"source labels {y_s.shape} and exemplar labels {y_e.shape} differ in length")
    return mse(as_tensor(delta_hat), Tensor(y_s.data - y_e.data))


def loss_sup_abs(y_e_hat, y_e) -> Tensor:
    return mse(as_tensor(y_e_hat), as_tensor(y_e))


def loss_cons_source(y_s_recon, y_s_abs) -> Tensor:
    # gradients flow through both arguments
    return mse(as_tensor(y_s_recon), as_tensor(y_s_abs))


def loss_cons_target(y_t_recon, y_t_abs, stopgrad: bool = True) -> Tensor:
    """Self-training loss; the absolute prediction acts as a pseudo-label."""
    y_t_abs = as_tensor(y_t_abs)
    return mse(as_tensor(y_t_recon), detach(y_t_abs) if stopgrad else y_t_abs)


def total_loss(parts: StepLosses, w: LossWeights) -> Tensor:
    """``alpha*(sup_rel + sup_abs + sup_target) + beta*cons_s + gamma*cons_t``.

    Terms with zero weight, or that were not built, are left out of the
    graph entirely, so they contribute no gradient.
    """
    for k in ("alpha", "beta", "gamma"):
        if getattr(w, k) < 0:
            raise ContractError(f"loss weight {k} must be >= 0")
    weighted = [
        (w.alpha, parts.sup_rel),
        (w.alpha, parts.sup_abs),
        (w.alpha, parts.sup_target),
        (w.beta, parts.cons_s),
        (w.gamma, parts.cons_t),
    ]
    total = None
    for weight, term in weighted:
        if term is None or weight == 0:
            continue
        contrib = term * weight
        total = contrib if total is None else total + contrib
    if total is None:
        total = Tensor(0.0)
    parts.total = total
    return total
