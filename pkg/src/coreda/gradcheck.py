"""Central finite-difference checks for every differentiable op and a full step.

Errors are reported relative to the largest gradient entry of each tensor:
``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numkernel as nk
from .losses import LossWeights
from .model import EncoderConfig, abs_from_pooled, encode, encode_batch, init_params, predict_abs, predict_rel
from .sampling import ClipSpec

H = 1e-6
TOLERANCE = 1e-5


def numeric_grad(
    f: Callable[[], float], x: np.ndarray, h: float = H, coords: np.ndarray | None = None
) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place).

    With ``coords`` (flat indices) only those entries are probed; the rest stay NaN.
    """
    grad = np.full(x.size, np.nan) if coords is not None else np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(x.size) if coords is None else coords:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check(build: Callable[[list[nk.Tensor]], nk.Tensor], inputs: list[np.ndarray], max_coords: int | None = None,
          rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and finite differences over ``inputs``."""
    leaves = [nk.parameter(x.copy()) for x in inputs]
    root = build(leaves)
    root.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

        def f():
            with nk.no_grad():
                return build(leaves).item()

        coords = None
        if max_coords is not None and leaf.data.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(leaf.data.size, size=max_coords, replace=False)
        worst = max(worst, relative_error(analytic, numeric_grad(f, leaf.data, coords=coords)))
    return worst


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if e <= self.tolerance else 'FAIL'}  {name:<22} max rel err {e:.3e}"
            for name, e in self.errors.items()
        ]


def detach_gap(rng: np.random.Generator) -> float:
    """Largest gradient difference between ``detach(x)`` and a constant copy of ``x``."""
    x0, y0 = rng.normal(size=4), rng.normal(size=4)

    def grads(cut):
        x, y = nk.parameter(x0.copy()), nk.parameter(y0.copy())
        h = x * y
        nk.mse(h, cut(h) * 0.5 + y).backward()
        return np.concatenate([x.grad, y.grad])

    a = grads(nk.detach)
    b = grads(lambda h: nk.Tensor(h.data.copy()))
    return float(np.abs(a - b).max())


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """Each case maps leaves to a scalar via a fixed random projection."""
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    w34, w4, w6, w2x3, w3, w24 = r(3, 4), r(4), r(6), r(2, 3), r(3), r(2, 4)

    def proj(t, w):
        return (t * nk.Tensor(w)).sum()

    cases = {
        "matmul": (lambda L: proj(nk.matmul(L[0], L[1]), w2x3), [r(2, 4), r(4, 3)]),
        "add_broadcast": (lambda L: proj(L[0] + L[1], w34), [r(3, 4), r(4)]),
        "sub": (lambda L: proj(L[0] - L[1], w34), [r(3, 4), r(3, 4)]),
        "mul": (lambda L: proj(L[0] * L[1], w34), [r(3, 4), r(3, 1)]),
        "neg": (lambda L: proj(-L[0], w4), [r(4)]),
        "pow": (lambda L: proj(L[0] ** 3, w4), [r(4)]),
        "relu": (lambda L: proj(L[0].relu(), w34), [r(3, 4)]),
        "leaky_relu": (lambda L: proj(L[0].leaky_relu(), w34), [r(3, 4)]),
        "reshape": (lambda L: proj(L[0].reshape(4, 3), w34.reshape(4, 3)), [r(3, 4)]),
        "sum": (lambda L: L[0].sum() * 1.7, [r(3, 4)]),
        "mean": (lambda L: proj(L[0].mean(axis=1), w3), [r(3, 4)]),
        "getitem": (lambda L: proj(L[0][1:3], w24), [r(3, 4)]),
        "gap_temporal": (lambda L: proj(nk.gap_temporal(L[0]), w4), [r(5, 4)]),
        "concat_vec": (lambda L: proj(nk.concat_vec(L[0], L[1]), w6), [r(3), r(3)]),
        "mse": (lambda L: nk.mse(L[0], L[1]), [r(6), r(6)]),
    }
    return cases


def tiny_setup(seed: int):
    from .trainer import TrainConfig, TripletBatch

    enc = EncoderConfig(d=6, hidden=7, c=1, h=4, w=4, l=3)
    rng = np.random.default_rng(seed)
    B, K = 3, 2
    frames = lambda: rng.uniform(0, 1, size=(B, K * enc.l, 1, 4, 4))  # noqa: E731
    batch = TripletBatch(
        source=frames(),
        exemplar=frames(),
        target=frames(),
        y_s=rng.uniform(6, 30, B),
        y_e=rng.uniform(6, 30, B),
        source_ids=[], exemplar_ids=[], target_ids=[],
    )
    cfg = TrainConfig(epochs=1, batch_size=B, clip_spec=ClipSpec(K=K, l=enc.l), weights=LossWeights(1.0, 0.7, 1.3))
    return enc, batch, cfg, rng


def model_cases(seed: int) -> dict[str, Callable[[], float]]:
    """Composed checks: heads, encoder, and one full training step."""
    from .trainer import step_losses

    enc, batch, cfg, rng = tiny_setup(seed)
    m = init_params(enc, seed)
    for p in m.parameters():
        # nonzero biases so every path is exercised
        p.data += 0.1 * rng.normal(size=p.shape)

    def run(build, fd_build=None) -> float:
        m.zero_grad()
        build().backward()
        fd_build = fd_build or build
        analytic = {n: (m.params[n].grad.copy() if m.params[n].grad is not None else np.zeros(m.params[n].shape))
                    for n in m.names}
        worst = 0.0

        def f():
            with nk.no_grad():
                return fd_build().item()

        for n in m.names:
            x = m.params[n].data
            coords = None if x.size <= 24 else rng.choice(x.size, 24, replace=False)
            worst = max(worst, relative_error(analytic[n], numeric_grad(f, x, coords=coords)))
        return worst

    from dataclasses import replace

    def frozen_step():
        # stopgrad means: the pseudo-labels are constants at the current parameters
        with nk.no_grad():
            pooled = nk.gap_temporal(encode_batch(batch.target, m))
            pseudo = abs_from_pooled(pooled, m).data.copy()
        return lambda: step_losses(m, batch, cfg, pseudo_labels=pseudo).total

    no_sg = replace(cfg, disable_stopgrad=True)
    clips = batch.source[0]
    return {
        "model.predict_abs": lambda: run(lambda: predict_abs(encode(clips, m), m) * 1.0),
        "model.predict_rel": lambda: run(lambda: predict_rel(encode(clips, m), encode(batch.exemplar[0], m), m)),
        "step.total": lambda: run(lambda: step_losses(m, batch, cfg).total, frozen_step()),
        "step.total.no_stopgrad": lambda: run(lambda: step_losses(m, batch, no_sg).total),
    }


def run_suite(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, (build, inputs) in op_cases(rng).items():
        errors[name] = check(build, inputs)
    errors["detach"] = detach_gap(rng)
    for name, fn in model_cases(seed).items():
        errors[name] = fn()
    return GradcheckReport(errors)
