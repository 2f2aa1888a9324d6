"""Loss, analytic gradients and the Adam fitting loop.

The objective over ``N`` target images of ``P = H * W`` pixels is

    total = l2 + alpha * l_inf
    l2    = mean over all N*P residuals of (model - target)^2
    l_inf = max over all N*P residuals of |model - target|

The ``l_inf`` term is handled as a subgradient routed through the single
pixel attaining the maximum (first in image-then-row-major order).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    PARAMS_PER_COMPONENT,
    GmModel,
    ImageGrid,
    combine,
    gaussian_terms,
    grid_coords,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 2000
    alpha: float = 0.1
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 256
    seed: int = 0
    l_diag_floor: float = 1e-6
    # None starts from init_model(m, ...); a GmModel warm-starts from a copy of it.
    init: Optional[GmModel] = None
    m: int = 80

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if int(self.m) < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        checks = {
            "alpha": self.alpha >= 0,
            "learning_rate": self.learning_rate > 0,
            "beta1": 0 < self.beta1 < 1,
            "beta2": 0 < self.beta2 < 1,
            "adam_epsilon": self.adam_epsilon > 0,
            "l_diag_floor": self.l_diag_floor > 0,
        }
        for name, ok in checks.items():
            value = getattr(self, name)
            if not (math.isfinite(value) and ok):
                raise ValueError(f"{name} out of range: {value!r}")


class LossReport(NamedTuple):
    l2: float
    l_inf: float
    total: float
    # (image index, 1-based row, 1-based column) of the peak absolute error
    argmax_pixel: tuple[int, int, int]


class GradientSet(NamedTuple):
    """Loss gradient laid out like ``GmModel.params``: ``(m, 6)``."""

    values: np.ndarray

    @property
    def d_w(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def d_mu(self) -> np.ndarray:
        return self.values[:, 1:3]

    @property
    def d_chol(self) -> np.ndarray:
        return self.values[:, 3:6]


@dataclass
class FitResult:
    model: GmModel
    history: list[tuple[int, LossReport]] = field(default_factory=list)

    @property
    def final_loss(self) -> LossReport:
        return self.history[-1][1]


@dataclass
class AdamState:
    first: np.ndarray
    second: np.ndarray

    @classmethod
    def zeros(cls, shape) -> AdamState:
        return cls(np.zeros(shape), np.zeros(shape))


# -- loss -----------------------------------------------------------------


def stack_targets(targets: Sequence[ImageGrid], shape: tuple[int, int]) -> np.ndarray:
    """Validate targets against the model grid and stack to ``(N, H*W)``."""
    if len(targets) == 0:
        raise ValueError("target set is empty")
    for j, t in enumerate(targets):
        if t.shape != tuple(shape):
            raise ValueError(f"target {j} is {t.height}x{t.width}, model grid is {shape[0]}x{shape[1]}")
    stacked = np.stack([t.pixels.ravel() for t in targets])
    if stacked.min() < 0.0 or stacked.max() > 1.0:
        raise ValueError("target pixels must lie in [0, 1]")
    return stacked


def _report(residual: np.ndarray, alpha: float, width: int) -> tuple[LossReport, int, float]:
    per_image = np.mean(residual * residual, axis=1)
    # shifted mean: exact when every image has the same error
    l2 = float(per_image[0] + np.mean(per_image - per_image[0]))
    flat = int(np.argmax(np.abs(residual)))
    image, pixel = divmod(flat, residual.shape[1])
    peak = residual[image, pixel]
    l_inf = float(abs(peak))
    r, c = divmod(pixel, width)
    report = LossReport(l2, l_inf, l2 + alpha * l_inf, (image, r + 1, c + 1))
    return report, pixel, float(np.sign(peak))


def _loss_from_stack(params: np.ndarray, stacked: np.ndarray, coords: np.ndarray, alpha: float, width: int):
    terms = gaussian_terms(params, coords)
    out = combine(params[:, 0], terms.g)
    residual = out[None, :] - stacked
    report, pixel, sign = _report(residual, alpha, width)
    return report, terms, residual, pixel, sign


def compute_loss(model: GmModel, targets: Sequence[ImageGrid], alpha: float) -> LossReport:
    stacked = stack_targets(targets, model.shape)
    coords = grid_coords(*model.shape)
    return _loss_from_stack(model.params, stacked, coords, alpha, model.width)[0]


# -- gradients ------------------------------------------------------------


def backprop(params: np.ndarray, terms, pixel_weights: np.ndarray) -> np.ndarray:
    """Chain per-pixel loss sensitivities through every component.

    ``pixel_weights[p]`` is d(loss)/d(model value at pixel p). With
    ``q = |u|^2``, ``u = L^T (x - mu)``:

        dG/dw   = G                       (the bell itself)
        dq/dmu  = -2 L u
        dq/dl11 = 2 d1 u1,  dq/dl21 = 2 d2 u1,  dq/dl22 = 2 d2 u2

    and the model derivative is ``-w G dq/dparam`` for the shape parameters.
    """
    d1, d2, u1, u2, g = terms
    grads = np.empty((params.shape[0], PARAMS_PER_COMPONENT))
    h = g * pixel_weights
    grads[:, 0] = h.sum(axis=1)
    # h becomes 2 * dLoss/dq per component and pixel
    h *= -2.0 * params[:, 0, None]
    hu1 = h * u1
    hu2 = np.multiply(h, u2, out=h)
    su1 = hu1.sum(axis=1)
    su2 = hu2.sum(axis=1)
    l11, l21, l22 = params[:, 3], params[:, 4], params[:, 5]
    grads[:, 1] = -l11 * su1
    grads[:, 2] = -(l21 * su1 + l22 * su2)
    grads[:, 3] = np.einsum("ij,ij->i", hu1, d1)
    grads[:, 4] = np.einsum("ij,ij->i", hu1, d2)
    grads[:, 5] = np.einsum("ij,ij->i", hu2, d2)
    return grads


def _gradients_from_stack(params, stacked, coords, alpha, width):
    report, terms, residual, pixel, sign = _loss_from_stack(params, stacked, coords, alpha, width)
    weights = residual.sum(axis=0) * (2.0 / residual.size)
    if alpha != 0 and sign != 0:
        weights[pixel] += alpha * sign
    return backprop(params, terms, weights), report


def compute_gradients(model: GmModel, targets: Sequence[ImageGrid], alpha: float) -> GradientSet:
    stacked = stack_targets(targets, model.shape)
    coords = grid_coords(*model.shape)
    grads, _ = _gradients_from_stack(model.params, stacked, coords, alpha, model.width)
    return GradientSet(grads)


def finite_diff_gradients(model: GmModel, targets: Sequence[ImageGrid], alpha: float, h: float = 1e-6) -> GradientSet:
    """Central-difference gradient of the total loss, one scalar at a time.

    Perturbed models bypass validation and projection, so steps may cross
    the feasibility boundary.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h!r}")
    stacked = stack_targets(targets, model.shape)
    coords = grid_coords(*model.shape)

    def total(p):
        return _loss_from_stack(p, stacked, coords, alpha, model.width)[0].total

    base = np.array(model.params)
    grads = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        grads[idx] = (total(plus) - total(minus)) / (2.0 * h)
    return GradientSet(grads)


# -- optimizer ------------------------------------------------------------


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, t: int, cfg: FitConfig):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    if isinstance(grads, GradientSet):
        grads = grads.values
    grads = np.asarray(grads, dtype=np.float64)
    first = cfg.beta1 * state.first + (1.0 - cfg.beta1) * grads
    second = cfg.beta2 * state.second + (1.0 - cfg.beta2) * (grads * grads)
    m_hat = first / (1.0 - cfg.beta1**t)
    v_hat = second / (1.0 - cfg.beta2**t)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return new, AdamState(first, second)


def project_constraints(model: GmModel, l_diag_floor: float) -> GmModel:
    if not l_diag_floor > 0:
        raise ValueError(f"diagonal floor must be positive, got {l_diag_floor!r}")
    return model.with_params(_project(np.array(model.params), l_diag_floor))


def _project(params: np.ndarray, floor: float) -> np.ndarray:
    np.maximum(params[:, 3], floor, out=params[:, 3])
    np.maximum(params[:, 5], floor, out=params[:, 5])
    return params


# -- fitting --------------------------------------------------------------


def init_model(m: int, height: int, width: int, seed: int) -> GmModel:
    """Random starting model, deterministic in ``seed``.

    Centers uniform on the unit square, diagonal factors in [5, 15] (bells
    spanning roughly a tenth of the image), no skew, small weights.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    params = np.empty((m, PARAMS_PER_COMPONENT))
    params[:, 0] = rng.uniform(-0.1, 0.1, m)
    params[:, 1:3] = rng.uniform(0.0, 1.0, (m, 2))
    params[:, 3] = rng.uniform(5.0, 15.0, m)
    params[:, 4] = 0.0
    params[:, 5] = rng.uniform(5.0, 15.0, m)
    return GmModel(params, height, width)


StepCallback = Callable[[int, np.ndarray], None]


def fit(
    targets: Sequence[ImageGrid],
    cfg: FitConfig,
    on_step: Optional[StepCallback] = None,
) -> FitResult:
    """Fit a model to one or more target images.

    Each epoch visits the targets in seeded random order, in mini-batches of
    ``cfg.batch_size``; every batch takes one Adam step followed by the
    diagonal projection. Loss over the full target set is recorded at the
    end of each epoch.

    ``on_step(step, params)`` is called after every projected update with a
    read-only view of the current ``(m, 6)`` parameters.
    """
    if len(targets) == 0:
        raise ValueError("target set is empty")
    shape = targets[0].shape
    if cfg.init is not None:
        if cfg.init.shape != shape:
            raise ValueError(
                f"initial model grid {cfg.init.height}x{cfg.init.width} does not match "
                f"targets {shape[0]}x{shape[1]}"
            )
        model = cfg.init
    else:
        model = init_model(cfg.m, shape[0], shape[1], cfg.seed)
    stacked = stack_targets(targets, shape)
    coords = grid_coords(*shape)
    width = shape[1]
    n = stacked.shape[0]

    params = np.array(model.params)
    state = AdamState.zeros(params.shape)
    order_rng = np.random.default_rng([cfg.seed, 1])
    step = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n) if n > 1 else np.zeros(1, dtype=np.intp)
        for start in range(0, n, cfg.batch_size):
            batch = stacked[np.sort(order[start:start + cfg.batch_size])]
            grads, _ = _gradients_from_stack(params, batch, coords, cfg.alpha, width)
            step += 1
            params, state = adam_step(params, grads, state, step, cfg)
            _project(params, cfg.l_diag_floor)
            if on_step is not None:
                view = params.view()
                view.setflags(write=False)
                on_step(step, view)
        report = _loss_from_stack(params, stacked, coords, cfg.alpha, width)[0]
        history.append((epoch, report))
        if epoch == 1 or epoch % 100 == 0 or epoch == cfg.epochs:
            log.info("epoch %d: l2=%.6g l_inf=%.6g total=%.6g", epoch, report.l2, report.l_inf, report.total)
    return FitResult(model.with_params(params), history)
