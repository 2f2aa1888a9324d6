"""Image transforms carried out directly on model parameters.

Each transform returns a new model whose surface is an exact warp of the
input surface; no pixels are resampled.

* translate by ``t``: ``result(x) == model(x - t)``
* scale by ``k``:     ``result(x) == model(k * x)``
* rotate by ``theta`` about ``c``: ``result(x) == model(F (x - c) + c)``
  with ``F = [[cos, sin], [-sin, cos]]``
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .core import CholFactor, GmModel, SymMatrix2, Vec2


class NotPositiveDefiniteError(ValueError):
    pass


class RotationSpec(NamedTuple):
    theta: float
    center: Vec2 = Vec2(0.5, 0.5)

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s], [-s, c]])


def cholesky2(a: SymMatrix2) -> CholFactor:
    a11, a12, a22 = a
    if not a11 > 0:
        raise NotPositiveDefiniteError(f"a11 must be positive, got {a11!r}")
    l11 = math.sqrt(a11)
    l21 = a12 / l11
    rest = a22 - l21 * l21
    if not rest > 0:
        raise NotPositiveDefiniteError(f"matrix ({a11!r}, {a12!r}, {a22!r}) is not positive definite")
    return CholFactor(l11, l21, math.sqrt(rest))


def translate(model: GmModel, t: Sequence[float]) -> GmModel:
    params = model.params.copy()
    params[:, 1] += t[0]
    params[:, 2] += t[1]
    return model.with_params(params)


def scale(model: GmModel, k: float) -> GmModel:
    """Resample the surface at ``k * x``.

    ``|k| > 1`` shrinks the visible content, ``|k| < 1`` enlarges it, and a
    negative factor also mirrors through the origin. The Cholesky entries are
    multiplied by ``|k|`` so the diagonal stays positive.
    """
    if not (math.isfinite(k) and k != 0):
        raise ValueError(f"scale factor must be finite and nonzero, got {k!r}")
    params = model.params.copy()
    params[:, 1:3] /= k
    params[:, 3:6] *= abs(k)
    return model.with_params(params)


def rotate(model: GmModel, spec: RotationSpec) -> GmModel:
    f = spec.matrix()
    center = np.asarray(spec.center, dtype=np.float64)
    shift = f @ center - center
    params = model.params.copy()
    for row in params:
        l11, l21, l22 = row[3:6]
        lower = np.array([[l11, 0.0], [l21, l22]])
        a = lower @ lower.T
        a_new = f.T @ a @ f
        # F is orthogonal, so F^-1 = F^T.
        row[1:3] = f.T @ (row[1:3] + shift)
        row[3:6] = cholesky2(SymMatrix2(a_new[0, 0], 0.5 * (a_new[0, 1] + a_new[1, 0]), a_new[1, 1]))
    return model.with_params(params)


def top_k(model: GmModel, k: int) -> GmModel:
    """Keep the ``k`` components with the largest ``|w|``, in original order.

    Ties go to the lower index.
    """
    if not 1 <= k <= model.m:
        raise ValueError(f"k must be in 1..{model.m}, got {k}")
    order = np.argsort(-np.abs(model.weights), kind="stable")
    keep = np.sort(order[:k])
    return model.with_params(model.params[keep])
