"""Model types and evaluation of the weighted multi-Gaussian surface.

Coordinates follow the image grid: ``x1`` is the normalized row
coordinate ``r / H`` and ``x2`` the normalized column coordinate ``c / W``,
with 1-based pixel indices. Each component is a bell

    G(x) = exp(-(x - mu)^T L L^T (x - mu))

where ``L`` is lower triangular with a strictly positive diagonal, so the
precision matrix ``A = L L^T`` is always positive definite.

Model parameters are held as an ``(m, 6)`` float64 array whose columns are
``w, mu_x1, mu_x2, l11, l21, l22`` (see :data:`PARAM_NAMES`).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

PARAM_NAMES = ("w", "mu_x1", "mu_x2", "l11", "l21", "l22")
PARAMS_PER_COMPONENT = len(PARAM_NAMES)

# Component-axis chunk size for the threaded kernel. Fixed so that the
# partition never depends on the thread count.
_CHUNK = 16


class Vec2(NamedTuple):
    x1: float
    x2: float


class CholFactor(NamedTuple):
    """Lower-triangular 2x2 factor ``[[l11, 0], [l21, l22]]``."""

    l11: float
    l21: float
    l22: float


class SymMatrix2(NamedTuple):
    a11: float
    a12: float
    a22: float

    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12


class GaussianComponent(NamedTuple):
    w: float
    mu: Vec2
    chol: CholFactor

    def as_row(self) -> tuple[float, ...]:
        return (self.w, self.mu.x1, self.mu.x2, *self.chol)


def _check_params(params: np.ndarray) -> None:
    if params.ndim != 2 or params.shape[1] != PARAMS_PER_COMPONENT:
        raise ValueError(f"expected an (m, 6) parameter array, got shape {params.shape}")
    if params.shape[0] < 1:
        raise ValueError("a model needs at least one component")
    if not np.all(np.isfinite(params)):
        raise ValueError("model parameters must be finite")
    bad = np.flatnonzero((params[:, 3] <= 0) | (params[:, 5] <= 0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"component {i}: Cholesky diagonal must be strictly positive "
            f"(l11={params[i, 3]!r}, l22={params[i, 5]!r})"
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GmModel:
    """An ordered set of weighted Gaussian components on an ``H x W`` grid.

    ``params`` is a read-only ``(m, 6)`` array; build modified models with
    :meth:`with_params` rather than editing in place.
    """

    params: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        params = _frozen(self.params)
        _check_params(params)
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))

    @classmethod
    def from_components(cls, components: Iterable[GaussianComponent], height: int, width: int) -> GmModel:
        rows = [GaussianComponent(*c).as_row() for c in components]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, PARAMS_PER_COMPONENT), height, width)

    def with_params(self, params: np.ndarray) -> GmModel:
        return GmModel(params, self.height, self.width)

    @property
    def m(self) -> int:
        return self.params.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def weights(self) -> np.ndarray:
        return self.params[:, 0]

    @property
    def components(self) -> tuple[GaussianComponent, ...]:
        return tuple(
            GaussianComponent(float(w), Vec2(float(a), float(b)), CholFactor(float(p), float(q), float(r)))
            for w, a, b, p, q, r in self.params
        )

    @property
    def n_params(self) -> int:
        return parameter_size(self.m)

    def __len__(self) -> int:
        return self.m

    def __eq__(self, other):
        if not isinstance(other, GmModel):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.params, other.params)

    def __hash__(self):
        return hash((self.shape, self.params.tobytes()))


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Gray intensities on an ``H x W`` grid, stored as a 2-D row-major array."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = _frozen(self.pixels)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {pixels.shape}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def clamped(self) -> ImageGrid:
        return ImageGrid(np.clip(self.pixels, 0.0, 1.0))

    def __eq__(self, other):
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def pixel_coords(r: int, c: int, height: int, width: int) -> Vec2:
    """Normalized coordinates of the 1-based pixel ``(r, c)``."""
    if not (1 <= r <= height and 1 <= c <= width):
        raise ValueError(f"pixel ({r}, {c}) outside 1..{height} x 1..{width}")
    return Vec2(r / height, c / width)


def grid_coords(height: int, width: int) -> np.ndarray:
    """All pixel coordinates in row-major order as a ``(H*W, 2)`` array."""
    rows = np.arange(1, height + 1, dtype=np.float64) / height
    cols = np.arange(1, width + 1, dtype=np.float64) / width
    x1, x2 = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([x1.ravel(), x2.ravel()], axis=1)


def precision_matrix(chol: CholFactor) -> SymMatrix2:
    l11, l21, l22 = chol
    return SymMatrix2(l11 * l11, l11 * l21, l21 * l21 + l22 * l22)


def parameter_size(m: int) -> int:
    """Number of free scalars in an ``m``-component model."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return PARAMS_PER_COMPONENT * m


def eval_gaussian(comp: GaussianComponent, x: Sequence[float]) -> float:
    """Unweighted bell value of ``comp`` at ``x``, in ``(0, 1]``."""
    _, (m1, m2), (l11, l21, l22) = comp
    d1 = x[0] - m1
    d2 = x[1] - m2
    u1 = l11 * d1 + l21 * d2
    u2 = l22 * d2
    return math.exp(-(u1 * u1 + u2 * u2))


def eval_model(model: GmModel, x: Sequence[float]) -> float:
    """Model value at an arbitrary point (no clamping)."""
    return float(evaluate(model.params, np.asarray([x], dtype=np.float64))[0])


def render(model: GmModel) -> ImageGrid:
    """Evaluate the model at every pixel of its grid (no clamping)."""
    values = evaluate(model.params, grid_coords(model.height, model.width))
    return ImageGrid(values.reshape(model.height, model.width))


# -- vectorized kernel ----------------------------------------------------


def thread_count() -> int:
    """Worker threads for the kernel, capped by ``GMFACE_THREADS``."""
    raw = os.environ.get("GMFACE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GMFACE_THREADS must be a positive integer, got {raw!r}") from None
    return max(1, n)


class Terms(NamedTuple):
    """Per-component, per-point intermediates shared by value and gradient.

    All fields are ``(m, P)`` arrays: offsets ``d = x - mu``, the rotated
    offsets ``u = L^T d`` and the bell values ``g = exp(-|u|^2)``.
    """

    d1: np.ndarray
    d2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    g: np.ndarray


def _terms_block(params: np.ndarray, coords: np.ndarray) -> Terms:
    d1 = coords[None, :, 0] - params[:, 1, None]
    d2 = coords[None, :, 1] - params[:, 2, None]
    u1 = params[:, 3, None] * d1 + params[:, 4, None] * d2
    u2 = params[:, 5, None] * d2
    g = np.exp(-(u1 * u1 + u2 * u2))
    return Terms(d1, d2, u1, u2, g)


def gaussian_terms(params: np.ndarray, coords: np.ndarray) -> Terms:
    """Compute :class:`Terms` for every component at every point.

    Purely elementwise, so splitting the component axis across threads
    gives bit-identical results to a single-threaded run.
    """
    threads = thread_count()
    m = params.shape[0]
    if threads <= 1 or m <= _CHUNK:
        return _terms_block(params, coords)
    spans = [(s, min(s + _CHUNK, m)) for s in range(0, m, _CHUNK)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        blocks = list(pool.map(lambda s: _terms_block(params[s[0]:s[1]], coords), spans))
    return Terms(*(np.concatenate(parts, axis=0) for parts in zip(*blocks)))


def combine(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Weighted sum over the component axis, accumulated in component order."""
    out = np.zeros(g.shape[1], dtype=np.float64)
    for w, row in zip(weights, g):
        out += w * row
    return out


def evaluate(params: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Model values at ``coords`` (shape ``(P, 2)``) for an ``(m, 6)`` array."""
    return combine(params[:, 0], gaussian_terms(params, coords).g)
