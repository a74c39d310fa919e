"""Dense multi-channel grids and the finite-difference stencils built on them."""
from dataclasses import dataclass

import numpy as np

from ielseg import kernels


@dataclass(frozen=True, eq=False)
class Field:
    """A (channels, rows, cols) float32 grid with uniform pixel spacing.

    Values are stored channel-major, then row-major. The array is made
    read-only on construction, so a Field never changes after it exists.
    """

    values: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"Field needs a non-empty (C, H, W) array, got shape {v.shape}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        v = np.array(v, dtype=np.float32, order="C")
        if not np.isfinite(v).all():
            raise ValueError("Field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "Field":
        return Field(values, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Field(channels={self.channels}, rows={self.rows}, cols={self.cols}, spacing={self.spacing})"


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Integer class map of shape (rows, cols) with ids in ``[0, classes)``."""

    ids: np.ndarray
    classes: int = 2

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64, order="C")
        if ids.ndim != 2 or min(ids.shape) < 1:
            raise ValueError(f"LabelMask needs a non-empty 2D array, got shape {ids.shape}")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if ids.min() < 0 or ids.max() >= self.classes:
            raise ValueError(f"class ids must lie in [0, {self.classes})")
        ids.flags.writeable = False
        object.__setattr__(self, "ids", ids)

    @property
    def rows(self) -> int:
        return self.ids.shape[0]

    @property
    def cols(self) -> int:
        return self.ids.shape[1]

    @property
    def shape(self):
        return self.ids.shape

    def one_hot(self) -> np.ndarray:
        """(classes, rows, cols) float32 indicator stack."""
        return (np.arange(self.classes)[:, None, None] == self.ids[None]).astype(np.float32)

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.classes == other.classes and np.array_equal(self.ids, other.ids)

    def __repr__(self):
        return f"LabelMask(rows={self.rows}, cols={self.cols}, classes={self.classes})"


def replicate_pad_neighbor(U: Field, i: int, j: int, di: int, dj: int, channel: int = 0) -> float:
    """Value of ``U`` at ``(i+di, j+dj)`` with indices clamped to the grid (Neumann rule)."""
    if not (0 <= i < U.rows and 0 <= j < U.cols):
        raise IndexError(f"({i}, {j}) outside a {U.rows}x{U.cols} grid")
    if abs(di) > 2 or abs(dj) > 2:
        raise ValueError("offsets are limited to |di|, |dj| <= 2")
    ii = min(max(i + di, 0), U.rows - 1)
    jj = min(max(j + dj, 0), U.cols - 1)
    return float(U.values[channel, ii, jj])


def laplacian(U: Field) -> Field:
    """Per-channel 5-point Laplacian divided by h^2, replicate boundary."""
    return U.with_values(kernels.laplacian(U.values, U.spacing))


def grad_mag_central(U: Field) -> Field:
    """Centered-difference gradient magnitude, replicate boundary."""
    return U.with_values(kernels.grad_mag_central(U.values, U.spacing))


def grad_forward(U: Field):
    """Forward differences along rows (x) and columns (y); the last row/column is zero."""
    v = U.values
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, :-1, :] = (v[:, 1:, :] - v[:, :-1, :]) / np.float32(U.spacing)
    gy[:, :, :-1] = (v[:, :, 1:] - v[:, :, :-1]) / np.float32(U.spacing)
    return U.with_values(gx), U.with_values(gy)


def neumann_matrix(m: int) -> np.ndarray:
    """The tridiagonal (m, m) second-difference matrix with -1 corners."""
    d = np.zeros((m, m))
    if m == 1:
        return d
    idx = np.arange(m)
    d[idx, idx] = -2.0
    d[idx[:-1], idx[:-1] + 1] = 1.0
    d[idx[1:], idx[1:] - 1] = 1.0
    d[0, 0] = d[-1, -1] = -1.0
    return d


def laplacian_matrix_form(U: Field) -> np.ndarray:
    """(U D_cols + D_rows U) / h^2 per channel, in float64. Independent of the stencil kernels."""
    v = U.values.astype(np.float64)
    d_rows, d_cols = neumann_matrix(U.rows), neumann_matrix(U.cols)
    return (v @ d_cols + np.einsum("ik,ckj->cij", d_rows, v)) / U.spacing**2


def inner(a: Field, b: Field) -> float:
    """Flat inner product accumulated in float64."""
    return float(np.dot(a.values.ravel().astype(np.float64), b.values.ravel().astype(np.float64)))
