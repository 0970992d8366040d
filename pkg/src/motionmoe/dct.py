"""Orthonormal DCT-II over the trailing axis, as a differentiable matrix op.

Trajectories enter the network as frequency coefficients and leave it the
same way; no coefficient truncation happens anywhere, so the transform pair
is exactly inverse (up to float rounding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, matmul


def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT-II basis K with K[k, n] = s_k cos(pi (2n+1) k / 2T).

    s_0 = sqrt(1/T) and s_k = sqrt(2/T), which makes K K^T = I; row 0 is the
    constant 1/sqrt(T).
    """
    if length < 1:
        raise ShapeError(f"dct_matrix: length must be >= 1, got {length}")
    n = np.arange(length)
    k = n[:, None]
    basis = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2.0 * length))
    scale = np.full(length, np.sqrt(2.0 / length))
    scale[0] = np.sqrt(1.0 / length)
    return scale[:, None] * basis


@dataclass
class DctBasis:
    """Basis cached as constant tensors so repeated calls share storage."""

    length: int
    matrix: np.ndarray = field(init=False)
    _forward: Tensor = field(init=False, repr=False)
    _inverse: Tensor = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = dct_matrix(self.length)
        # coefficients c = x K^T, reconstruction x = c K (K is orthonormal)
        self._forward = Tensor(self.matrix.T, requires_grad=False)
        self._inverse = Tensor(self.matrix, requires_grad=False)


def dct_forward(x: Tensor, basis: DctBasis) -> Tensor:
    """Coefficients along the trailing axis: out[..., k] = sum_n K[k,n] x[..., n]."""
    if x.shape[-1] != basis.length:
        raise ShapeError(f"dct_forward: trailing axis {x.shape[-1]} != basis length {basis.length}")
    return matmul(x, basis._forward)


def dct_inverse(coeffs: Tensor, basis: DctBasis) -> Tensor:
    """Reconstruction along the trailing axis; exact inverse of dct_forward."""
    if coeffs.shape[-1] != basis.length:
        raise ShapeError(
            f"dct_inverse: trailing axis {coeffs.shape[-1]} != basis length {basis.length}")
    return matmul(coeffs, basis._inverse)
