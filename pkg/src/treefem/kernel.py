"""Reference-element quadrature and tensor-product nodal basis tables.

Cells are mapped affinely from the unit reference box [0,1]^dim with a
diagonal Jacobian, so physical gradients are reference gradients divided
by the per-axis edge length. Corner ordering follows the bit convention
of the mesh: bit d of corner k gives the offset along axis d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import corner_bits

__all__ = ["QuadratureRule", "gauss_points", "tensor_rule", "basis_table",
           "face_reference_points"]


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray     # (nqp, k) on [0,1]^k
    weights: np.ndarray    # (nqp,), summing to 1


def gauss_points(npts):
    """Gauss-Legendre points and weights on [0, 1]."""
    if not 1 <= npts <= 10:
        raise ValueError("quadrature order must be between 1 and Gauss-10")
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


def tensor_rule(npts, k):
    """Tensor-product Gauss rule with npts points per axis on [0,1]^k."""
    x, w = gauss_points(npts)
    grids = np.meshgrid(*([x] * k), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(len(points))
    for g in np.meshgrid(*([w] * k), indexing="ij"):
        weights = weights * g.ravel()
    return QuadratureRule(points=points, weights=weights)


def basis_table(points, dim):
    """Multilinear nodal basis values and reference gradients.

    Returns (N, dN) with shapes (nqp, 2**dim) and (nqp, 2**dim, dim).
    """
    points = np.atleast_2d(np.asarray(points, float))
    bits = corner_bits(dim)
    factors = np.where(bits[None, :, :] == 1,
                       points[:, None, :], 1.0 - points[:, None, :])
    values = factors.prod(axis=2)
    nqp = len(points)
    grads = np.empty((nqp, 2 ** dim, dim))
    for d in range(dim):
        sign = np.where(bits[None, :, d] == 1, 1.0, -1.0)
        rest = [e for e in range(dim) if e != d]
        grads[:, :, d] = sign * factors[:, :, rest].prod(axis=2)
    return values, grads


def face_reference_points(tpoints, axis, orient, codes, dim):
    """Map face-local quadrature points into the owner cell's reference box.

    ``codes`` gives the sub-face extent per tangential axis (0 whole,
    1 lower half, 2 upper half). Returns the volume reference points and
    the area fraction of the sub-face.
    """
    tpoints = np.atleast_2d(np.asarray(tpoints, float))
    nqp = len(tpoints)
    points = np.empty((nqp, dim))
    points[:, axis] = float(orient)
    fraction = 1.0
    tangential = [d for d in range(dim) if d != axis]
    for col, d in enumerate(tangential):
        q = tpoints[:, col]
        code = int(codes[col])
        if code == 0:
            points[:, d] = q
        elif code == 1:
            points[:, d] = 0.5 * q
            fraction *= 0.5
        elif code == 2:
            points[:, d] = 0.5 + 0.5 * q
            fraction *= 0.5
        else:
            raise ValueError(f"unknown slice code {code}")
    return points, fraction
