"""Dense float64 linear algebra: SVD with a fixed sign convention, projections, norms.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every public
function validates its inputs (2-D, finite) and raises ``ContractError`` on a
violated precondition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ContractError(ValueError):
    """A documented precondition of a public operation was violated."""


class SvdConvergenceError(ArithmeticError):
    def __init__(self, driver: str, info: str):
        super().__init__(f"SVD failed to converge ({driver}): {info}")
        self.driver = driver
        self.info = info


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Thin SVD ``w = u @ diag(sigma) @ vt`` with ``r = min(m, n)`` components."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.vt.shape[1]

    @property
    def v(self) -> np.ndarray:
        return self.vt.T

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each u_i made nonnegative; argmax picks the lowest index on ties
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(u.shape[1])] < 0.0, -1.0, 1.0)
    return u * signs, vt * signs[:, None]


def svd(w) -> SvdFactors:
    """Thin SVD of ``w`` under the canonical sign convention.

    LAPACK's divide-and-conquer driver is tried first, then the QR-iteration
    driver. If both fail a ``SvdConvergenceError`` is raised.
    """
    w = as_matrix(w, "w")
    last_error = ""
    for driver in ("gesdd", "gesvd"):
        try:
            u, s, vt = scipy.linalg.svd(
                w, full_matrices=False, lapack_driver=driver, check_finite=False
            )
        except np.linalg.LinAlgError as exc:
            last_error = str(exc)
            continue
        u, vt = _fix_signs(u, vt)
        return SvdFactors(u=np.ascontiguousarray(u), sigma=s, vt=np.ascontiguousarray(vt))
    raise SvdConvergenceError("gesdd+gesvd", last_error)


def frobenius_inner(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.einsum("ij,ij->", a, b))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a), "fro"))


def check_orthonormal_columns(basis, tol: float = 1e-8, name: str = "basis") -> np.ndarray:
    basis = as_matrix(basis, name)
    gram = basis.T @ basis
    err = np.max(np.abs(gram - np.eye(gram.shape[0])))
    if err > tol:
        raise ContractError(f"{name} columns are not orthonormal (max |Q^T Q - I| = {err:.3e})")
    return basis


def project_onto_columns(x, basis) -> np.ndarray:
    """Orthogonal projection ``basis @ basis.T @ x``; ``x`` may be a vector or a matrix."""
    basis = check_orthonormal_columns(basis)
    x_arr = np.asarray(x, dtype=np.float64)
    if x_arr.ndim == 1:
        x_arr = as_vector(x_arr, "x")
    else:
        x_arr = as_matrix(x_arr, "x")
    if x_arr.shape[0] != basis.shape[0]:
        raise ContractError(f"x has {x_arr.shape[0]} rows, basis has {basis.shape[0]}")
    return basis @ (basis.T @ x_arr)


def spectral_norm(a) -> float:
    return float(svd(a).sigma[0])


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with the R-diagonal sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
