"""Dense matrix kernel used by every other module.

All routines operate on 2-d float64 arrays, never mutate their inputs and
return freshly allocated results, so they are safe to call from concurrent
workers.  Factorizations are delegated to LAPACK through ``numpy.linalg``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdConvergenceError",
    "SvdResult",
    "as_matrix",
    "matmul",
    "svd",
    "sym_eig",
    "truncated_svd",
]


class SvdConvergenceError(RuntimeError):
    """SVD iteration exceeded the backend's internal sweep cap."""


def as_matrix(a, name="matrix"):
    """Validate and return `a` as a nonempty finite 2-d float64 array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``u @ diag(singular_values) @ vt`` of a matrix.

    `floored` marks results where `truncated_svd` kept a single triplet
    only because the rank floor of one forbids discarding everything.
    """

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray
    floored: bool = False

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vt


def svd(m) -> SvdResult:
    """Thin SVD with singular values sorted non-increasingly."""
    m = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            "SVD did not converge within the LAPACK iteration cap "
            "(30 implicit QR sweeps per superdiagonal element)"
        ) from exc
    return SvdResult(u, s, vt)


def truncated_svd(m, abs_threshold: float) -> SvdResult:
    """SVD truncated so the l2 norm of discarded singular values is <= `abs_threshold`.

    Keeps the smallest number of leading triplets admissible; a discarded
    tail whose norm equals the threshold exactly is discarded (prefer the
    smaller rank).  At least one triplet is always kept; if discarding
    everything would have been admissible the result is flagged `floored`.
    """
    if abs_threshold < 0:
        raise ValueError("abs_threshold must be >= 0")
    full = svd(m)
    s = full.singular_values
    # tail_sq[r] = sum of squares of discarded values when keeping r triplets
    tail_sq = np.concatenate([np.cumsum(s[::-1] ** 2)[::-1], [0.0]])
    admissible = np.nonzero(tail_sq <= abs_threshold**2)[0]
    r = int(admissible[0])
    floored = r == 0
    r = max(r, 1)
    return SvdResult(full.u[:, :r], s[:r].copy(), full.vt[:r], floored=floored)


def sym_eig(m, asym_tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted
    non-increasingly and eigenvectors as the matching orthonormal columns.
    Raises on input whose relative asymmetry exceeds `asym_tol`.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > asym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return w[::-1].copy(), v[:, ::-1].copy()


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b
