"""Functional tensor-train layer on Gauss-Legendre tensor grids.

A multivariate function is represented by the tensor train of its values on
the grid ``{xi_1, ..., xi_n}^d`` of Gauss-Legendre nodes scaled to
``[-a, a]``; the function itself is the matching multivariate Lagrange
interpolant.  Because the nodes carry quadrature weights that are exact up
to degree ``2n - 1``, the L2 norm of the interpolant over the box equals
the Frobenius norm of the value tensor scaled entrywise by the square roots
of the weight products, and rank truncation at relative accuracy eps in
that weighted norm yields an interpolant within relative L2 error eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tt import TtTensor

__all__ = [
    "FttApprox",
    "InterpolationGrid",
    "eval_interpolant",
    "make_grid",
    "sampled_relative_error",
    "truncate_to_accuracy",
    "weighted_l2_norm",
]


def _legendre_nodes(n: int, newton_tol: float = 1e-15, max_newton: int = 100):
    """Roots and quadrature weights of the n-th Legendre polynomial on [-1, 1].

    Newton iteration on the three-term recurrence, started from Chebyshev
    angles; the classical weight formula 2 / ((1 - x^2) P_n'(x)^2) follows.
    """
    if n == 1:
        return np.zeros(1), np.full(1, 2.0)
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (4 * k - 1) / (4 * n + 2))
    dp = np.ones_like(x)
    for _ in range(max_newton):
        p_prev, p = np.ones_like(x), x.copy()
        for j in range(2, n + 1):
            p_prev, p = p, ((2 * j - 1) * x * p - (j - 1) * p_prev) / j
        dp = n * (x * p - p_prev) / (x * x - 1.0)
        step = p / dp
        x -= step
        if np.max(np.abs(step)) <= newton_tol:
            break
    else:
        raise RuntimeError(
            f"Newton iteration for Legendre roots did not converge "
            f"within {max_newton} iterations"
        )
    x = 0.5 * (x - x[::-1])  # enforce exact symmetry about 0
    p_prev, p = np.ones_like(x), x.copy()
    for j in range(2, n + 1):
        p_prev, p = p, ((2 * j - 1) * x * p - (j - 1) * p_prev) / j
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


@dataclass
class InterpolationGrid:
    """Per-axis Gauss-Legendre nodes and weights on ``[-a, a]^d``.

    Treat instances as immutable; `barycentric_weights` is a lazy cache.
    """

    d: int
    a: float
    n: int
    nodes: np.ndarray
    weights: np.ndarray
    _bary: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def barycentric_weights(self) -> np.ndarray:
        if self._bary is None:
            diff = self.nodes[:, None] - self.nodes[None, :]
            np.fill_diagonal(diff, 1.0)
            logs = np.sum(np.log(np.abs(diff)), axis=1)
            signs = np.prod(np.sign(diff), axis=1)
            # normalize in log space; any common factor cancels in the formula
            w = signs * np.exp(-(logs - np.median(logs)))
            self._bary = w
        return self._bary


def make_grid(d: int, a: float, n: int) -> InterpolationGrid:
    """Gauss-Legendre grid with `n` nodes per axis on ``[-a, a]^d``.

    The weights carry the Lebesgue scaling of the interval, so they sum to
    ``2 a`` and integrate polynomials up to degree ``2 n - 1`` exactly.
    """
    if n < 1:
        raise ValueError("need at least one node per axis")
    if a <= 0:
        raise ValueError("half-width a must be positive")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    x, w = _legendre_nodes(n)
    return InterpolationGrid(d=d, a=float(a), n=int(n), nodes=a * x, weights=a * w)


@dataclass
class FttApprox:
    """Interpolant defined by a tensor train of node values on `grid`."""

    grid: InterpolationGrid
    values: TtTensor
    _weighted: TtTensor | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.values.ndim != self.grid.d:
            raise ValueError("value tensor dimension does not match grid")
        if any(n != self.grid.n for n in self.values.mode_sizes):
            raise ValueError("value tensor mode sizes must equal the node count")

    @property
    def weighted_values(self) -> TtTensor:
        """Value tensor scaled by sqrt of the quadrature weights (cached)."""
        if self._weighted is None:
            root = np.sqrt(self.grid.weights)
            self._weighted = self.values.mode_scaled([root] * self.grid.d)
        return self._weighted


def _basis_matrix(grid: InterpolationGrid, coords: np.ndarray) -> np.ndarray:
    """Lagrange basis values, shape (len(coords), n); barycentric form."""
    diff = coords[:, None] - grid.nodes[None, :]
    hit = diff == 0.0
    out = np.empty_like(diff)
    safe = np.where(hit, 1.0, diff)
    terms = grid.barycentric_weights[None, :] / safe
    denom = np.sum(terms, axis=1)
    out = terms / denom[:, None]
    rows_hit = hit.any(axis=1)
    if np.any(rows_hit):
        out[rows_hit] = hit[rows_hit].astype(float)
    return out


def eval_interpolant(fa: FttApprox, x, return_outside_mask: bool = False):
    """Interpolant value(s) at point(s) `x` inside ``[-a, a]^d``.

    Accepts one point of shape ``(d,)`` or a batch ``(m, d)``.  Points
    outside the box are extrapolated rather than rejected (importance
    sampling can propose boundary points under rounding); the optional
    outside mask reports them.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != fa.grid.d:
        raise ValueError(f"points must have {fa.grid.d} coordinates")
    outside = np.any(np.abs(pts) > fa.grid.a, axis=1)
    vec = None
    for j, core in enumerate(fa.values.cores):
        basis = _basis_matrix(fa.grid, pts[:, j])
        r1, n, r2 = core.shape
        collapsed = (basis @ core.transpose(1, 0, 2).reshape(n, r1 * r2))
        collapsed = collapsed.reshape(-1, r1, r2)
        if vec is None:
            vec = collapsed[:, 0, :]
        else:
            vec = np.einsum("ma,mab->mb", vec, collapsed)
    values = vec[:, 0]
    if single:
        values = float(values[0])
        outside = bool(outside[0])
    if return_outside_mask:
        return values, outside
    return values


def weighted_l2_norm(fa: FttApprox) -> float:
    """L2(Q) norm of the interpolant via the weighted Frobenius norm."""
    return fa.weighted_values.frobenius_norm()


def truncate_to_accuracy(fa: FttApprox, eps: float):
    """Rank truncation at relative accuracy `eps` in the L2(Q) inner product.

    The value tensor is scaled by the square-root weights, rounded, and
    unscaled, so the reported per-split ranks are exactly the ranks of an
    interpolant within relative L2(Q) error `eps`.  Returns the truncated
    approximation and its connecting ranks ``(r_1, ..., r_{d-1})``.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    root = np.sqrt(fa.grid.weights)
    rounded = fa.weighted_values.round(eps)
    values = rounded.mode_scaled([1.0 / root] * fa.grid.d)
    result = FttApprox(fa.grid, values)
    return result, rounded.ranks[1:-1]


def sampled_relative_error(fa, f_exact, sampler, m: int = 10_000, seed: int = 0):
    """Self-normalized importance-sampling estimate of the relative L2(Q) error.

    `sampler(rng, count)` must return points in Q of shape ``(count, d)``
    together with the log of the (unnormalized) proposal density at each
    point; any common normalization cancels in the ratio
    ``||f - p||_{L2(Q)} / ||f||_{L2(Q)}``.  Deterministic per `seed`.
    """
    if m < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    points, log_q = sampler(rng, m)
    points = np.asarray(points, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    if points.shape != (m, fa.grid.d) or log_q.shape != (m,):
        raise ValueError("sampler returned arrays of unexpected shape")
    f_vals = np.asarray(f_exact(points), dtype=float)
    p_vals = np.asarray(eval_interpolant(fa, points), dtype=float)
    weights = np.exp(-(log_q - np.max(log_q)))
    denom = np.sum(weights * f_vals**2)
    numer = np.sum(weights * (f_vals - p_vals) ** 2)
    if denom <= 0.0:
        raise ValueError("importance sample carries no mass of the target")
    return float(np.sqrt(numer / denom))
