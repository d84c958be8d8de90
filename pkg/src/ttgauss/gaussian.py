"""Gaussian model toolkit.

Covers the unnormalized density ``x -> exp(-x' G x / 2)`` of a centered
Gaussian with precision matrix ``G``, randomized generation of precision
matrices whose subdiagonal blocks carry a prescribed singular spectrum,
spectrum analysis of those blocks, the cutoff radius for restricting the
density to a box, and closed-form evaluators for the a-priori rank bounds
(fixed-rank and exponential-decay spectra) together with their helper
quantities.  Everything here is pure and deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import as_matrix

__all__ = [
    "ExpDecayBound",
    "ExpDecaySpectrum",
    "FixedRankSpectrum",
    "GeneratorConvergenceError",
    "PrecisionMatrix",
    "SubdiagonalAnalysis",
    "bound_exp_decay",
    "bound_low_rank",
    "bound_low_rank_simplified",
    "chebyshev_interp_error_bound",
    "cutoff_radius",
    "density_log",
    "gaussian_box_sampler",
    "generate_precision",
    "load_matrix_csv",
    "numerical_rank",
    "save_matrix_csv",
    "subdiagonal_blocks",
    "truncation_count",
]

DEFAULT_TOLERANCE_GRID = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)


class GeneratorConvergenceError(RuntimeError):
    """Alternating spectrum projection did not converge; carries the deviation."""

    def __init__(self, deviation: float, iterations: int):
        super().__init__(
            f"subdiagonal spectra deviate by {deviation:.3e} after "
            f"{iterations} alternations"
        )
        self.deviation = deviation
        self.iterations = iterations


class PrecisionMatrix:
    """Symmetric positive definite precision matrix with cached lambda_min."""

    def __init__(self, gamma, asym_tol: float = 1e-12):
        gamma = as_matrix(gamma, "gamma")
        if gamma.shape[0] != gamma.shape[1]:
            raise ValueError("precision matrix must be square")
        scale = np.abs(gamma).max()
        if scale > 0 and np.abs(gamma - gamma.T).max() > asym_tol * scale:
            raise ValueError("precision matrix is not symmetric within tolerance")
        self.gamma = 0.5 * (gamma + gamma.T)
        self.lambda_min = float(np.linalg.eigvalsh(self.gamma)[0])
        if self.lambda_min <= 0:
            raise ValueError(
                f"precision matrix is not positive definite "
                f"(lambda_min = {self.lambda_min:.3e})"
            )

    @property
    def d(self) -> int:
        return self.gamma.shape[0]

    def __repr__(self):
        return f"<PrecisionMatrix d={self.d} lambda_min={self.lambda_min:.4g}>"


@dataclass(frozen=True)
class FixedRankSpectrum:
    """Every subdiagonal block gets `l` singular values equal to `sigma`."""

    l: int
    sigma: float

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("rank l must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def singular_values(self, count: int) -> np.ndarray:
        out = np.zeros(count)
        out[: min(self.l, count)] = self.sigma
        return out

    def describe(self) -> str:
        return f"fixed_rank(l={self.l},sigma={self.sigma:g})"


@dataclass(frozen=True)
class ExpDecaySpectrum:
    """Singular values ``alpha * exp(-theta * i)`` for i = 1, 2, ...

    Blocks smaller than the decay length simply truncate the sequence.
    """

    alpha: float
    theta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.theta <= 0:
            raise ValueError("alpha and theta must be > 0")

    def singular_values(self, count: int) -> np.ndarray:
        i = np.arange(1, count + 1)
        return self.alpha * np.exp(-self.theta * i)

    def describe(self) -> str:
        return f"exp_decay(alpha={self.alpha:g},theta={self.theta:g})"


@dataclass
class SubdiagonalAnalysis:
    """Singular spectra of the blocks ``gamma[k:, :k]`` for k = 1 .. d-1.

    `ranks` holds the numerical ranks on `tolerance_grid`, one row per
    tolerance, ranks measured relative to each block's largest value.
    """

    spectra: list
    tolerance_grid: tuple
    ranks: np.ndarray

    @property
    def d(self) -> int:
        return len(self.spectra) + 1

    def max_rank(self, tol: float, relative: bool = True) -> int:
        return max(numerical_rank(s, tol, relative) for s in self.spectra)


def numerical_rank(spectrum, tol: float, relative: bool = True) -> int:
    """Count of singular values above the (relative or absolute) cutoff."""
    s = np.asarray(spectrum, dtype=float)
    if s.size == 0:
        return 0
    cut = tol * s[0] if relative else tol
    return int(np.count_nonzero(s > cut))


def density_log(prec: PrecisionMatrix, x) -> np.ndarray | float:
    """Log of the unnormalized density: ``-x' gamma x / 2``.

    Exponentiation is left to the caller; far from the origin the density
    underflows while its log stays representable.  Accepts a single point
    ``(d,)`` or a batch ``(m, d)``.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != prec.d:
        raise ValueError(f"points must have {prec.d} coordinates")
    vals = -0.5 * np.einsum("mi,ij,mj->m", pts, prec.gamma, pts)
    return float(vals[0]) if single else vals


def subdiagonal_blocks(
    prec: PrecisionMatrix, tolerance_grid=DEFAULT_TOLERANCE_GRID
) -> SubdiagonalAnalysis:
    """Singular spectra of all subdiagonal blocks of the precision matrix."""
    return analyze_blocks(prec.gamma, tolerance_grid)


def analyze_blocks(matrix, tolerance_grid=DEFAULT_TOLERANCE_GRID) -> SubdiagonalAnalysis:
    """Block spectra of any symmetric matrix (precision or covariance)."""
    m = as_matrix(matrix)
    d = m.shape[0]
    if d < 2:
        raise ValueError("need dimension >= 2 to form subdiagonal blocks")
    spectra = []
    for k in range(1, d):
        block = m[k:, :k]
        spectra.append(np.linalg.svd(block, compute_uv=False))
    tolerance_grid = tuple(tolerance_grid)
    ranks = np.array(
        [[numerical_rank(s, tol) for s in spectra] for tol in tolerance_grid],
        dtype=int,
    )
    return SubdiagonalAnalysis(spectra=spectra, tolerance_grid=tolerance_grid, ranks=ranks)


def _spectrum_deviation(g: np.ndarray, spec) -> float:
    d = g.shape[0]
    dev = 0.0
    for k in range(1, d):
        s = np.linalg.svd(g[k:, :k], compute_uv=False)
        dev = max(dev, float(np.max(np.abs(s - spec.singular_values(s.size)))))
    return dev


def _alternate_spectra(g: np.ndarray, spec, cycles: int, stop_tol: float) -> np.ndarray:
    """Cyclic block-spectrum replacement (writes into both triangles)."""
    d = g.shape[0]
    for _ in range(cycles):
        for k in range(1, d):
            u, s, vt = np.linalg.svd(g[k:, :k], full_matrices=False)
            block = (u * spec.singular_values(s.size)) @ vt
            g[k:, :k] = block
            g[:k, k:] = block.T
        if _spectrum_deviation(g, spec) <= stop_tol:
            break
    return g


def _polish_spectra(g: np.ndarray, spec) -> np.ndarray:
    """Trust-region least-squares solve for the strictly-lower triangle.

    The cyclic replacement above approaches the constraint manifold only
    sublinearly, so it serves as a warm start.  For distinct target values
    the residual is the spectrum deviation itself; repeated values (the
    fixed-rank family) make sorted singular values non-smooth, so there the
    equivalent polynomial system ``A A' A = sigma^2 A`` with a trace pin
    ``||A||_F^2 = r sigma^2`` is solved instead.
    """
    from scipy.optimize import least_squares

    d = g.shape[0]
    rows, cols = np.tril_indices(d, -1)
    diag = np.diag(g).copy()

    def assemble(x):
        m = np.zeros((d, d))
        m[rows, cols] = x
        m = m + m.T
        m[np.diag_indices(d)] = diag
        return m

    if isinstance(spec, FixedRankSpectrum):
        sig2 = spec.sigma**2

        def residual(x):
            m = assemble(x)
            parts = []
            for k in range(1, d):
                a = m[k:, :k]
                r = min(spec.l, k, d - k)
                parts.append(((a @ a.T @ a) - sig2 * a).ravel() / sig2)
                parts.append([(np.sum(a * a) - r * sig2) / sig2])
            return np.concatenate(parts)

    else:

        def residual(x):
            m = assemble(x)
            parts = []
            for k in range(1, d):
                s = np.linalg.svd(m[k:, :k], compute_uv=False)
                parts.append(s - spec.singular_values(s.size))
            return np.concatenate(parts)

    sol = least_squares(residual, g[rows, cols], method="trf",
                        xtol=3e-16, ftol=3e-16, gtol=3e-16)
    return assemble(sol.x)


def generate_precision(
    d: int,
    spec,
    lambda_min_target: float,
    seed: int,
    spectrum_tol: float = 1e-6,
    max_iters: int = 500,
) -> PrecisionMatrix:
    """Random precision matrix with prescribed subdiagonal singular spectra.

    Starts from ``M M'`` with entries of ``M`` uniform on [-1, 1], applies
    the cyclic block-spectrum replacement (at most `max_iters` cycles, with
    an early polish once it reaches the solver's basin), and finishes with
    a least-squares polish of the strictly-lower triangle.  A scaled
    identity then shifts the smallest eigenvalue onto `lambda_min_target`,
    which leaves every subdiagonal block untouched.  Deterministic per
    `seed`.
    """
    if d < 2:
        raise ValueError("need dimension >= 2")
    if lambda_min_target <= 0:
        raise ValueError("lambda_min_target must be > 0")
    rng = np.random.default_rng(seed)
    m = rng.uniform(-1.0, 1.0, size=(d, d))
    g = m @ m.T
    if isinstance(spec, FixedRankSpectrum) and spec.sigma == 0.0:
        g = np.diag(np.diag(g))  # no coupling requested at all
    else:
        g = _alternate_spectra(g, spec, min(50, max_iters), 1e-3)
        if _spectrum_deviation(g, spec) > spectrum_tol:
            g = _polish_spectra(g, spec)
        if _spectrum_deviation(g, spec) > spectrum_tol:
            g = _alternate_spectra(g, spec, max_iters, spectrum_tol)
    deviation = _spectrum_deviation(g, spec)
    if deviation > spectrum_tol:
        raise GeneratorConvergenceError(deviation, max_iters)
    lam = float(np.linalg.eigvalsh(g)[0])
    g += (lambda_min_target - lam) * np.eye(d)
    return PrecisionMatrix(g)


def gaussian_box_sampler(prec: PrecisionMatrix, a: float, max_batches: int = 1000):
    """Sampler from the target Gaussian restricted to ``[-a, a]^d``.

    Returns ``sampler(rng, count) -> (points, log_density)`` drawing from
    ``N(0, gamma^{-1})`` with rejection of points outside the box; the log
    density is the unnormalized target, suitable for the self-normalized
    importance-sampling error estimate.  Raises when every draw lands
    outside the box.
    """
    chol = np.linalg.cholesky(prec.gamma)

    def sampler(rng, count):
        accepted = []
        total = 0
        for _ in range(max_batches):
            z = rng.standard_normal((count, prec.d))
            x = np.linalg.solve(chol.T, z.T).T
            keep = np.all(np.abs(x) <= a, axis=1)
            if np.any(keep):
                accepted.append(x[keep])
                total += int(np.count_nonzero(keep))
            if total >= count:
                break
        if total == 0:
            raise RuntimeError(
                "all proposal samples were rejected; the box is too small "
                "for the target Gaussian"
            )
        pts = np.vstack(accepted)[:count]
        return pts, density_log(prec, pts)

    return sampler


def cutoff_radius(lambda_min: float, d: int, eps: float) -> float:
    """Half-width ``a`` of a box carrying all but an eps tail of the density.

    ``a = sqrt((2 / lambda_min) * log(sqrt(2 d) / eps))``; the argument of
    the logarithm must exceed 1.
    """
    if lambda_min <= 0:
        raise ValueError("lambda_min must be > 0")
    if d < 2:
        raise ValueError("need dimension >= 2")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    ratio = math.sqrt(2 * d) / eps
    if ratio <= 1.0:
        raise ValueError(
            f"eps = {eps:g} is not smaller than sqrt(2 d) = {math.sqrt(2 * d):g}; "
            "the cutoff radius is undefined"
        )
    return math.sqrt(2.0 / lambda_min * math.log(ratio))


def bound_low_rank(spec: FixedRankSpectrum, lambda_min: float, d: int, eps: float) -> float:
    """A-priori rank bound for fixed-rank subdiagonal spectra (tight form).

    ``((1 + 7 sigma / lambda_min) log(sqrt(8) d / eps) + log(e^{3/2} l / 2)) ** l``
    """
    _check_bound_args(lambda_min, d, eps)
    base = (1.0 + 7.0 * spec.sigma / lambda_min) * math.log(math.sqrt(8.0) * d / eps)
    base += math.log(math.e ** 1.5 * spec.l / 2.0)
    return base**spec.l


def bound_low_rank_simplified(
    spec: FixedRankSpectrum, lambda_min: float, d: int, eps: float
) -> float:
    """Simplified one-log form ``((1 + 7 sigma / lambda_min) log(7 l d / eps)) ** l``."""
    _check_bound_args(lambda_min, d, eps)
    base = (1.0 + 7.0 * spec.sigma / lambda_min) * math.log(7.0 * spec.l * d / eps)
    return base**spec.l


class ExpDecayBound(NamedTuple):
    bound: float
    c_const: float
    l_star: float


def bound_exp_decay(
    spec: ExpDecaySpectrum, lambda_min: float, d: int, eps: float
) -> ExpDecayBound:
    """A-priori rank bound for exponentially decaying subdiagonal spectra.

    With ``C = max(sqrt(8), 5 / theta, sigmoid(theta) * 4 alpha / lambda_min)``
    and ``L = log(C d / eps)`` the bound is
    ``exp(3 alpha / (lambda_min theta)) * (3 L) ** ((2 / theta) L)``
    (evaluated in log space; may be astronomically loose by design).
    `l_star` is the number of singular values that must be kept, evaluated
    at this module's cutoff radius for the same parameters.
    """
    _check_bound_args(lambda_min, d, eps)
    alpha, theta = spec.alpha, spec.theta
    sig = 1.0 / (1.0 + math.exp(-theta))  # e^theta / (1 + e^theta)
    c_const = max(math.sqrt(8.0), 5.0 / theta, sig * 4.0 * alpha / lambda_min)
    big_l = math.log(c_const * d / eps)
    log_bound = 3.0 * alpha / (lambda_min * theta)
    log_bound += (2.0 / theta) * big_l * math.log(3.0 * big_l)
    bound = math.exp(log_bound) if log_bound < 709 else math.inf
    a = cutoff_radius(lambda_min, d, eps)
    l_star = truncation_count(spec, a, eps)
    return ExpDecayBound(bound=bound, c_const=c_const, l_star=l_star)


def _check_bound_args(lambda_min: float, d: int, eps: float):
    if lambda_min <= 0:
        raise ValueError("lambda_min must be > 0")
    if d < 2:
        raise ValueError("need dimension >= 2")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")


def chebyshev_interp_error_bound(sigma_i: float, a: float, r: int) -> float:
    """Sup-norm error of order-`r` Chebyshev interpolation of ``exp(-sigma_i t)``
    on ``[-a^2, a^2]``: ``(sigma_i a^2)^r e^{sigma_i a^2} / (r! 2^{r-1})``,
    with the Stirling form ``(sigma_i e a^2 / (2 r))^r e^{sigma_i a^2}`` once
    the factorial overflows.
    """
    if r < 1:
        raise ValueError("interpolation order r must be >= 1")
    if sigma_i < 0:
        raise ValueError("sigma_i must be >= 0")
    if sigma_i == 0.0:
        return 0.0
    t = sigma_i * a * a
    try:
        return t**r * math.exp(t) / (math.factorial(r) * 2.0 ** (r - 1))
    except OverflowError:
        log_val = r * (math.log(sigma_i * math.e * a * a) - math.log(2.0 * r)) + t
        return math.exp(log_val) if log_val < 709 else math.inf


def truncation_count(spec: ExpDecaySpectrum, a: float, eps: float) -> float:
    """Number of singular values to keep before neglecting the rest is safe.

    ``l = (1 / theta) log(sigmoid(theta) * 3 alpha a^2 / (2 eps))`` where
    ``sigmoid(theta) = e^theta / (1 + e^theta)``; returned as a float, to be
    ceiled by callers that need an integer count.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    sig = 1.0 / (1.0 + math.exp(-spec.theta))
    return math.log(sig * 3.0 * spec.alpha * a * a / (2.0 * eps)) / spec.theta


def save_matrix_csv(path, matrix):
    """One matrix row per line, comma separated, full double precision."""
    m = as_matrix(matrix)
    np.savetxt(path, m, delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
