"""Discrete tensor-train representation.

A tensor ``T`` with mode sizes ``n_1, ..., n_d`` is stored as a chain of
order-3 cores ``G_j`` of shape ``(r_{j-1}, n_j, r_j)`` with boundary ranks
``r_0 = r_d = 1``; the entry at a multi-index is the product of the matching
core slices.  Multi-indices are 0-based and matricizations use row-major
(C-order) flattening throughout: in the row group ``(i_1, ..., i_k)`` the
last index ``i_k`` varies fastest, matching ``numpy.reshape``.

Binary serialization layout (see `TtTensor.save`): magic ``b"TTGT"``, a
little-endian uint32 format version (currently 1), uint64 ``d``, uint64 mode
sizes ``n_1..n_d``, uint64 ranks ``r_0..r_d``, then the cores in order, each
flattened C-order as little-endian float64.
"""

from __future__ import annotations

import io

import numpy as np

__all__ = [
    "TtTensor",
    "matricization",
    "matricization_rank",
    "random_tt",
    "tt_svd",
]

_MAGIC = b"TTGT"
_FORMAT_VERSION = 1

# Dense guard for tt_svd / TtTensor.dense: product of mode sizes.
DEFAULT_DENSE_CAP = 10**7

# Singular values <= this multiple of the split's largest one count as
# numerical zeros, so exact low-rank structure is recovered despite roundoff.
NUMERICAL_RANK_TOL = 1e-10


class TtTensor:
    """Immutable-by-convention tensor train.

    Parameters
    ----------
    cores : sequence of ndarray
        Order-3 cores with chain-compatible ranks and unit boundary ranks.

    All operations return new `TtTensor` values and never mutate `self`,
    so instances can be shared freely between threads.
    """

    def __init__(self, cores, validate=True):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if validate:
            if not cores:
                raise ValueError("a tensor train needs at least one core")
            for j, c in enumerate(cores):
                if c.ndim != 3:
                    raise ValueError(f"core {j} is not order-3, shape {c.shape}")
                if not np.all(np.isfinite(c)):
                    raise ValueError(f"core {j} contains non-finite entries")
            if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
                raise ValueError("boundary ranks r_0 and r_d must equal 1")
            for j in range(len(cores) - 1):
                if cores[j].shape[2] != cores[j + 1].shape[0]:
                    raise ValueError(
                        f"rank mismatch between cores {j} and {j + 1}: "
                        f"{cores[j].shape} vs {cores[j + 1].shape}"
                    )
        self.cores = cores

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        """Full rank tuple ``(r_0, ..., r_d)`` including the unit boundaries."""
        return tuple(c.shape[0] for c in self.cores) + (1,)

    def max_rank(self) -> int:
        """Largest connecting rank ``max(r_1, ..., r_{d-1})``."""
        if self.ndim == 1:
            return 1
        return max(self.ranks[1:-1])

    def __repr__(self):
        return f"<TtTensor modes={self.mode_sizes} ranks={self.ranks}>"

    # -- evaluation ----------------------------------------------------

    def eval_entry(self, index) -> float:
        """Entry at one multi-index, as d chained vector-matrix products."""
        index = np.atleast_1d(np.asarray(index, dtype=int))
        if index.shape != (self.ndim,):
            raise ValueError(f"index must have length {self.ndim}")
        for j, (i, n) in enumerate(zip(index, self.mode_sizes)):
            if not 0 <= i < n:
                raise IndexError(f"index {i} out of range for mode {j} of size {n}")
        vec = self.cores[0][0, index[0], :]
        for j in range(1, self.ndim):
            vec = vec @ self.cores[j][:, index[j], :]
        return float(vec[0])

    def eval_entries(self, indices) -> np.ndarray:
        """Vectorized `eval_entry` for an ``(m, d)`` integer index array."""
        indices = np.asarray(indices, dtype=int)
        if indices.ndim != 2 or indices.shape[1] != self.ndim:
            raise ValueError(f"indices must have shape (m, {self.ndim})")
        for j, n in enumerate(self.mode_sizes):
            col = indices[:, j]
            if col.size and (col.min() < 0 or col.max() >= n):
                raise IndexError(f"index out of range for mode {j} of size {n}")
        vec = self.cores[0][0, indices[:, 0], :]
        for j in range(1, self.ndim):
            slices = self.cores[j][:, indices[:, j], :]
            vec = np.einsum("ma,amb->mb", vec, slices)
        return vec[:, 0]

    def dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        """Contract to the dense tensor; guarded against oversized requests."""
        total = int(np.prod(self.mode_sizes, dtype=np.int64))
        if total > cap:
            raise ValueError(
                f"dense tensor would hold {total} entries (cap {cap}); "
                "use cross approximation for tensors of this size"
            )
        out = self.cores[0].reshape(self.mode_sizes[0], -1)
        for c in self.cores[1:]:
            r1, n, r2 = c.shape
            out = out @ c.reshape(r1, n * r2)
            out = out.reshape(-1, r2)
        return out.reshape(self.mode_sizes)

    # -- algebra -------------------------------------------------------

    def __mul__(self, scalar):
        scalar = float(scalar)
        cores = [c.copy() for c in self.cores]
        cores[0] = cores[0] * scalar
        return TtTensor(cores, validate=False)

    __rmul__ = __mul__

    def __add__(self, other):
        """Entrywise sum via block-diagonal core concatenation."""
        if not isinstance(other, TtTensor):
            return NotImplemented
        if self.mode_sizes != other.mode_sizes:
            raise ValueError("mode sizes disagree")
        if self.ndim == 1:
            return TtTensor([self.cores[0] + other.cores[0]], validate=False)
        cores = [np.concatenate([self.cores[0], other.cores[0]], axis=2)]
        for a, b in zip(self.cores[1:-1], other.cores[1:-1]):
            ra1, n, ra2 = a.shape
            rb1, _, rb2 = b.shape
            top = np.concatenate([a, np.zeros((ra1, n, rb2))], axis=2)
            bot = np.concatenate([np.zeros((rb1, n, ra2)), b], axis=2)
            cores.append(np.concatenate([top, bot], axis=0))
        cores.append(np.concatenate([self.cores[-1], other.cores[-1]], axis=0))
        return TtTensor(cores, validate=False)

    def hadamard(self, other: "TtTensor") -> "TtTensor":
        """Entrywise product; output ranks are the products of input ranks."""
        if not isinstance(other, TtTensor):
            raise TypeError("hadamard expects another TtTensor")
        if self.mode_sizes != other.mode_sizes:
            raise ValueError("mode sizes disagree")
        cores = []
        for a, b in zip(self.cores, other.cores):
            ra1, n, ra2 = a.shape
            rb1, _, rb2 = b.shape
            c = np.einsum("anb,cnd->acnbd", a, b)
            cores.append(c.reshape(ra1 * rb1, n, ra2 * rb2))
        return TtTensor(cores, validate=False)

    def mode_scaled(self, factors) -> "TtTensor":
        """Scale mode j entrywise by the length-``n_j`` vector ``factors[j]``."""
        if len(factors) != self.ndim:
            raise ValueError("need one scaling vector per mode")
        cores = []
        for c, f in zip(self.cores, factors):
            f = np.asarray(f, dtype=float)
            if f.shape != (c.shape[1],):
                raise ValueError("scaling vector length does not match mode size")
            cores.append(c * f[None, :, None])
        return TtTensor(cores, validate=False)

    def dot(self, other: "TtTensor") -> float:
        """Inner product <self, other> by core-wise Gram accumulation."""
        if self.mode_sizes != other.mode_sizes:
            raise ValueError("mode sizes disagree")
        m = np.ones((1, 1))
        for a, b in zip(self.cores, other.cores):
            # two-step contraction keeps the cost at O(n r^3) per core
            tmp = np.tensordot(m, a, axes=(0, 0))          # (rb1, n, ra2)
            m = np.einsum("bnc,bnd->cd", tmp, b)           # (ra2, rb2)
        return float(m[0, 0])

    def frobenius_norm(self) -> float:
        return float(np.sqrt(max(self.dot(self), 0.0)))

    # -- orthogonalization and rounding ---------------------------------

    def _right_orthogonalized(self):
        """Cores with all but the first made row-orthonormal (right-to-left QR)."""
        cores = [c.copy() for c in self.cores]
        for j in range(self.ndim - 1, 0, -1):
            r1, n, r2 = cores[j].shape
            q, r = np.linalg.qr(cores[j].reshape(r1, n * r2).T)
            rnew = q.shape[1]
            cores[j] = q.T.reshape(rnew, n, r2)
            cores[j - 1] = np.tensordot(cores[j - 1], r.T, axes=(2, 0))
        return cores

    def round(self, rel_accuracy: float) -> "TtTensor":
        """Rank truncation with relative Frobenius error <= `rel_accuracy`.

        Two-pass sweep: right-to-left orthogonalization, then left-to-right
        truncated SVDs with the uniform per-split budget
        ``rel_accuracy * ||self||_F / sqrt(d - 1)``, which realizes the
        sqrt(d-1) quasi-optimality of sequential truncation.
        """
        if rel_accuracy < 0:
            raise ValueError("rel_accuracy must be >= 0")
        if self.ndim == 1:
            return TtTensor([self.cores[0].copy()], validate=False)
        cores = self._right_orthogonalized()
        norm = np.linalg.norm(cores[0])
        delta = rel_accuracy * norm / np.sqrt(self.ndim - 1)
        delta_sq = delta * delta
        for j in range(self.ndim - 1):
            r1, n, r2 = cores[j].shape
            u, s, vt = np.linalg.svd(cores[j].reshape(r1 * n, r2), full_matrices=False)
            tail_sq = np.concatenate([np.cumsum(s[::-1] ** 2)[::-1], [0.0]])
            keep = int(np.nonzero(tail_sq <= delta_sq)[0][0])
            keep = max(keep, 1)
            cores[j] = u[:, :keep].reshape(r1, n, keep)
            sv = s[:keep, None] * vt[:keep]
            cores[j + 1] = np.tensordot(sv, cores[j + 1], axes=(1, 0))
        return TtTensor(cores, validate=False)

    # -- serialization ---------------------------------------------------

    def save(self, path_or_file):
        """Write the binary representation documented in the module docstring."""
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "wb") as fh:
                self._write(fh)

    def _write(self, fh):
        fh.write(_MAGIC)
        fh.write(np.uint32(_FORMAT_VERSION).astype("<u4").tobytes())
        fh.write(np.asarray([self.ndim], dtype="<u8").tobytes())
        fh.write(np.asarray(self.mode_sizes, dtype="<u8").tobytes())
        fh.write(np.asarray(self.ranks, dtype="<u8").tobytes())
        for c in self.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path_or_file) -> "TtTensor":
        if hasattr(path_or_file, "read"):
            return cls._read(path_or_file)
        with open(path_or_file, "rb") as fh:
            return cls._read(fh)

    @classmethod
    def _read(cls, fh) -> "TtTensor":
        if fh.read(4) != _MAGIC:
            raise ValueError("not a TtTensor file (bad magic)")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        d = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        modes = np.frombuffer(fh.read(8 * d), dtype="<u8").astype(int)
        ranks = np.frombuffer(fh.read(8 * (d + 1)), dtype="<u8").astype(int)
        cores = []
        for j in range(d):
            count = ranks[j] * modes[j] * ranks[j + 1]
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            cores.append(data.reshape(ranks[j], modes[j], ranks[j + 1]).copy())
        return cls(cores)


def matricization(full, k: int) -> np.ndarray:
    """k-matricization: reshape to ``(n_1 ... n_k) x (n_{k+1} ... n_d)``, C-order."""
    full = np.asarray(full, dtype=float)
    if not 1 <= k <= full.ndim - 1:
        raise ValueError(f"split index must lie in 1..{full.ndim - 1}")
    rows = int(np.prod(full.shape[:k]))
    return full.reshape(rows, -1)


def matricization_rank(full, k: int, tol: float = NUMERICAL_RANK_TOL) -> int:
    """Numerical rank of the k-matricization: count of sigma > tol * sigma_1."""
    s = np.linalg.svd(matricization(full, k), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def tt_svd(
    full,
    abs_threshold_per_split: float = 0.0,
    rel_zero_tol: float = NUMERICAL_RANK_TOL,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> TtTensor:
    """Sequential-SVD construction of a tensor train from a dense tensor.

    At each split the discarded singular-value tail has l2 norm at most
    `abs_threshold_per_split`, so the total Frobenius error is bounded by
    ``sqrt(d-1)`` times that threshold.  Independently of the threshold,
    singular values at or below ``rel_zero_tol * sigma_1`` of a split are
    treated as numerical zeros; with threshold 0 the ranks therefore equal
    the numerical matricization ranks.
    """
    full = np.asarray(full, dtype=float)
    if abs_threshold_per_split < 0:
        raise ValueError("abs_threshold_per_split must be >= 0")
    total = int(np.prod(full.shape, dtype=np.int64))
    if total > dense_cap:
        raise ValueError(
            f"dense input has {total} entries (cap {dense_cap}); "
            "use cross approximation instead"
        )
    modes = full.shape
    d = full.ndim
    if d == 1:
        return TtTensor([full.reshape(1, modes[0], 1)])
    thr_sq = abs_threshold_per_split**2
    cores = []
    rank = 1
    mat = full.reshape(modes[0], -1)
    for j in range(d - 1):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        tail_sq = np.concatenate([np.cumsum(s[::-1] ** 2)[::-1], [0.0]])
        keep_thr = int(np.nonzero(tail_sq <= thr_sq)[0][0])
        keep_rel = int(np.count_nonzero(s > rel_zero_tol * s[0])) if s[0] > 0 else 0
        keep = max(1, min(keep_thr, keep_rel))
        cores.append(u[:, :keep].reshape(rank, modes[j], keep))
        mat = s[:keep, None] * vt[:keep]
        rank = keep
        if j < d - 2:
            mat = mat.reshape(rank * modes[j + 1], -1)
    cores.append(mat.reshape(rank, modes[-1], 1))
    return TtTensor(cores, validate=False)


def random_tt(mode_sizes, ranks, rng) -> TtTensor:
    """Random tensor train with i.i.d. standard normal core entries.

    `ranks` gives the connecting ranks ``r_1 .. r_{d-1}`` (an int is
    broadcast); they are clipped to the maximal attainable matricization
    ranks so the requested rank is always realizable.
    """
    mode_sizes = tuple(int(n) for n in mode_sizes)
    d = len(mode_sizes)
    if np.isscalar(ranks):
        ranks = [int(ranks)] * (d - 1)
    ranks = [int(r) for r in ranks]
    if len(ranks) != d - 1:
        raise ValueError("need d-1 connecting ranks")
    left = np.cumprod(mode_sizes)[:-1]
    right = np.cumprod(mode_sizes[::-1])[:-1][::-1]
    full = [1] + [min(r, int(a), int(b)) for r, a, b in zip(ranks, left, right)] + [1]
    cores = [
        rng.standard_normal((full[j], mode_sizes[j], full[j + 1])) for j in range(d)
    ]
    return TtTensor(cores, validate=False)
