"""Minimal linear-algebra substrate: sparse/diagonal matrices, spectral norms, PSD checks.

Dense vectors are plain 1-D ``numpy.ndarray``s throughout the package; this
module adds the two structured matrix types everything else is built on,
plus the spectral-norm estimator and the positive-semidefiniteness check
used to validate step-size matrices.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "DiagonalMatrix",
    "spmv",
    "spectral_norm",
    "check_psd",
]

# Power iteration bounds (deterministic: all-ones start vector).
_POWER_MAX_ITERS = 10_000


def _as_float_array(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite (no NaN/Inf)")
    return arr


class SparseMatrix:
    """Immutable sparse matrix stored as CSR, built from (row, col, value) triples.

    Duplicate (row, col) pairs are rejected rather than summed, so the triple
    representation is canonical and serialization round-trips exactly.
    """

    def __init__(self, rows: int, cols: int, row_idx, col_idx, values):
        if rows < 0 or cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = _as_float_array(values, "values")
        if not (row_idx.shape == col_idx.shape == values.shape):
            raise ValueError("row/col/value arrays must have equal length")
        if row_idx.size:
            if row_idx.min() < 0 or row_idx.max() >= rows:
                raise ValueError("row index out of range")
            if col_idx.min() < 0 or col_idx.max() >= cols:
                raise ValueError("col index out of range")
            keys = row_idx * cols + col_idx
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (row, col) entries")
        self.rows = int(rows)
        self.cols = int(cols)
        self._csr = sp.csr_matrix(
            (values, (row_idx, col_idx)), shape=(self.rows, self.cols)
        )
        self._csr.data.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self._csr.nnz)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = _as_float_array(a, "matrix")
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], r, c, a[r, c])

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "SparseMatrix":
        idx = np.arange(n)
        return cls(n, n, idx, idx, np.full(n, float(scale)))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.cols,):
            raise ValueError(
                f"dimension mismatch: matrix is {self.rows}x{self.cols}, "
                f"vector has shape {v.shape}"
            )
        return self._csr @ v

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.rows,):
            raise ValueError(
                f"dimension mismatch: matrix is {self.rows}x{self.cols}, "
                f"vector has shape {v.shape}"
            )
        return self._csr.T @ v

    def matmat(self, x: np.ndarray) -> np.ndarray:
        """Product against a dense matrix with self.cols rows."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.cols:
            raise ValueError("dimension mismatch in matmat")
        return self._csr @ x

    def rmatmat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.rows:
            raise ValueError("dimension mismatch in rmatmat")
        return self._csr.T @ x

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=0)).ravel()

    def select_rows(self, mask: np.ndarray) -> "SparseMatrix":
        coo = self._csr[np.asarray(mask)].tocoo()
        return SparseMatrix(coo.shape[0], coo.shape[1], coo.row, coo.col, coo.data)

    def dense(self) -> np.ndarray:
        return self._csr.toarray()

    def to_triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Triples in row-major order."""
        coo = self._csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def save(self, path) -> None:
        """Text format: header 'rows cols nnz', then one 'row col value' per line."""
        r, c, v = self.to_triples()
        with open(path, "w") as fh:
            fh.write(f"{self.rows} {self.cols} {self.nnz}\n")
            for ri, ci, vi in zip(r, c, v):
                fh.write(f"{ri} {ci} {float(vi)!r}\n")

    @classmethod
    def load(cls, path) -> "SparseMatrix":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ValueError("expected header 'rows cols nnz'")
            rows, cols, nnz = (int(t) for t in header)
            r = np.empty(nnz, dtype=np.int64)
            c = np.empty(nnz, dtype=np.int64)
            v = np.empty(nnz, dtype=float)
            for i in range(nnz):
                parts = fh.readline().split()
                if len(parts) != 3:
                    raise ValueError(f"malformed triple on line {i + 2}")
                r[i], c[i], v[i] = int(parts[0]), int(parts[1]), float(parts[2])
        return cls(rows, cols, r, c, v)

    def __repr__(self) -> str:
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


class DiagonalMatrix:
    """Immutable diagonal matrix; `require_psd` enforces nonnegative entries."""

    def __init__(self, diagonal, require_psd: bool = False):
        diag = _as_float_array(diagonal, "diagonal")
        if diag.ndim != 1:
            raise ValueError("diagonal must be 1-D")
        if require_psd and diag.size and diag.min() < 0:
            raise ValueError("PSD diagonal matrix requires nonnegative entries")
        diag.flags.writeable = False
        self.diag = diag

    @property
    def shape(self) -> tuple[int, int]:
        n = self.diag.size
        return (n, n)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.diag.size,):
            raise ValueError("dimension mismatch in diagonal matvec")
        return self.diag * v

    rmatvec = matvec

    def solve(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) / self.diag

    def dense(self) -> np.ndarray:
        return np.diag(self.diag)

    def is_positive(self, tol: float = 0.0) -> bool:
        return bool(self.diag.size == 0 or self.diag.min() > tol)

    def __repr__(self) -> str:
        return f"DiagonalMatrix(n={self.diag.size})"


def spmv(m: SparseMatrix, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Sparse matrix-vector product; `transpose=True` applies the adjoint."""
    return m.rmatvec(v) if transpose else m.matvec(v)


def spectral_norm(m, rel_tol: float = 1e-9) -> float:
    """Largest singular value, via power iteration on M^T M.

    Deterministic: starts from the normalized all-ones vector and stops when
    successive Rayleigh quotients agree to `rel_tol` relative (or after
    10 000 iterations). Returns 0.0 for the zero matrix.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    if isinstance(m, SparseMatrix):
        matvec, rmatvec, cols = m.matvec, m.rmatvec, m.cols
    else:
        a = np.asarray(m, dtype=float)
        matvec, rmatvec, cols = (lambda v: a @ v), (lambda v: a.T @ v), a.shape[1]
    if cols == 0:
        return 0.0
    v = np.ones(cols) / np.sqrt(cols)
    rayleigh = 0.0
    for _ in range(_POWER_MAX_ITERS):
        w = rmatvec(matvec(v))
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        new_rayleigh = float(v @ w)
        v = w / norm_w
        if abs(new_rayleigh - rayleigh) <= rel_tol * abs(new_rayleigh):
            rayleigh = new_rayleigh
            break
        rayleigh = new_rayleigh
    return float(np.sqrt(max(rayleigh, 0.0)))


def check_psd(m: np.ndarray, tol: float = 1e-10) -> bool:
    """True iff the symmetric dense matrix has min eigenvalue >= -tol.

    Raises ValueError when the input is asymmetric beyond `tol`.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (m + m.T)
    if sym.size == 0:
        return True
    min_eig = float(np.linalg.eigvalsh(sym)[0])
    return min_eig >= -tol
