"""Sparse Hermitian operators with upper-triangle storage.

Every Hamiltonian and observable in the package lives in a fixed basis as a
:class:`SparseOperator`.  Only entries with ``row <= col`` are stored; the
lower triangle is implied by Hermitian conjugation, which halves memory and
makes Hermiticity structural rather than accidental.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["SparseOperator", "OperatorAccumulator", "linear_combination"]


def linear_combination(parts):
    """sum of coef * op over (coef, SparseOperator) pairs, skipping the
    deduplication pass: a fast path for rebuilding parameter-linear
    Hamiltonians inside ramps.  Repeated coordinates are summed when the
    sparse matrix is materialized."""
    parts = [(c, op) for c, op in parts if c != 0.0 and op.nnz_stored]
    if not parts:
        raise ValueError("empty linear combination")
    dim = parts[0][1].dim
    if any(op.dim != dim for _, op in parts):
        raise ValueError("dimension mismatch in linear combination")
    rows = np.concatenate([op.rows for _, op in parts])
    cols = np.concatenate([op.cols for _, op in parts])
    vals = np.concatenate([c * op.vals for c, op in parts])
    herm = all(op.hermitian for _, op in parts)
    return SparseOperator(dim, rows, cols, vals, hermitian=herm, _skip_checks=True)


class SparseOperator:
    """Hermitian sparse matrix, entries stored once with ``row <= col``.

    Parameters
    ----------
    dim : int
        Matrix dimension.
    rows, cols : integer arrays
        Upper-triangle coordinates, ``rows[i] <= cols[i]``, no duplicates.
    vals : complex array
        Entry values.  Diagonal entries must be real for a Hermitian operator.
    """

    def __init__(self, dim, rows, cols, vals, hermitian=True, _skip_checks=False):
        self.dim = int(dim)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=np.complex128)
        self.hermitian = bool(hermitian)
        self._csr = None
        self._eig = None
        if not _skip_checks:
            self._validate()

    def _validate(self):
        if self.rows.shape != self.cols.shape or self.rows.shape != self.vals.shape:
            raise ValueError("entry arrays must have equal length")
        if len(self.rows) and (self.rows.max() >= self.dim or self.cols.max() >= self.dim):
            raise ValueError("entry index out of range")
        if len(self.rows) and (self.rows > self.cols).any():
            raise ValueError("entries must satisfy row <= col")
        if self.hermitian:
            on_diag = self.rows == self.cols
            if np.abs(self.vals[on_diag].imag).max(initial=0.0) > 1e-14:
                raise ValueError("diagonal of a Hermitian operator must be real")
        # duplicates would silently double entries
        key = self.rows * self.dim + self.cols
        if len(key) != len(np.unique(key)):
            raise ValueError("duplicate (row, col) entries")

    # ------------------------------------------------------------------
    @classmethod
    def from_entries(cls, dim, rows, cols, vals, hermitian=True):
        """Build from raw entries: canonicalize to the upper triangle and sum
        duplicates.  Lower-triangle input entries are conjugated into place."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.complex128).copy()
        swap = rows > cols
        if hermitian:
            vals[swap] = vals[swap].conj()
        r = np.where(swap, cols, rows)
        c = np.where(swap, rows, cols)
        key = r * dim + c
        order = np.argsort(key, kind="stable")
        key, r, c, vals = key[order], r[order], c[order], vals[order]
        if len(key):
            uniq, start = np.unique(key, return_index=True)
            summed = np.add.reduceat(vals, start)
            r = r[start]
            c = c[start]
            vals = summed
        keep = np.abs(vals) > 0.0
        return cls(dim, r[keep], c[keep], vals[keep], hermitian=hermitian)

    @classmethod
    def diagonal(cls, diag):
        diag = np.asarray(diag)
        idx = np.arange(len(diag), dtype=np.int64)
        keep = diag != 0
        return cls(len(diag), idx[keep], idx[keep], diag[keep].astype(np.complex128))

    @classmethod
    def zeros(cls, dim):
        e = np.empty(0, dtype=np.int64)
        return cls(dim, e, e, np.empty(0, dtype=np.complex128))

    # ------------------------------------------------------------------
    @property
    def nnz_stored(self):
        return len(self.vals)

    def tocsr(self):
        """Full matrix (upper triangle mirrored) as ``scipy.sparse.csr_matrix``."""
        if self._csr is None:
            upper = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.dim, self.dim))
            if self.hermitian:
                off = self.rows != self.cols
                lower = sp.csr_matrix(
                    (self.vals[off].conj(), (self.cols[off], self.rows[off])),
                    shape=(self.dim, self.dim),
                )
                self._csr = (upper + lower).tocsr()
            else:
                self._csr = upper
        return self._csr

    def dense(self):
        return self.tocsr().toarray()

    def matvec(self, v):
        return self.tocsr().dot(v)

    def diag(self):
        d = np.zeros(self.dim, dtype=np.complex128)
        on = self.rows == self.cols
        np.add.at(d, self.rows[on], self.vals[on])
        return d.real if self.hermitian else d

    def is_diagonal(self):
        return bool((self.rows == self.cols).all())

    def eigh(self):
        """Dense eigendecomposition, cached.  Guarded by dimension."""
        if self._eig is None:
            if self.dim > 8192:
                raise ValueError(f"dense eigendecomposition refused at dim={self.dim}")
            w, v = np.linalg.eigh(self.dense())
            self._eig = (w, v)
        return self._eig

    def hermiticity_defect(self):
        """max |H - H^dagger| entry (0 by construction, checked explicitly)."""
        a = self.tocsr()
        d = a - a.conjugate().transpose()
        return np.abs(d.data).max(initial=0.0)

    def norm_upper_bound(self):
        """Cheap upper bound on the spectral norm (infinity norm)."""
        a = self.tocsr()
        return np.max(np.abs(a).sum(axis=1)) if a.nnz else 0.0

    # ------------------------------------------------------------------
    def scaled(self, factor):
        if np.iscomplexobj(np.asarray(factor)) and abs(np.imag(factor)) > 0:
            raise ValueError("scaling a Hermitian operator by a complex factor")
        return SparseOperator(self.dim, self.rows, self.cols, self.vals * factor,
                              hermitian=self.hermitian, _skip_checks=True)

    def __add__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return SparseOperator.from_entries(
            self.dim,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.vals, other.vals]),
            hermitian=self.hermitian and other.hermitian,
        )

    def expectation(self, v):
        return np.vdot(v, self.matvec(v))

    # ------------------------------------------------------------------
    def dump(self, path):
        """Text dump: header ``dim hermitian nnz`` then ``row col re im`` lines
        sorted by (row, col)."""
        order = np.lexsort((self.cols, self.rows))
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {int(self.hermitian)} {self.nnz_stored}\n")
            for i in order:
                v = self.vals[i]
                fh.write(f"{self.rows[i]} {self.cols[i]} "
                         f"{float(v.real)!r} {float(v.imag)!r}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            dim, herm, nnz = fh.readline().split()
            dim, herm, nnz = int(dim), bool(int(herm)), int(nnz)
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz, dtype=np.complex128)
            for i in range(nnz):
                r, c, re, im = fh.readline().split()
                rows[i], cols[i], vals[i] = int(r), int(c), complex(float(re), float(im))
        return cls(dim, rows, cols, vals, hermitian=herm)

    def __repr__(self):
        return f"SparseOperator(dim={self.dim}, nnz_stored={self.nnz_stored}, hermitian={self.hermitian})"


class OperatorAccumulator:
    """Collects matrix entries term by term, then finalizes to a SparseOperator.

    Accepts entries in any triangle; duplicates are summed on finalize.
    """

    def __init__(self, dim):
        self.dim = dim
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, rows, cols, vals):
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        vals = np.broadcast_to(np.asarray(vals, dtype=np.complex128), rows.shape)
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(np.array(vals))

    def add_diagonal(self, diag):
        idx = np.arange(self.dim, dtype=np.int64)
        keep = diag != 0
        self.add(idx[keep], idx[keep], np.asarray(diag)[keep])

    def finalize(self, hermitian=True):
        if not self._rows:
            return SparseOperator.zeros(self.dim)
        return SparseOperator.from_entries(
            self.dim,
            np.concatenate(self._rows),
            np.concatenate(self._cols),
            np.concatenate(self._vals),
            hermitian=hermitian,
        )
