"""Time evolution and eigenpairs: exact, Krylov (Lanczos) and Trotterized.

The Krylov propagator substeps adaptively: each step's local error is taken
as the difference between the results at the last two subspace orders, and a
step whose estimate exceeds the tolerance is split in half (recursively).
Happy breakdown (the residual norm vanishing) means the Krylov space closed
and the step is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spl

from .basis import StateIndexMap
from .operators import SparseOperator

__all__ = ["StateVector", "PropagatorSpec", "Schedule", "Segment",
           "ground_space", "evolve", "ramp_evolve", "expm_krylov"]

_DENSE_EVOLVE_GUARD = 4096


@dataclass
class StateVector:
    """Complex amplitudes tied to a StateIndexMap; unit norm."""

    basis: StateIndexMap
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if len(self.amplitudes) != self.basis.dim:
            raise ValueError("amplitude length does not match the basis dimension")

    @classmethod
    def product_state(cls, basis, label):
        amp = np.zeros(basis.dim, dtype=np.complex128)
        amp[basis.index_of(label)[0]] = 1.0
        return cls(basis, amp)

    @classmethod
    def from_amplitudes(cls, basis, amplitudes, normalize=True):
        amp = np.asarray(amplitudes, dtype=np.complex128)
        if normalize:
            n = np.linalg.norm(amp)
            if n == 0:
                raise ValueError("cannot normalize the zero vector")
            amp = amp / n
        return cls(basis, amp)

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def check_norm(self, tol=1e-12):
        if abs(self.norm - 1.0) > tol:
            raise ValueError(f"state norm {self.norm} deviates from 1 by more than {tol}")

    def overlap(self, other):
        return np.vdot(self.amplitudes, other.amplitudes)

    def expectation(self, op):
        if isinstance(op, SparseOperator):
            return np.vdot(self.amplitudes, op.matvec(self.amplitudes))
        # diagonal observable given as an array
        return complex(np.sum(np.abs(self.amplitudes) ** 2 * np.asarray(op)))

    def copy(self):
        return StateVector(self.basis, self.amplitudes.copy())


@dataclass(frozen=True)
class PropagatorSpec:
    """How to apply exp(-i H t).

    method:
      "exact"    dense eigendecomposition (cached on the operator)
      "krylov"   Lanczos with `subspace_dim` vectors and local tolerance `tol`
      "trotter"  product formula of the given `order` (1 or 2) with step `dt`
                 over the term grouping supplied to :func:`evolve`
    """

    method: str = "krylov"
    subspace_dim: int = 24
    tol: float = 1e-10
    order: int = 2
    dt: float = None

    def __post_init__(self):
        if self.method not in ("exact", "krylov", "trotter"):
            raise ValueError(f"unknown propagator method {self.method!r}")
        if self.subspace_dim < 2:
            raise ValueError("krylov subspace needs at least 2 vectors")
        if self.method == "trotter":
            if self.order not in (1, 2):
                raise ValueError("trotter order must be 1 or 2")
            if self.dt is None or self.dt <= 0:
                raise ValueError("trotter needs dt > 0")


@dataclass(frozen=True)
class Segment:
    """One schedule segment: parameters interpolate linearly from `start` to
    `end` over `duration` (pass equal dicts for a constant segment)."""

    duration: float
    start: dict
    end: dict = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("segment durations must be positive")
        if self.end is None:
            object.__setattr__(self, "end", dict(self.start))
        for d in (self.start, self.end):
            for k, v in d.items():
                if not np.isfinite(v):
                    raise ValueError(f"schedule parameter {k} must stay finite")

    def params_at(self, s):
        """Parameters at fraction s in [0, 1] of the segment."""
        return {k: (1.0 - s) * self.start[k] + s * self.end[k] for k in self.start}


@dataclass(frozen=True)
class Schedule:
    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def total_duration(self):
        return sum(s.duration for s in self.segments)

    def params_at(self, t):
        if t < 0:
            raise ValueError("schedule time must be >= 0")
        acc = 0.0
        for seg in self.segments:
            if t <= acc + seg.duration or seg is self.segments[-1]:
                return seg.params_at(min(max((t - acc) / seg.duration, 0.0), 1.0))
            acc += seg.duration
        raise ValueError(f"time {t} beyond schedule end {self.total_duration}")


# ----------------------------------------------------------------------

def ground_space(h, basis=None, k=1, tol=1e-10, maxiter=None):
    """k lowest eigenpairs of a Hermitian operator.

    Returns a list of ``(eigenvalue, StateVector)`` when a basis is supplied
    (plain arrays otherwise); degenerate levels come out as an orthonormal
    set.  Raises on non-convergence, reporting the achieved residual.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dim = h.dim
    if dim <= 600 or k >= dim - 2:
        w, v = np.linalg.eigh(h.dense())
        w, v = w[:k], v[:, :k]
    else:
        try:
            w, v = spl.eigsh(h.tocsr(), k=k, which="SA", tol=tol / 10,
                             maxiter=maxiter)
        except spl.ArpackNoConvergence as err:
            got = len(err.eigenvalues)
            res = "unknown"
            if got:
                hv = h.matvec(err.eigenvectors[:, 0])
                res = float(np.linalg.norm(hv - err.eigenvalues[0] * err.eigenvectors[:, 0]))
            raise RuntimeError(
                f"eigensolver converged only {got}/{k} pairs; achieved residual {res}"
            ) from err
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    out = []
    for i in range(k):
        vec = v[:, i]
        resid = np.linalg.norm(h.matvec(vec) - w[i] * vec)
        if resid > max(tol, 1e-12) * max(1.0, abs(w[i])):
            raise RuntimeError(f"eigenpair {i} residual {resid:.3e} exceeds tol {tol}")
        sv = StateVector(basis, vec) if basis is not None else vec
        out.append((float(w[i]), sv))
    return out


def expm_krylov(h_csr, v, dt, m=24, tol=1e-10, _depth=0):
    """exp(-i dt H) v by the Lanczos method with adaptive step splitting."""
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return v
    if _depth > 40:
        raise RuntimeError("krylov step splitting failed to converge "
                           "(40 restarts); residual tolerance unreachable")
    V = np.empty((m, len(v)), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / nrm
    w = h_csr.dot(V[0])
    alpha[0] = np.vdot(V[0], w).real
    w -= alpha[0] * V[0]
    used = 1
    happy = False
    for j in range(1, m):
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * max(1.0, np.abs(alpha[:j]).max()):
            happy = True
            break
        V[j] = w / beta[j]
        w = h_csr.dot(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w -= alpha[j] * V[j] + beta[j] * V[j - 1]
        # full reorthogonalization keeps long evolutions stable
        proj = V[: j + 1].conj() @ w
        w -= proj @ V[: j + 1]
        used = j + 1
    T = np.diag(alpha[:used]) + np.diag(beta[1:used], 1) + np.diag(beta[1:used], -1)
    eT = sla.expm(-1j * dt * T)
    y_full = eT[:, 0]
    if not happy and used >= 3:
        # local error estimate: weight of the last Lanczos vector and the
        # difference against the order-(m-1) result
        T1 = T[: used - 1, : used - 1]
        y_less = sla.expm(-1j * dt * T1)[:, 0]
        err = np.linalg.norm(y_full[: used - 1] - y_less) + abs(y_full[-1])
        if err > tol:
            half = expm_krylov(h_csr, v, dt / 2, m, tol / 2, _depth + 1)
            return expm_krylov(h_csr, half, dt / 2, m, tol / 2, _depth + 1)
    return (y_full @ V[:used]) * nrm


def _evolve_exact(h, amp, times):
    if h.dim > _DENSE_EVOLVE_GUARD:
        raise ValueError(f"exact propagator refused at dim={h.dim}; use krylov")
    w, v = h.eigh()
    c0 = v.conj().T @ amp
    return [v @ (np.exp(-1j * w * t) * c0) for t in times]


def _trotter_groups(h, grouping):
    """Default grouping: all diagonal terms in one exactly-exponentiated
    group, every off-diagonal term in the other."""
    if grouping is not None:
        return list(grouping)
    on = h.rows == h.cols
    diag = SparseOperator(h.dim, h.rows[on], h.cols[on], h.vals[on], _skip_checks=True)
    off = SparseOperator(h.dim, h.rows[~on], h.cols[~on], h.vals[~on], _skip_checks=True)
    return [off, diag]


def _apply_group(g, amp, dt, diag_cache):
    key = id(g)
    if key not in diag_cache:
        diag_cache[key] = g.diag() if g.is_diagonal() else None
    d = diag_cache[key]
    if d is not None:
        return np.exp(-1j * dt * d) * amp
    return expm_krylov(g.tocsr(), amp, dt, m=30, tol=1e-12)


def _evolve_trotter(h, amp, times, prop, grouping):
    groups = _trotter_groups(h, grouping)
    cache = {}
    out = []
    t_now = 0.0
    cur = amp.copy()
    for t in times:
        span = t - t_now
        if span < -1e-12:
            raise ValueError("times must be ascending")
        nstep = max(int(round(span / prop.dt)), 0) if span > 0 else 0
        # land exactly on the requested time with a possibly shorter last step
        for i in range(nstep):
            cur = _trotter_step(groups, cur, prop.dt, prop.order, cache)
        rem = span - nstep * prop.dt
        if abs(rem) > 1e-12:
            cur = _trotter_step(groups, cur, rem, prop.order, cache)
        t_now = t
        out.append(cur.copy())
    return out


def _trotter_step(groups, amp, dt, order, cache):
    if order == 1:
        for g in groups:
            amp = _apply_group(g, amp, dt, cache)
        return amp
    for g in groups[:-1]:
        amp = _apply_group(g, amp, dt / 2, cache)
    amp = _apply_group(groups[-1], amp, dt, cache)
    for g in reversed(groups[:-1]):
        amp = _apply_group(g, amp, dt / 2, cache)
    return amp


def evolve(h, psi0, times, prop=PropagatorSpec(), grouping=None):
    """Propagate ``psi0`` through exp(-i H t) on an ascending time grid.

    Returns one StateVector per grid point.  The grid must start at t >= 0;
    t = 0 returns the input state unchanged.
    """
    times = np.asarray(times, dtype=float)
    if len(times) and (np.diff(times) < 0).any():
        raise ValueError("times must be ascending")
    if h.dim != psi0.basis.dim:
        raise ValueError("operator and state live on different bases")
    amp = psi0.amplitudes
    if prop.method == "exact":
        amps = _evolve_exact(h, amp, times)
    elif prop.method == "trotter":
        amps = _evolve_trotter(h, amp, times, prop, grouping)
    else:
        csr = h.tocsr()
        amps = []
        cur = amp.copy()
        t_now = 0.0
        for t in times:
            if t > t_now:
                cur = expm_krylov(csr, cur, t - t_now, prop.subspace_dim, prop.tol)
                t_now = t
            amps.append(cur.copy())
    return [StateVector(psi0.basis, a) for a in amps]


def ramp_evolve(model_builder, schedule, psi0, times, prop=PropagatorSpec(), dt=None):
    """Evolve under a time-dependent Hamiltonian H(params(t)).

    The time-ordered evolution is discretized piecewise-constant at step
    midpoints: between grid refinements the final state converges linearly in
    the step.  ``model_builder(params) -> SparseOperator`` is called once per
    step (cache inside the builder if rebuilding is expensive).

    ``dt`` defaults to 1/200 of the schedule duration and is shortened to
    land on every requested output time and segment boundary.
    """
    times = np.asarray(times, dtype=float)
    if (np.diff(times) < 0).any():
        raise ValueError("times must be ascending")
    total = schedule.total_duration
    if len(times) and times[-1] > total + 1e-9:
        raise ValueError("requested times extend beyond the schedule")
    if dt is None:
        dt = total / 200.0
    # step boundaries: regular grid plus every output time and segment edge
    edges = {0.0}
    acc = 0.0
    for seg in schedule.segments:
        acc += seg.duration
        edges.add(acc)
    edges.update(t for t in times if t <= total)
    nsteps = max(int(np.ceil(total / dt)), 1)
    edges.update(np.linspace(0.0, total, nsteps + 1))
    grid = np.array(sorted(edges))
    out = []
    cur = psi0.amplitudes.copy()
    want = list(times)
    if want and want[0] <= 1e-15:
        out.append(cur.copy())
        want.pop(0)
    for a, b in zip(grid[:-1], grid[1:]):
        params = schedule.params_at((a + b) / 2.0)
        h = model_builder(params)
        if prop.method == "exact":
            cur = _evolve_exact(h, cur, [b - a])[0]
        else:
            cur = expm_krylov(h.tocsr(), cur, b - a, prop.subspace_dim, prop.tol)
        while want and want[0] <= b + 1e-12:
            out.append(cur.copy())
            want.pop(0)
    return [StateVector(psi0.basis, a) for a in out]
