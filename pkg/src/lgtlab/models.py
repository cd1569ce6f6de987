"""Sparse Hamiltonians and named observables for the model zoo.

All builders take a parameter dataclass and a :class:`StateIndexMap` and
return a :class:`SparseOperator` on that basis.  Entries are accumulated in
the upper triangle only, so writing a term once also supplies its Hermitian
conjugate; terms that come in ``X + X^dagger`` pairs are therefore added in a
single orientation.

Site conventions follow :mod:`lgtlab.basis`: 1-based site ``ell`` is array
index ``j = ell - 1`` and the staggering factor ``(-1)^ell`` equals ``-(-1)^j``.
Natural units, lattice spacing ``a = 1`` unless passed explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import (SiteLayout, StateIndexMap, GaussU1QLM, GaussZ2Matter,
                    GaussZ2Plaquette2D, BlockadeConstraint, QLMLinkParity,
                    Unconstrained, enumerate_sector, _stag)
from .operators import OperatorAccumulator, SparseOperator

__all__ = [
    "SchwingerSpinParams", "QLMParams", "QLMGaugeOnlyParams", "PXPParams",
    "Z2OneDParams", "IsingLRParams", "Z2PureTwoDParams", "DflZ2Params",
    "build_schwinger_spin", "build_qlm", "build_qlm_gauge_only", "build_pxp",
    "build_z2_1d", "build_ising_lr", "build_z2_pure_2d", "build_dfl_z2",
    "reduce_theta", "chi_from_theta", "kappa_tilde",
    "pxp_equivalent_of_qlm", "ising_dual_of_z2_gauged", "z2_gauged_sector_hamiltonian",
    "matter_density_diag", "flux_diag", "electric_sz_diags", "charge_density_diags",
    "domain_wall_density_diag", "magnetization_diag", "string_length_diag",
    "bubble_count_diag", "site_occupation_diags",
]


# ----------------------------------------------------------------------
# parameter plumbing
# ----------------------------------------------------------------------

def reduce_theta(theta):
    """Reduce the topological angle to the (-pi, pi] branch."""
    t = math.remainder(theta, 2 * math.pi)
    if t <= -math.pi:
        t += 2 * math.pi
    return t


def chi_from_theta(g, theta):
    """Background-field coupling chi = g^2 (theta - pi) / (2 pi) after branch
    reduction of theta."""
    return g * g * (reduce_theta(theta) - math.pi) / (2 * math.pi)


def kappa_tilde(kappa, a, spin):
    """Link-normalized hopping: kappa / (2 a sqrt(S(S+1)))."""
    return kappa / (2.0 * a * math.sqrt(spin * (spin + 1.0)))


def _check_finite(**kwargs):
    for k, v in kwargs.items():
        arr = np.asarray(v, dtype=float)
        if not np.isfinite(arr).all():
            raise ValueError(f"coupling {k} must be finite, got {v}")


def _require_spin(spin):
    if spin <= 0 or round(2 * spin) != 2 * spin:
        raise ValueError(f"spin must be a positive half-integer, got {spin}")


@dataclass(frozen=True)
class SchwingerSpinParams:
    """Staggered-fermion chain with the gauge field eliminated through the
    Gauss law (open boundary, zero incoming flux).  ``electric_variant`` picks
    the standard asymmetric electric term or the charge-conjugation/parity
    symmetric rewriting valid in the zero-total-charge sector."""

    L: int
    kappa: float = 1.0
    a: float = 1.0
    m: float = 0.0
    g: float = 1.0
    theta: float = math.pi
    electric_variant: str = "standard"

    def __post_init__(self):
        _check_finite(kappa=self.kappa, a=self.a, m=self.m, g=self.g, theta=self.theta)
        if self.electric_variant not in ("standard", "cp_symmetric"):
            raise ValueError("electric_variant must be 'standard' or 'cp_symmetric'")
        if self.electric_variant == "cp_symmetric" and self.L % 2:
            raise ValueError("cp_symmetric electric term needs even L (half-chain split)")
        object.__setattr__(self, "theta", reduce_theta(self.theta))


@dataclass(frozen=True)
class QLMParams:
    """U(1) quantum link model with spin-S links and staggered matter."""

    L: int
    spin: float = 0.5
    kappa_tilde: float = 1.0
    m: float = 0.0
    g: float = 0.0
    a: float = 1.0
    chi: float = 0.0
    bc: str = "periodic"

    def __post_init__(self):
        _require_spin(self.spin)
        _check_finite(kappa_tilde=self.kappa_tilde, m=self.m, g=self.g, a=self.a, chi=self.chi)

    @classmethod
    def from_theta(cls, L, spin, kappa, a, m, g, theta, bc="periodic"):
        return cls(L=L, spin=spin, kappa_tilde=kappa_tilde(kappa, a, spin),
                   m=m, g=g, a=a, chi=chi_from_theta(g, theta), bc=bc)


@dataclass(frozen=True)
class QLMGaugeOnlyParams:
    """Link-only form of the U(1) QLM (matter eliminated via the Gauss law)."""

    n_links: int
    spin: float = 0.5
    kappa_tilde: float = 1.0
    g: float = 0.0
    a: float = 1.0
    m: float = 0.0
    chi: float = 0.0
    bc: str = "periodic"

    def __post_init__(self):
        _require_spin(self.spin)
        _check_finite(kappa_tilde=self.kappa_tilde, m=self.m, g=self.g, a=self.a, chi=self.chi)


@dataclass(frozen=True)
class PXPParams:
    """Blockaded chain: Rabi term Omega sum P X P plus per-site detuning."""

    N: int
    omega: float = 1.0
    delta: tuple = None
    bc: str = "open"

    def __post_init__(self):
        d = self.delta
        if d is None:
            d = (0.0,) * self.N
        if np.isscalar(d):
            d = (float(d),) * self.N
        d = tuple(float(x) for x in d)
        if len(d) != self.N:
            raise ValueError(f"detuning array length {len(d)} != N = {self.N}")
        _check_finite(omega=self.omega, delta=d)
        object.__setattr__(self, "delta", d)

    @classmethod
    def staggered(cls, N, omega, m, chi, a=1.0, bc="open"):
        """Detuning delta_j = -2m - a chi (-1)^j (1-based j)."""
        delta = tuple(-2.0 * m - a * chi * _stag(j) for j in range(N))
        return cls(N=N, omega=omega, delta=delta, bc=bc)


@dataclass(frozen=True)
class Z2OneDParams:
    """Z2 gauge chain with hardcore matter: gauge-invariant hopping J and
    electric field h, plus an optional staggered mass."""

    L: int
    J: float = 1.0
    h: float = 0.0
    m_stagger: float = 0.0
    bc: str = "open"

    def __post_init__(self):
        _check_finite(J=self.J, h=self.h, m_stagger=self.m_stagger)


@dataclass(frozen=True)
class IsingLRParams:
    """Mixed-field Ising chain with selectable coupling law.

    coupling is one of
      ("nearest", J)           J_{i,i+1} = J
      ("exp", J0, beta)        J_{i,j} = J0 exp(-beta |i-j|)
      ("power", J0, alpha)     J_{i,j} = J0 |i-j|^{-alpha}
      ("table", (J_1, J_2, ...))  explicit per-distance couplings
    edge_fields are per-site additions to the longitudinal field, used to
    emulate frozen exterior spins.
    """

    N: int
    g: float = 0.0
    h: float = 0.0
    coupling: tuple = ("nearest", 1.0)
    edge_fields: tuple = None

    def __post_init__(self):
        kind = self.coupling[0]
        if kind == "power" and self.coupling[2] <= 0:
            raise ValueError("power-law exponent alpha must be > 0")
        if kind == "exp" and self.coupling[2] < 0:
            raise ValueError("exponential decay beta must be >= 0")
        if kind not in ("nearest", "exp", "power", "table"):
            raise ValueError(f"unknown coupling law {kind!r}")
        ef = self.edge_fields
        if ef is None:
            ef = (0.0,) * self.N
        ef = tuple(float(x) for x in ef)
        if len(ef) != self.N:
            raise ValueError("edge_fields must have one entry per site")
        _check_finite(g=self.g, h=self.h, edge_fields=ef,
                      coupling=[c for c in self.coupling[1:] if np.isscalar(c)] or [0.0])
        object.__setattr__(self, "edge_fields", ef)

    def coupling_at(self, r):
        """J at distance r >= 1."""
        kind = self.coupling[0]
        if kind == "nearest":
            return self.coupling[1] if r == 1 else 0.0
        if kind == "exp":
            return self.coupling[1] * math.exp(-self.coupling[2] * r)
        if kind == "power":
            return self.coupling[1] * r ** (-self.coupling[2])
        table = self.coupling[1]
        return float(table[r - 1]) if r - 1 < len(table) else 0.0


@dataclass(frozen=True)
class Z2PureTwoDParams:
    """Pure Z2 gauge theory on a periodic square lattice: plaquette term plus
    electric field g."""

    Lx: int
    Ly: int
    g: float = 1.0
    bc: str = "periodic"

    def __post_init__(self):
        _check_finite(g=self.g)
        if self.bc != "periodic":
            raise ValueError("only periodic 2d lattices are supported")


@dataclass(frozen=True)
class DflZ2Params:
    """Z2 chain with dynamical link fields (sigma^x sigma^x term): hosts an
    extensive set of conserved local charges."""

    L: int
    J: float = 1.0
    h: float = 0.0
    bc: str = "periodic"

    def __post_init__(self):
        _check_finite(J=self.J, h=self.h)


# ----------------------------------------------------------------------
# shared low-level helpers
# ----------------------------------------------------------------------

def _matter_sz(basis, j):
    return 2.0 * basis.slot_values(j) - 1.0


def _parity(labels, mask):
    """(-1)^(number of set bits of labels & mask)."""
    cnt = np.bitwise_count(np.asarray(labels, dtype=np.uint64) & np.uint64(mask))
    return 1.0 - 2.0 * (cnt.astype(np.int64) & 1)


def _dst_indices(basis, new_labels, context):
    try:
        return basis.index_of(new_labels)
    except KeyError as err:
        raise ValueError(f"sector/basis mismatch while building {context}: "
                         f"{err}") from None


def _hop_spin_half(acc, basis, j1, j2, amp, link_slot=None, link_action=None,
                   sign=None, context="hopping"):
    """Add sigma^+_{j1} sigma^-_{j2} (optionally dressed by a link operator)
    once; the Hermitian conjugate is implied by upper-triangle storage.

    link_action: None, or "flip" (Z2 link in the electric basis).
    sign: optional per-state amplitude factors (fermionic strings).
    """
    labels = basis.labels
    lay = basis.layout
    up1 = basis.slot_values(j1) == 1
    up2 = basis.slot_values(j2) == 1
    mask = (~up1) & up2
    src = np.flatnonzero(mask)
    if not len(src):
        return
    new = labels[src] + (1 << lay.slot_offset(j1)) - (1 << lay.slot_offset(j2))
    if link_slot is not None and link_action == "flip":
        new = new ^ (1 << lay.slot_offset(link_slot))
    dst = _dst_indices(basis, new, context)
    vals = np.full(len(src), amp, dtype=np.complex128)
    if sign is not None:
        vals = vals * sign[src]
    acc.add(dst, src, vals)


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------

def build_schwinger_spin(p: SchwingerSpinParams, basis: StateIndexMap):
    """Spin chain of the staggered-fermion gauge theory with links integrated
    out.  The standard variant carries the long-range electric term generated
    by the eliminated field (zero incoming flux); the cp_symmetric variant
    replaces it with the symmetric zero-charge-sector form and drops the
    topological-angle term."""
    L = p.L
    lay = basis.layout
    if lay.n_matter != L or lay.n_links != 0:
        raise ValueError("basis layout does not match a matter-only chain")
    acc = OperatorAccumulator(basis.dim)
    w = p.kappa / (2.0 * p.a)
    # sigma^+_l sigma^-_{l+1}; the reverse hop is the Hermitian conjugate and
    # comes from the implied lower triangle
    for j in range(L - 1):
        _hop_spin_half(acc, basis, j, j + 1, -w, context="schwinger hopping")
    sz = np.stack([_matter_sz(basis, j) for j in range(L)])
    diag = np.zeros(basis.dim)
    for j in range(L):
        diag += 0.5 * p.m * _stag(j) * sz[j]
    meta = {"theta": p.theta}
    if p.electric_variant == "standard":
        coef = 0.5 * p.g * p.g * p.a
        # sum_{ell=1}^{L-2} sum_{ell'=ell+1}^{L-1} (L - ell') sz_ell sz_ell'
        for j in range(L - 2):
            for jp in range(j + 1, L - 1):
                diag += coef * (L - (jp + 1)) * sz[j] * sz[jp]
        # staggered piece of the eliminated field
        cum = np.zeros(basis.dim)
        for j in range(L - 1):
            cum += sz[j]
            diag += 0.25 * p.g * p.g * p.a * (_stag(j) - 1.0) / 2.0 * cum
        # background field from the topological angle
        if p.theta != math.pi:
            back = -p.g * p.g * p.a * (p.theta - math.pi) / (4.0 * math.pi)
            cum = np.zeros(basis.dim)
            for j in range(L - 1):
                cum += sz[j]
                diag += back * cum
    else:
        # charge-symmetric electric energy, Q_ell = [(-1)^ell - sz_ell] / 2
        q = np.stack([( _stag(j) - sz[j]) / 2.0 for j in range(L)])
        coef = 0.5 * p.g * p.g * p.a
        half = L // 2
        for j in range(half - 1):            # ell = 1 .. L/2 - 1
            diag += coef * q[: j + 1].sum(axis=0) ** 2
        for j in range(half + 1, L):         # ell = L/2 + 2 .. L
            diag += coef * q[j:].sum(axis=0) ** 2
        diag += 0.5 * coef * q[:half].sum(axis=0) ** 2
        diag += 0.5 * coef * q[half:].sum(axis=0) ** 2
        meta["theta_term"] = "omitted in cp_symmetric variant"
    acc.add_diagonal(diag)
    op = acc.finalize()
    op.meta = meta
    return op


def build_qlm(p: QLMParams, basis: StateIndexMap):
    """U(1) quantum link model: three-body gauge-invariant hopping, staggered
    mass, electric energy and a linear background-field term."""
    L = p.L
    lay = basis.layout
    if lay.n_matter != L:
        raise ValueError("basis layout does not match the requested chain length")
    acc = OperatorAccumulator(basis.dim)
    S = p.spin
    n_hop = L if p.bc == "periodic" else L - 1
    labels = basis.labels
    for j in range(n_hop):
        jp = (j + 1) % L
        ls = lay.link_slot(j)
        lval = basis.slot_values(ls).astype(float)
        up1 = basis.slot_values(j) == 1
        up2 = basis.slot_values(jp) == 1
        raisable = lval < 2 * S
        # sigma^+_j S^+_link sigma^-_{j+1}; the Hermitian conjugate comes from
        # the implied lower triangle
        mask = (~up1) & raisable & up2
        src = np.flatnonzero(mask)
        if len(src):
            mz = lval[src] - S
            amp = -p.kappa_tilde * np.sqrt(S * (S + 1.0) - mz * (mz + 1.0))
            new = labels[src] + (1 << lay.slot_offset(j)) \
                + (1 << lay.slot_offset(ls)) - (1 << lay.slot_offset(jp))
            acc.add(_dst_indices(basis, new, "qlm hopping"), src, amp)
    diag = np.zeros(basis.dim)
    for j in range(L):
        diag += 0.5 * p.m * _stag(j) * _matter_sz(basis, j)
    meta = {}
    szl = [basis.slot_values(lay.link_slot(j)) - S for j in range(lay.n_links)]
    if S == 0.5:
        if p.g != 0.0:
            meta["electric_constant_dropped"] = 0.5 * p.g * p.g * p.a * 0.25 * lay.n_links
    else:
        for v in szl:
            diag += 0.5 * p.g * p.g * p.a * v.astype(float) ** 2
    for v in szl:
        diag += -p.a * p.chi * v.astype(float)
    acc.add_diagonal(diag)
    op = acc.finalize()
    op.meta = meta
    return op


def build_qlm_gauge_only(p: QLMGaugeOnlyParams, basis: StateIndexMap):
    """Link-only U(1) QLM on the projector-constrained chain:

        H = -2 kt P (sum_j S^x_j) P + (g^2 a / 2) sum_j (S^z_j)^2
            - sum_j [2 m + a chi (-1)^j] S^z_j

    with P projecting onto neighbor-compatible link configurations."""
    lay = basis.layout
    if lay.n_links != p.n_links or lay.n_matter != 0:
        raise ValueError("basis layout does not match a link-only chain")
    rule = QLMLinkParity(p.spin)
    if not rule.admissible(lay, basis.labels).all():
        raise ValueError("basis contains configurations that violate the "
                         "neighbor projector")
    acc = OperatorAccumulator(basis.dim)
    S = p.spin
    labels = basis.labels
    for j in range(p.n_links):
        ls = lay.link_slot(j)
        lval = basis.slot_values(ls).astype(float)
        raisable = lval < 2 * S
        src = np.flatnonzero(raisable)
        if len(src):
            mz = lval[src] - S
            amp = -2.0 * p.kappa_tilde * 0.5 * np.sqrt(S * (S + 1.0) - mz * (mz + 1.0))
            new = labels[src] + (1 << lay.slot_offset(ls))
            ok = basis.contains(new)
            acc.add(basis.index_of(new[ok]), src[ok], amp[ok])
    diag = np.zeros(basis.dim)
    meta = {}
    for j in range(p.n_links):
        v = (basis.slot_values(lay.link_slot(j)) - S).astype(float)
        if S == 0.5:
            meta["electric_constant_dropped"] = 0.5 * p.g * p.g * p.a * 0.25 * p.n_links
        else:
            diag += 0.5 * p.g * p.g * p.a * v ** 2
        diag += -(2.0 * p.m + p.a * p.chi * _stag(j)) * v
    acc.add_diagonal(diag)
    op = acc.finalize()
    op.meta = meta
    return op


def build_pxp(p: PXPParams, basis: StateIndexMap):
    """Blockaded-chain Hamiltonian: Omega sum_j P_{j-1} X_j P_{j+1} plus
    detuning, with boundary terms X_1 P_2 and P_{N-1} X_N for open chains."""
    N = p.N
    lay = basis.layout
    if lay.n_matter != N:
        raise ValueError("basis layout does not match the chain length")
    labels = basis.labels
    acc = OperatorAccumulator(basis.dim)
    for j in range(N):
        if p.bc == "periodic":
            lok = basis.slot_values((j - 1) % N) == 0
            rok = basis.slot_values((j + 1) % N) == 0
        else:
            lok = basis.slot_values(j - 1) == 0 if j > 0 else np.ones(basis.dim, bool)
            rok = basis.slot_values(j + 1) == 0 if j < N - 1 else np.ones(basis.dim, bool)
        flip_up = (basis.slot_values(j) == 0) & lok & rok
        src = np.flatnonzero(flip_up)
        if len(src):
            new = labels[src] + (1 << lay.slot_offset(j))
            acc.add(_dst_indices(basis, new, "blockaded flip"), src, p.omega)
    diag = np.zeros(basis.dim)
    for j in range(N):
        diag += p.delta[j] * basis.slot_values(j)
    acc.add_diagonal(diag)
    return acc.finalize()


def build_z2_1d(p: Z2OneDParams, basis: StateIndexMap):
    """Z2 gauge chain with matter: -sum [J (sigma^+ tau^z sigma^- + h.c.)
    + h tau^x], links stored in the electric (tau^x) basis."""
    L = p.L
    lay = basis.layout
    if lay.n_matter != L:
        raise ValueError("basis layout does not match the chain length")
    acc = OperatorAccumulator(basis.dim)
    n_bonds = L if p.bc == "periodic" else L - 1
    for j in range(n_bonds):
        jp = (j + 1) % L
        _hop_spin_half(acc, basis, j, jp, -p.J, link_slot=lay.link_slot(j),
                       link_action="flip", context="z2 hopping")
    diag = np.zeros(basis.dim)
    for j in range(lay.n_links):
        diag += -p.h * (1.0 - 2.0 * basis.slot_values(lay.link_slot(j)))
    if p.m_stagger:
        for j in range(L):
            diag += 0.5 * p.m_stagger * _stag(j) * _matter_sz(basis, j)
    acc.add_diagonal(diag)
    return acc.finalize()


def build_ising_lr(p: IsingLRParams, basis: StateIndexMap):
    """Mixed-field Ising chain:
    -sum_{i<j} J_{ij} sz sz - sum_i (h + dh_i) sz_i - g sum_i sx_i."""
    N = p.N
    lay = basis.layout
    if lay.n_matter != N or lay.n_links != 0:
        raise ValueError("basis layout does not match the chain length")
    labels = basis.labels
    acc = OperatorAccumulator(basis.dim)
    sz = np.stack([_matter_sz(basis, j) for j in range(N)])
    diag = np.zeros(basis.dim)
    for i in range(N):
        for j in range(i + 1, N):
            J = p.coupling_at(j - i)
            if J:
                diag += -J * sz[i] * sz[j]
        diag += -(p.h + p.edge_fields[i]) * sz[i]
    acc.add_diagonal(diag)
    if p.g:
        for j in range(N):
            flip_up = basis.slot_values(j) == 0
            src = np.flatnonzero(flip_up)
            new = labels[src] + (1 << lay.slot_offset(j))
            acc.add(_dst_indices(basis, new, "transverse field"), src, -p.g)
    return acc.finalize()


def build_z2_pure_2d(p: Z2PureTwoDParams, basis: StateIndexMap):
    """Pure 2d Z2 gauge theory on the star sector: sum_plaquettes W + g sum sz."""
    lay = basis.layout
    if lay.dimensionality != 2:
        raise ValueError("basis layout is not a 2d link lattice")
    ex, ey = lay.extents
    rule = GaussZ2Plaquette2D()
    labels = basis.labels
    acc = OperatorAccumulator(basis.dim)
    for y in range(ey):
        for x in range(ex):
            mask = 0
            for sl in (rule._lslot(lay, x, y, 0), rule._lslot(lay, x + 1, y, 1),
                       rule._lslot(lay, x, y + 1, 0), rule._lslot(lay, x, y, 1)):
                mask |= 1 << lay.slot_offset(sl)
            new = labels ^ mask
            keep = new > labels      # add each unordered pair once
            src = np.flatnonzero(keep)
            acc.add(_dst_indices(basis, new[src], "plaquette"), src, 1.0)
    diag = np.zeros(basis.dim)
    for sl in range(lay.n_links):
        diag += p.g * (1.0 - 2.0 * basis.slot_values(lay.link_slot(sl)))
    acc.add_diagonal(diag)
    return acc.finalize()


def build_dfl_z2(p: DflZ2Params, basis: StateIndexMap):
    """Z2 chain with dynamical links and an extensive set of conserved
    charges.  Returns ``(H, charges)`` where ``charges[i]`` is the diagonal
    operator ``q_i = (-1)^{n_i} sx_{i-1,i} sx_{i,i+1}``.

    Matter fermions are encoded with the occupation-number convention
    (annihilating site j picks up the parity of occupations below j, sites
    ordered by index ascending); the closing bond of a periodic chain carries
    the full string.  The build aborts unless every charge commutes exactly
    with the assembled Hamiltonian.
    """
    L = p.L
    lay = basis.layout
    if lay.n_matter != L or lay.boundary != p.bc:
        raise ValueError("basis layout does not match the model parameters")
    labels = basis.labels
    acc = OperatorAccumulator(basis.dim)
    n_bonds = L if p.bc == "periodic" else L - 1
    for j in range(n_bonds):
        jp = (j + 1) % L
        occ_j = basis.slot_values(j) == 1
        occ_jp = basis.slot_values(jp) == 1
        # f^+_j sigma^z_link f_{j+1}: annihilate at jp, create at j; the
        # reversed hop is the Hermitian conjugate (implied lower triangle)
        mask = (~occ_j) & occ_jp
        src = np.flatnonzero(mask)
        if len(src):
            lab = labels[src]
            below_jp = (1 << jp) - 1 if jp else 0
            s1 = _parity(lab, below_jp)
            lab2 = lab - (1 << lay.slot_offset(jp))
            below_j = (1 << j) - 1 if j else 0
            s2 = _parity(lab2, below_j)
            new = lab2 + (1 << lay.slot_offset(j))
            new = new ^ (1 << lay.slot_offset(lay.link_slot(j)))
            acc.add(_dst_indices(basis, new, "dfl hopping"), src, -p.J * s1 * s2)
    diag = np.zeros(basis.dim)
    for j in range(L):
        xl, xr = _dfl_link_x(basis, j, p.bc)
        diag += p.h * xl * xr
    acc.add_diagonal(diag)
    h = acc.finalize()
    charges = [SparseOperator.diagonal(_dfl_charge_diag(basis, i, p.bc)) for i in range(L)]
    defect = _charge_commutator_defect(h, charges)
    if defect > 1e-12:
        raise RuntimeError(
            f"charge conservation violated at build time: max commutator "
            f"entry {defect:.3e} (encoding or boundary convention bug)")
    h.meta = {"fermion_encoding": "occupation-number, sites ascending",
              "charge_commutator_defect": defect}
    return h, charges


def _dfl_link_x(basis, j, bc):
    """(sx on link left of site j, sx on link right of site j)."""
    lay = basis.layout
    L = lay.n_matter
    if bc == "periodic":
        xl = 1.0 - 2.0 * basis.slot_values(lay.link_slot((j - 1) % L))
        xr = 1.0 - 2.0 * basis.slot_values(lay.link_slot(j))
    else:
        xl = 1.0 - 2.0 * basis.slot_values(lay.link_slot(j - 1)) if j > 0 else np.ones(basis.dim)
        xr = 1.0 - 2.0 * basis.slot_values(lay.link_slot(j)) if j < L - 1 else np.ones(basis.dim)
    return xl, xr


def _dfl_charge_diag(basis, i, bc):
    par = 1.0 - 2.0 * basis.slot_values(i)
    xl, xr = _dfl_link_x(basis, i, bc)
    return par * xl * xr


def _charge_commutator_defect(h, charges):
    worst = 0.0
    for q in charges:
        qd = q.diag()
        worst = max(worst, float(np.abs(h.vals * (qd[h.rows] - qd[h.cols])).max(initial=0.0)))
    return worst


# ----------------------------------------------------------------------
# dual formulations and parameter maps
# ----------------------------------------------------------------------

def pxp_equivalent_of_qlm(p: QLMParams):
    """Blockaded-chain image of the spin-1/2 QLM on its physical sector.

    Returns ``(PXPParams, energy_offset)`` with identical spectra:
    ``spec(QLM sector) = spec(PXP) + offset``.  The Rabi coefficient of the
    Pauli-X blockaded term equals ``-kappa_tilde`` (one flip of the single
    link between two matter sites carries exactly the three-body hopping
    amplitude), the detuning is ``-2m - a chi (-1)^j``, and the offset
    ``m L / 2`` restores the mass-term constant eliminated with the matter.
    """
    if p.spin != 0.5:
        raise ValueError("the blockaded-chain equivalence needs spin 1/2")
    pxp = PXPParams.staggered(N=p.L if p.bc == "periodic" else p.L - 1,
                              omega=-p.kappa_tilde, m=p.m, chi=p.chi, a=p.a,
                              bc=p.bc)
    return pxp, p.m * p.L / 2.0


def z2_gauged_sector_hamiltonian(n_matter, g, m, zeta, v_of_r):
    """Gauge sector of the Z2 chain of fermions coupled to hardcore-boson
    links (open boundary), built directly in the link basis.

    The Gauss constraint ties the matter occupation to the link occupations
    (boundary links vacant), leaving 2^(n_matter - 1) states.  Terms:
    gauge-invariant hop + pair creation with strength g, fermion mass m, link
    energy zeta, and link-link attraction v(r) for r >= 2.

    Returns ``(SparseOperator, StateIndexMap)`` on the dual-spin chain layout.
    """
    nb = n_matter - 1
    layout = SiteLayout.chain(nb)
    basis = enumerate_sector(layout, Unconstrained())
    labels = basis.labels

    def matter_occ(lbl):
        occ = np.empty((n_matter, len(lbl)), dtype=np.int64)
        link = [(lbl >> k) & 1 for k in range(nb)]
        for l in range(n_matter):
            left = link[l - 1] if l - 1 >= 0 else 0
            right = link[l] if l < nb else 0
            occ[l] = left ^ right
        return occ

    occ = matter_occ(labels)
    link = np.stack([(labels >> k) & 1 for k in range(nb)])
    diag = m * occ.sum(axis=0).astype(float) + zeta * link.sum(axis=0).astype(float)
    for l in range(nb):
        for r in range(2, nb - l):
            diag -= v_of_r(r) * link[l] * link[l + r]
    acc = OperatorAccumulator(basis.dim)
    acc.add_diagonal(diag)
    # bond flip: the four fermion bilinears (hop both ways, pair create and
    # annihilate) each contribute -g with unit fermionic sign on adjacent
    # sites; exactly one of them matches any given occupation change.
    for l in range(nb):
        new = labels ^ (1 << l)
        keep = new > labels
        src = np.flatnonzero(keep)
        acc.add(basis.index_of(new[src]), src, -g)
    return acc.finalize(), basis


def ising_dual_of_z2_gauged(n_matter, g, m, zeta, v_of_r):
    """Mixed-field Ising parameters whose spectrum equals the gauge sector of
    the matter-coupled Z2 chain, constant included.

    The bulk identification is ``J_1 = m/2``, ``J_r = v_r / 4`` (r >= 2) and
    ``zeta = 2 h + sum_{r>=2} v_r``; on a finite open chain the missing
    long-range partners and the half-open mass bonds appear as per-site edge
    fields, and a scalar offset accounts for the eliminated constants.

    Returns ``(IsingLRParams, offset)`` with
    ``spec(gauge sector) = spec(Ising) + offset``.
    """
    nb = n_matter - 1
    table = [m / 2.0] + [v_of_r(r) / 4.0 for r in range(2, nb)]
    vsum_bulk = sum(v_of_r(r) for r in range(2, nb))
    h_bulk = (zeta - vsum_bulk) / 2.0
    edge = []
    for k in range(1, nb + 1):          # 1-based dual site
        cnt = sum(v_of_r(r) * ((1 if k - r >= 1 else 0) + (1 if k + r <= nb else 0))
                  for r in range(2, nb))
        h_k = zeta / 2.0 - cnt / 4.0 + (m / 2.0 if k in (1, nb) else 0.0)
        edge.append(h_k - h_bulk)
    params = IsingLRParams(N=nb, g=g, h=h_bulk, coupling=("table", tuple(table)),
                           edge_fields=tuple(edge))
    pair_sum = sum(v_of_r(r) for r in range(2, nb) for _ in range(1, nb - r + 1))
    offset = zeta * nb / 2.0 + m * (nb + 1) / 2.0 - pair_sum / 4.0
    return params, offset


# ----------------------------------------------------------------------
# named observable diagonals
# ----------------------------------------------------------------------

def matter_density_diag(basis):
    """Particle-number density nu = sum_ell [(-1)^ell sz_ell + 1] / (2 L)."""
    L = basis.layout.n_matter
    d = np.zeros(basis.dim)
    for j in range(L):
        d += (_stag(j) * _matter_sz(basis, j) + 1.0) / (2.0 * L)
    return d


def flux_diag(basis, spin=0.5):
    """Electric-flux order parameter: link-averaged S^z."""
    lay = basis.layout
    d = np.zeros(basis.dim)
    for j in range(lay.n_links):
        d += (basis.slot_values(lay.link_slot(j)) - spin) / lay.n_links
    return d


def electric_sz_diags(basis, spin=0.5):
    """Per-link S^z diagonals."""
    lay = basis.layout
    return [basis.slot_values(lay.link_slot(j)) - spin for j in range(lay.n_links)]


def magnetization_diag(basis):
    """Site-averaged sigma^z of the matter slots."""
    L = basis.layout.n_matter
    d = np.zeros(basis.dim)
    for j in range(L):
        d += _matter_sz(basis, j) / L
    return d


def site_occupation_diags(basis):
    return [basis.slot_values(j).astype(float) for j in range(basis.layout.n_matter)]


def charge_density_diags(basis, left_static=None, right_static=None):
    """Kink densities q_i = (1 - sz_{i-1} sz_i) / 2 of a spin chain,
    including the two boundary bonds against frozen exterior spins when
    ``left_static``/``right_static`` (+-1) are given.  Returns (positions,
    [diagonals])."""
    N = basis.layout.n_matter
    sz = [_matter_sz(basis, j) for j in range(N)]
    xs, ds = [], []
    if left_static is not None:
        xs.append(-0.5)
        ds.append((1.0 - left_static * sz[0]) / 2.0)
    for i in range(1, N):
        xs.append(i - 0.5)
        ds.append((1.0 - sz[i - 1] * sz[i]) / 2.0)
    if right_static is not None:
        xs.append(N - 0.5)
        ds.append((1.0 - sz[N - 1] * right_static) / 2.0)
    return np.array(xs), ds


def domain_wall_density_diag(basis, bc="open"):
    """Density of adjacent unexcited pairs (domain walls of the blockaded
    chain)."""
    N = basis.layout.n_matter
    n_pairs = N if bc == "periodic" else N - 1
    d = np.zeros(basis.dim)
    for j in range(n_pairs):
        a = basis.slot_values(j) == 0
        b = basis.slot_values((j + 1) % N) == 0
        d += (a & b) / n_pairs
    return d


def string_length_diag(basis, reference_links, spin=0.5):
    """Expected number of links deviating from a reference configuration
    between the outermost charges.

    ``reference_links``: per-link reference S^z values (the vacuum string
    background).  For each basis state the charges are located from the Gauss
    charge q_ell = [sz_ell + (-1)^ell] / 2; states with fewer than one charge
    contribute the total deviation count instead.
    """
    lay = basis.layout
    L = lay.n_matter
    ref = np.asarray(reference_links, dtype=float)
    out = np.zeros(basis.dim)
    sz_m = np.stack([_matter_sz(basis, j) for j in range(L)])
    q = np.stack([(sz_m[j] + _stag(j)) / 2.0 for j in range(L)])
    lv = np.stack([basis.slot_values(lay.link_slot(j)) - spin for j in range(lay.n_links)])
    dev = lv != ref[:, None]
    charged = q != 0
    for i in range(basis.dim):
        pos = np.flatnonzero(charged[:, i])
        if len(pos) >= 2:
            lo, hi = pos[0], pos[-1]
            out[i] = dev[lo:hi, i].sum()
        else:
            out[i] = dev[:, i].sum()
    return out


def bubble_count_diag(basis, n, bc="periodic"):
    """Number of down-spin domains of length exactly n per basis state."""
    N = basis.layout.n_matter
    down = np.stack([basis.slot_values(j) == 0 for j in range(N)])
    out = np.zeros(basis.dim)
    for i in range(basis.dim):
        bits = down[:, i]
        if bc == "periodic":
            if bits.all():
                out[i] = 1.0 if n == N else 0.0
                continue
            start = int(np.flatnonzero(~bits)[0])
            run = 0
            for k in range(1, N + 1):
                if bits[(start + k) % N]:
                    run += 1
                else:
                    if run == n:
                        out[i] += 1
                    run = 0
        else:
            run = 0
            for b in list(bits) + [False]:
                if b:
                    run += 1
                else:
                    if run == n:
                        out[i] += 1
                    run = 0
    return out
