import math

import numpy as np
import pytest

from lgtlab import models as M
from lgtlab.basis import SiteLayout, enumerate_sector, GaussU1QLM, QLMLinkParity
from lgtlab.protocols import default_basis

# dense Kronecker oracle pieces in the package's storage convention:
# matter bit 1 is sigma^z = +1, so in (bit0, bit1) ordering
SZ = np.diag([-1.0, 1.0]).astype(complex)
SP = np.array([[0, 0], [1, 0]], dtype=complex)
SM = SP.conj().T
SX = SP + SM
PROJ0 = np.diag([1.0, 0.0]).astype(complex)   # unexcited projector
NUM = np.diag([0.0, 1.0]).astype(complex)
TAUX = np.diag([1.0, -1.0]).astype(complex)    # link bit 0 is tau^x = +1
TAUZ = SX


def kron_at(ops, nslots):
    out = np.array([[1.0 + 0j]])
    for s in range(nslots):
        out = np.kron(ops.get(s, np.eye(2)), out)
    return out


def all_hermitian(op):
    return op.hermiticity_defect() < 1e-14


# ----------------------------------------------------------------------
# staggered-fermion chain
# ----------------------------------------------------------------------

def schwinger_dense_oracle(p):
    L = p.L
    H = np.zeros((2 ** L, 2 ** L), complex)
    for el in range(1, L):
        j = el - 1
        H += -p.kappa / (2 * p.a) * (kron_at({j: SP, j + 1: SM}, L)
                                     + kron_at({j: SM, j + 1: SP}, L))
    for el in range(1, L - 1):
        for elp in range(el + 1, L):
            H += p.g ** 2 * p.a / 2 * (L - elp) * kron_at({el - 1: SZ, elp - 1: SZ}, L)
    for el in range(1, L):
        for elp in range(1, el + 1):
            H += p.g ** 2 * p.a / 8 * ((-1) ** el - 1) * kron_at({elp - 1: SZ}, L)
            H += -p.g ** 2 * p.a * (p.theta - math.pi) / (4 * math.pi) * kron_at({elp - 1: SZ}, L)
    for el in range(1, L + 1):
        H += p.m / 2 * (-1) ** el * kron_at({el - 1: SZ}, L)
    return H


def test_schwinger_matches_dense_oracle():
    p = M.SchwingerSpinParams(L=4, kappa=1.0, a=1.0, m=0.5, g=1.0, theta=math.pi)
    basis = default_basis("schwinger_spin", p)
    h = M.build_schwinger_spin(p, basis)
    assert all_hermitian(h)
    assert np.abs(h.dense() - schwinger_dense_oracle(p)).max() < 1e-13
    # nonzero background field
    p2 = M.SchwingerSpinParams(L=5, kappa=0.7, a=1.0, m=0.3, g=1.2, theta=0.4 * math.pi)
    b2 = default_basis("schwinger_spin", p2)
    assert np.abs(M.build_schwinger_spin(p2, b2).dense() - schwinger_dense_oracle(p2)).max() < 1e-13


def test_schwinger_diagonal_mass_limit():
    p = M.SchwingerSpinParams(L=2, kappa=0.0, m=1.0, g=0.0)
    basis = default_basis("schwinger_spin", p)
    h = M.build_schwinger_spin(p, basis)
    assert h.is_diagonal()
    assert sorted(np.linalg.eigvalsh(h.dense())) == pytest.approx([-1.0, 0.0, 0.0, 1.0])


def test_schwinger_cp_symmetric_variant():
    p = M.SchwingerSpinParams(L=4, kappa=1.0, m=0.5, g=1.1,
                              electric_variant="cp_symmetric")
    basis = default_basis("schwinger_spin", p)
    h = M.build_schwinger_spin(p, basis)
    assert all_hermitian(h)
    # literal construction of the zero-charge-sector electric term
    L = 4
    q = [(( -1) ** el * np.eye(2 ** L) - kron_at({el - 1: SZ}, L)) / 2 for el in range(1, L + 1)]
    He = np.zeros((2 ** L, 2 ** L), complex)
    coef = p.g ** 2 * p.a / 2
    He += coef * (q[0]) @ (q[0])                      # ell = 1 (left block)
    He += coef * (q[3]) @ (q[3])                      # ell = 4 (right block)
    He += 0.5 * coef * (q[0] + q[1]) @ (q[0] + q[1])
    He += 0.5 * coef * (q[2] + q[3]) @ (q[2] + q[3])
    Ho = np.zeros((2 ** L, 2 ** L), complex)
    for el in range(1, L):
        j = el - 1
        Ho += -p.kappa / (2 * p.a) * (kron_at({j: SP, j + 1: SM}, L)
                                      + kron_at({j: SM, j + 1: SP}, L))
    for el in range(1, L + 1):
        Ho += p.m / 2 * (-1) ** el * kron_at({el - 1: SZ}, L)
    assert np.abs(h.dense() - (He + Ho)).max() < 1e-13
    with pytest.raises(ValueError, match="even"):
        M.SchwingerSpinParams(L=5, electric_variant="cp_symmetric")


def test_theta_reduction():
    assert M.reduce_theta(math.pi) == pytest.approx(math.pi)
    assert M.reduce_theta(3 * math.pi) == pytest.approx(math.pi)
    assert M.reduce_theta(-math.pi) == pytest.approx(math.pi)
    assert M.reduce_theta(0.3) == pytest.approx(0.3)
    assert M.chi_from_theta(1.0, math.pi) == 0.0
    # physics is invariant under theta -> theta + 2 pi
    assert M.chi_from_theta(1.3, 0.7) == pytest.approx(M.chi_from_theta(1.3, 0.7 + 2 * math.pi))


# ----------------------------------------------------------------------
# quantum link models
# ----------------------------------------------------------------------

def test_qlm_vacuum_degeneracy_large_mass():
    p = M.QLMParams(L=6, spin=0.5, kappa_tilde=1.0, m=1e3, chi=0.0)
    basis = default_basis("qlm", p)
    h = M.build_qlm(p, basis)
    w = np.linalg.eigvalsh(h.dense())
    assert abs(w[1] - w[0]) < 1e-6 * abs(w[0])
    assert w[2] - w[1] > 100.0


def test_qlm_blockaded_equivalence_spectrum():
    for L, chi in ((4, 0.0), (6, 0.0), (8, 0.31)):
        p = M.QLMParams(L=L, spin=0.5, kappa_tilde=1.3, m=0.4, chi=chi)
        basis = default_basis("qlm", p)
        eq = np.sort(np.linalg.eigvalsh(M.build_qlm(p, basis).dense()))
        pxp, off = M.pxp_equivalent_of_qlm(p)
        pb = default_basis("pxp", pxp)
        ep = np.sort(np.linalg.eigvalsh(M.build_pxp(pxp, pb).dense())) + off
        assert np.abs(eq - ep).max() < 1e-10


def test_qlm_theta_periodicity():
    g = 1.1
    p1 = M.QLMParams.from_theta(L=6, spin=0.5, kappa=1.0, a=1.0, m=0.4, g=g, theta=0.6)
    p2 = M.QLMParams.from_theta(L=6, spin=0.5, kappa=1.0, a=1.0, m=0.4, g=g,
                                theta=0.6 + 2 * math.pi)
    basis = default_basis("qlm", p1)
    e1 = np.linalg.eigvalsh(M.build_qlm(p1, basis).dense())
    e2 = np.linalg.eigvalsh(M.build_qlm(p2, basis).dense())
    assert np.abs(e1 - e2).max() < 1e-12


def test_qlm_spin1_electric_term_not_dropped():
    p = M.QLMParams(L=4, spin=1.0, kappa_tilde=1.0, m=0.3, g=1.4, chi=0.1)
    basis = default_basis("qlm", p)
    h = M.build_qlm(p, basis)
    assert all_hermitian(h)
    assert "electric_constant_dropped" not in h.meta
    p_half = M.QLMParams(L=4, spin=0.5, kappa_tilde=1.0, m=0.3, g=1.4)
    b_half = default_basis("qlm", p_half)
    h_half = M.build_qlm(p_half, b_half)
    assert h_half.meta["electric_constant_dropped"] == pytest.approx(
        0.5 * 1.4 ** 2 * 0.25 * 4)


def test_qlm_gauge_only_reduces_to_blockaded_chain():
    p = M.QLMGaugeOnlyParams(n_links=8, spin=0.5, kappa_tilde=0.9, m=0.25, chi=0.15)
    basis = default_basis("qlm_gauge_only", p)
    h = M.build_qlm_gauge_only(p, basis)
    pxp = M.PXPParams.staggered(N=8, omega=-0.9, m=0.25, chi=0.15, bc="periodic")
    pb = default_basis("pxp", pxp)
    hp = M.build_pxp(pxp, pb)
    e1 = np.sort(np.linalg.eigvalsh(h.dense()))
    e2 = np.sort(np.linalg.eigvalsh(hp.dense()))
    # detuning written through S^z shifts the zero by sum_j delta_j / 2
    off = sum(pxp.delta) / 2.0
    assert np.abs(e1 - (e2 - off)).max() < 1e-10


def test_qlm_gauge_only_spin1_cross_check_with_matter_model():
    # matter-integrated chain vs the full model on the zero-charge sector
    kt, m, g, chi = 0.8, 0.35, 1.1, 0.2
    L = 6
    full = M.QLMParams(L=L, spin=1.0, kappa_tilde=kt, m=m, g=g, chi=chi)
    bf = default_basis("qlm", full)
    ef = np.sort(np.linalg.eigvalsh(M.build_qlm(full, bf).dense()))
    only = M.QLMGaugeOnlyParams(n_links=L, spin=1.0, kappa_tilde=kt, m=m, g=g, chi=chi)
    bo = default_basis("qlm_gauge_only", only)
    eo = np.sort(np.linalg.eigvalsh(M.build_qlm_gauge_only(only, bo).dense()))
    assert bf.dim == bo.dim
    # the matter elimination leaves a state-independent constant
    shift = ef - eo
    assert np.abs(shift - shift[0]).max() < 1e-9


def test_qlm_gauge_only_rejects_projector_violations():
    p = M.QLMGaugeOnlyParams(n_links=4, spin=0.5)
    lay = SiteLayout.link_chain(4, 2, "periodic")
    bad = enumerate_sector(lay, QLMLinkParity(0.5))
    from lgtlab.basis import StateIndexMap
    tampered = StateIndexMap(lay, np.arange(2 ** 4), {})
    with pytest.raises(ValueError, match="projector"):
        M.build_qlm_gauge_only(p, tampered)


def test_qlm_diagonal_limit_gauge_only():
    p = M.QLMGaugeOnlyParams(n_links=6, spin=0.5, kappa_tilde=0.0, m=0.4, chi=0.1)
    basis = default_basis("qlm_gauge_only", p)
    h = M.build_qlm_gauge_only(p, basis)
    assert h.is_diagonal()


# ----------------------------------------------------------------------
# blockaded chain
# ----------------------------------------------------------------------

def test_pxp_n2_couplings():
    p = M.PXPParams(N=2, omega=1.0, bc="open")
    basis = default_basis("pxp", p)
    h = M.build_pxp(p, basis).dense()
    lab = {int(l): i for i, l in enumerate(basis.labels)}
    # states: 00, 01, 10 (11 excluded); X1 P2 and P1 X2 couple 00 <-> 01, 10
    assert basis.dim == 3
    assert h[lab[0], lab[1]] == pytest.approx(1.0)
    assert h[lab[0], lab[2]] == pytest.approx(1.0)
    assert h[lab[1], lab[2]] == pytest.approx(0.0)


def test_pxp_detuning_length_check():
    with pytest.raises(ValueError, match="length"):
        M.PXPParams(N=4, delta=(0.0, 1.0))


# ----------------------------------------------------------------------
# Z2 chain with matter
# ----------------------------------------------------------------------

def z2_dense_oracle(p):
    L = p.L
    n = 2 * L - 1
    H = np.zeros((2 ** n, 2 ** n), complex)
    for j in range(L - 1):
        H += -p.J * kron_at({j: SP, L + j: TAUZ, j + 1: SM}, n)
        H += -p.J * kron_at({j: SM, L + j: TAUZ, j + 1: SP}, n)
        H += -p.h * kron_at({L + j: TAUX}, n)
    for j in range(L):
        H += 0.5 * p.m_stagger * (-1 if j % 2 == 0 else 1) * kron_at({j: SZ}, n)
    return H


def test_z2_1d_matches_dense_oracle_and_no_leakage():
    p = M.Z2OneDParams(L=4, J=0.8, h=0.45, m_stagger=0.3, bc="open")
    basis = default_basis("z2_1d", p)
    h = M.build_z2_1d(p, basis)
    assert all_hermitian(h)
    full = z2_dense_oracle(p)
    sel = basis.labels
    inside = full[np.ix_(sel, sel)]
    outside = np.delete(np.arange(full.shape[0]), sel)
    assert np.abs(full[np.ix_(sel, outside)]).max() == 0.0
    assert np.abs(h.dense() - inside).max() < 1e-13


def test_z2_1d_diagonal_at_zero_hopping():
    p = M.Z2OneDParams(L=4, J=0.0, h=0.7)
    basis = default_basis("z2_1d", p)
    assert M.build_z2_1d(p, basis).is_diagonal()


# ----------------------------------------------------------------------
# mixed-field Ising chain and the gauge duality
# ----------------------------------------------------------------------

def test_ising_classical_ferromagnet_degeneracy():
    p = M.IsingLRParams(N=5, g=0.0, h=0.0, coupling=("nearest", 1.0))
    basis = default_basis("ising_lr", p)
    w = np.sort(np.linalg.eigvalsh(M.build_ising_lr(p, basis).dense()))
    assert w[1] - w[0] < 1e-12
    assert w[2] - w[1] > 0.5


def test_ising_coupling_laws_and_validation():
    p = M.IsingLRParams(N=6, coupling=("power", 1.0, 1.5))
    assert p.coupling_at(2) == pytest.approx(2 ** -1.5)
    p = M.IsingLRParams(N=6, coupling=("exp", 2.0, 0.5))
    assert p.coupling_at(3) == pytest.approx(2.0 * math.exp(-1.5))
    with pytest.raises(ValueError, match="alpha"):
        M.IsingLRParams(N=4, coupling=("power", 1.0, -0.5))
    with pytest.raises(ValueError, match="beta"):
        M.IsingLRParams(N=4, coupling=("exp", 1.0, -0.1))


def test_z2_gauge_ising_duality_exact():
    # gauge sector of the matter-coupled Z2 chain vs its dual Ising chain,
    # constant and edge fields included
    for n_matter, g, m, zeta, v0 in ((5, 0.3, 0.8, 1.1, 0.0),
                                     (7, 0.7, 1.3, 0.9, 1.7),
                                     (8, 1.0, 0.5, 0.4, 0.9)):
        vfun = lambda r: v0 / r ** 2
        hg, _ = M.z2_gauged_sector_hamiltonian(n_matter, g, m, zeta, vfun)
        pars, off = M.ising_dual_of_z2_gauged(n_matter, g, m, zeta, vfun)
        basis = default_basis("ising_lr", pars)
        hi = M.build_ising_lr(pars, basis)
        eg = np.sort(np.linalg.eigvalsh(hg.dense()))
        ei = np.sort(np.linalg.eigvalsh(hi.dense())) + off
        assert np.abs(eg - ei).max() < 1e-10


# ----------------------------------------------------------------------
# pure 2d gauge theory
# ----------------------------------------------------------------------

def test_z2_pure_2d_strong_field_ground_state():
    p = M.Z2PureTwoDParams(Lx=2, Ly=2, g=50.0)
    basis = default_basis("z2_pure_2d", p)
    h = M.build_z2_pure_2d(p, basis)
    assert all_hermitian(h)
    w, v = np.linalg.eigh(h.dense())
    gs = np.abs(v[:, 0]) ** 2
    # strong field aligns every link: the all-down-sz basis state dominates
    aligned = basis.index_of(basis.layout.pack([1] * 8))[0]
    assert gs[aligned] > 0.99


def test_z2_pure_2d_topological_degeneracy_at_zero_field():
    p = M.Z2PureTwoDParams(Lx=3, Ly=3, g=0.0)
    basis = default_basis("z2_pure_2d", p)
    h = M.build_z2_pure_2d(p, basis)
    w = np.sort(np.linalg.eigvalsh(h.dense()))
    # plaquette eigenvalues all simultaneously flippable: torus degeneracy 4
    top = w[-4:]
    assert np.abs(top - top[-1]).max() < 1e-10
    assert top[0] - w[-5] > 0.5


# ----------------------------------------------------------------------
# dynamical-link Z2 chain
# ----------------------------------------------------------------------

def test_dfl_charges_commute_and_free_hopping_limit():
    p = M.DflZ2Params(L=4, J=1.0, h=0.0)
    basis = default_basis("dfl_z2", p)
    h, charges = M.build_dfl_z2(p, basis)
    assert h.meta["charge_commutator_defect"] < 1e-12
    assert len(charges) == 4


def test_dfl_spectrum_equals_sector_union():
    # free-fermion oracle: the many-body spectrum is the union over charge
    # configurations AND the leftover Z2 link holonomy (periodic versus
    # antiperiodic composite fermions) of the parity-constrained subset sums
    # of single-particle levels, plus the sector constant h sum(q)
    import itertools
    from lgtlab.freefermion import sector_matrix
    for L in (4, 6):
        J, h = 1.0, 0.7
        p = M.DflZ2Params(L=L, J=J, h=h)
        basis = default_basis("dfl_z2", p)
        hop, _ = M.build_dfl_z2(p, basis)
        many = np.sort(np.linalg.eigvalsh(hop.dense()))
        oracle = []
        for q in itertools.product((1.0, -1.0), repeat=L):
            parity = np.prod(q)
            const = h * sum(q)
            for holonomy in (+1.0, -1.0):
                mat = sector_matrix(L, J, h, np.array(q)).matrix().astype(float)
                mat[0, L - 1] = -J * holonomy
                mat[L - 1, 0] = -J * holonomy
                eps = np.linalg.eigvalsh(mat)
                for occ in itertools.product((0, 1), repeat=L):
                    if (-1) ** sum(occ) != parity:
                        continue
                    oracle.append(sum(e for e, o in zip(eps, occ) if o) + const)
        oracle = np.sort(np.array(oracle))
        assert len(oracle) == len(many)
        assert np.abs(oracle - many).max() < 1e-10


# ----------------------------------------------------------------------
# observable diagonals
# ----------------------------------------------------------------------

def test_matter_density_on_named_states():
    from lgtlab.protocols import named_product_state
    p = M.SchwingerSpinParams(L=6)
    basis = default_basis("schwinger_spin", p)
    nu = M.matter_density_diag(basis)
    bare = named_product_state("schwinger_spin", p, basis, "bare_vacuum")
    assert bare.expectation(nu) == pytest.approx(0.0)
    prol = named_product_state("schwinger_spin", p, basis, "charge_proliferated")
    assert prol.expectation(nu) == pytest.approx(1.0)


def test_qlm_charge_proliferated_has_unit_density_zero_flux():
    from lgtlab.protocols import named_product_state
    p = M.QLMParams(L=6, spin=0.5, m=-5.0)
    basis = default_basis("qlm", p)
    st = named_product_state("qlm", p, basis, "charge_proliferated")
    assert st.expectation(M.matter_density_diag(basis)) == pytest.approx(1.0)
    assert st.expectation(M.flux_diag(basis)) == pytest.approx(0.0)
    vac = named_product_state("qlm", p, basis, "bare_vacuum_left")
    assert vac.expectation(M.matter_density_diag(basis)) == pytest.approx(0.0)
    assert abs(vac.expectation(M.flux_diag(basis))) == pytest.approx(0.5)


def test_bubble_count_diag():
    lay = SiteLayout.chain(6, boundary="periodic")
    from lgtlab.basis import Unconstrained
    basis = enumerate_sector(lay, Unconstrained())
    d1 = M.bubble_count_diag(basis, 1)
    # state with a single down spin at site 2 (all others up)
    label = lay.pack([1, 1, 0, 1, 1, 1])
    assert d1[basis.index_of(label)[0]] == 1.0
    d2 = M.bubble_count_diag(basis, 2)
    label = lay.pack([1, 0, 0, 1, 1, 0])   # one 2-domain, one 1-domain (ring)
    i = basis.index_of(label)[0]
    assert d2[i] == 1.0 and d1[i] == 1.0
