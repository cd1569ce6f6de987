"""Composed experiments: quenches, ramps, scans, wave-packet scattering,
bubble spectroscopy, ramp-collapse fits, charge-sector ensembles, return-rate
runs and revival maps.

The declarative entry point is :class:`ExperimentSpec` (a JSON document, see
``SPEC_SCHEMA``) driven through :func:`run`; the named experiments are also
plain functions usable directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models as M
from . import observables as O
from . import freefermion as F
from .basis import (SiteLayout, enumerate_sector, Unconstrained, GaussU1QLM,
                    GaussZ2Matter, GaussZ2Plaquette2D, BlockadeConstraint,
                    QLMLinkParity, _stag)
from .evolve import (StateVector, PropagatorSpec, Schedule, Segment, evolve,
                     ramp_evolve, ground_space)
from .operators import linear_combination

__all__ = [
    "ExperimentSpec", "SpecValidationError", "CollapseFit", "run",
    "make_wavepacket", "two_packet_state", "scattering_run", "bubble_scan",
    "bubble_collapse", "kz_collapse", "kz_ramp_family", "dfl_experiment",
    "dqpt_run", "scar_scan", "MODEL_REGISTRY", "model_table",
]


class SpecValidationError(ValueError):
    """Invalid experiment description; the message names the offending field."""


# ----------------------------------------------------------------------
# model registry
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ModelDef:
    name: str
    params_cls: type
    citation: str

    def make_params(self, d):
        try:
            return self.params_cls(**d)
        except TypeError as err:
            raise SpecValidationError(f"model.params: {err}") from None
        except ValueError as err:
            raise SpecValidationError(f"model.params: {err}") from None


MODEL_REGISTRY = {
    "schwinger_spin": ModelDef(
        "schwinger_spin", M.SchwingerSpinParams,
        "staggered-fermion gauge chain, links eliminated (Kogut-Susskind form)"),
    "qlm": ModelDef(
        "qlm", M.QLMParams,
        "U(1) quantum link model with spin-S links and staggered matter"),
    "qlm_gauge_only": ModelDef(
        "qlm_gauge_only", M.QLMGaugeOnlyParams,
        "link-only U(1) quantum link model (matter eliminated)"),
    "pxp": ModelDef(
        "pxp", M.PXPParams,
        "blockaded chain (Fendley-Sengupta-Sachdev constrained spin model)"),
    "z2_1d": ModelDef(
        "z2_1d", M.Z2OneDParams,
        "Z2 gauge chain with hardcore matter and electric field"),
    "ising_lr": ModelDef(
        "ising_lr", M.IsingLRParams,
        "mixed-field Ising chain with long-range couplings (Z2 gauge dual)"),
    "z2_pure_2d": ModelDef(
        "z2_pure_2d", M.Z2PureTwoDParams,
        "pure Z2 plaquette gauge theory on a periodic square lattice"),
    "dfl_z2": ModelDef(
        "dfl_z2", M.DflZ2Params,
        "Z2 chain with dynamical links and extensive conserved charges"),
}


def model_table():
    """Rows of (name, parameter fields, citation) for every model."""
    rows = []
    for name, md in sorted(MODEL_REGISTRY.items()):
        fields = ", ".join(md.params_cls.__dataclass_fields__)
        rows.append((name, fields, md.citation))
    return rows


def default_basis(kind, params, sector=None):
    """Layout + sector enumeration for a model, honoring overrides.

    ``sector`` may carry ``gauss_eigenvalues``, ``incoming_flux`` and
    ``filters`` keys.
    """
    sector = sector or {}
    gv = sector.get("gauss_eigenvalues")
    filters = sector.get("filters")
    if kind == "schwinger_spin":
        lay = SiteLayout.chain(params.L)
        return enumerate_sector(lay, Unconstrained(), global_filters=filters)
    if kind == "qlm":
        lay = SiteLayout.gauge_chain(params.L, int(2 * params.spin + 1), params.bc)
        rule = GaussU1QLM(params.spin, sector.get("incoming_flux", 0.0))
        return enumerate_sector(lay, rule, gauss_eigenvalues=gv, global_filters=filters)
    if kind == "qlm_gauge_only":
        lay = SiteLayout.link_chain(params.n_links, int(2 * params.spin + 1), params.bc)
        return enumerate_sector(lay, QLMLinkParity(params.spin))
    if kind == "pxp":
        lay = SiteLayout.chain(params.N, boundary=params.bc)
        return enumerate_sector(lay, BlockadeConstraint())
    if kind == "z2_1d":
        lay = SiteLayout.gauge_chain(params.L, 2, params.bc)
        return enumerate_sector(lay, GaussZ2Matter(), gauss_eigenvalues=gv,
                                global_filters=filters)
    if kind == "ising_lr":
        lay = SiteLayout.chain(params.N)
        return enumerate_sector(lay, Unconstrained(), global_filters=filters)
    if kind == "z2_pure_2d":
        lay = SiteLayout.square_links(params.Lx, params.Ly)
        return enumerate_sector(lay, GaussZ2Plaquette2D(), gauss_eigenvalues=gv)
    if kind == "dfl_z2":
        lay = SiteLayout.gauge_chain(params.L, 2, params.bc)
        return enumerate_sector(lay, Unconstrained(), global_filters=filters)
    raise SpecValidationError(f"model.kind: unknown model {kind!r}")


def build_model(kind, params, basis):
    builder = {
        "schwinger_spin": M.build_schwinger_spin, "qlm": M.build_qlm,
        "qlm_gauge_only": M.build_qlm_gauge_only, "pxp": M.build_pxp,
        "z2_1d": M.build_z2_1d, "ising_lr": M.build_ising_lr,
        "z2_pure_2d": M.build_z2_pure_2d,
    }
    if kind == "dfl_z2":
        h, _ = M.build_dfl_z2(params, basis)
        return h
    return builder[kind](params, basis)


def standard_observables(kind, params, basis):
    """Named diagnostic observables appropriate for the model."""
    obs = {}
    lay = basis.layout
    if kind in ("schwinger_spin", "qlm", "z2_1d", "dfl_z2"):
        obs["matter_density"] = M.matter_density_diag(basis)
    if lay.n_links and kind in ("qlm", "qlm_gauge_only"):
        spin = params.spin
        obs["flux"] = M.flux_diag(basis, spin)
        # |E| resolves the symmetry-broken flux in cat states
        obs["flux_abs"] = np.abs(M.flux_diag(basis, spin))
    if kind == "qlm":
        vac_links = _qlm_vacuum_links(params, branch=0)
        obs["string_length"] = M.string_length_diag(basis, vac_links, params.spin)
    if kind == "pxp":
        obs["domain_wall_density"] = M.domain_wall_density_diag(basis, params.bc)
        obs["excitation_density"] = sum(
            basis.slot_values(j).astype(float) for j in range(params.N)) / params.N
    if kind in ("ising_lr",):
        obs["magnetization"] = M.magnetization_diag(basis)
    if kind in ("z2_1d", "dfl_z2"):
        for i, d in enumerate(M.site_occupation_diags(basis)):
            obs[f"n_{i}"] = d
    if kind == "z2_pure_2d":
        obs["electric"] = sum(
            1.0 - 2.0 * basis.slot_values(lay.link_slot(j)).astype(float)
            for j in range(lay.n_links)) / lay.n_links
    return obs


# ----------------------------------------------------------------------
# initial states
# ----------------------------------------------------------------------

def _qlm_vacuum_links(params, branch):
    """Uniform link background of the two bare vacua, in S^z units."""
    n_links = params.L if params.bc == "periodic" else params.L - 1
    val = -params.spin if branch == 0 else params.spin
    return np.full(n_links, val)


def _qlm_product_label(params, lay, matter_bits, link_choice):
    vals = list(matter_bits) + list(link_choice)
    return lay.pack(vals)


def named_product_state(kind, params, basis, name, rng=None):
    """Construct well-known product states by name."""
    lay = basis.layout
    if kind == "schwinger_spin":
        if name == "bare_vacuum":
            label = lay.pack([1 if j % 2 == 0 else 0 for j in range(params.L)])
        elif name == "charge_proliferated":
            label = lay.pack([0 if j % 2 == 0 else 1 for j in range(params.L)])
        else:
            raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
        return StateVector.product_state(basis, label)
    if kind == "qlm":
        S = params.spin
        if name in ("bare_vacuum_left", "bare_vacuum_right"):
            branch = 0 if name.endswith("left") else 1
            matter = [1 if j % 2 == 0 else 0 for j in range(params.L)]
            links = [int(v + S) for v in _qlm_vacuum_links(params, branch)]
            return StateVector.product_state(
                basis, _qlm_product_label(params, lay, matter, links))
        if name == "charge_proliferated":
            matter = [0 if j % 2 == 0 else 1 for j in range(params.L)]
            links = _solve_qlm_links(params, matter)
            return StateVector.product_state(
                basis, _qlm_product_label(params, lay, matter, links))
        if name == "meson_center":
            # one particle-antiparticle pair on adjacent sites of the left
            # vacuum, connected by a single flipped link
            matter = [1 if j % 2 == 0 else 0 for j in range(params.L)]
            j0 = params.L // 2 - 1
            matter[j0] ^= 1
            matter[j0 + 1] ^= 1
            links = _solve_qlm_links(params, matter)
            return StateVector.product_state(
                basis, _qlm_product_label(params, lay, matter, links))
        raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
    if kind == "pxp":
        if name == "z2":
            label = lay.pack([1 if j % 2 == 0 else 0 for j in range(params.N)])
        elif name == "z2bar":
            label = lay.pack([0 if j % 2 == 0 else 1 for j in range(params.N)])
        elif name == "vacuum":
            label = lay.pack([0] * params.N)
        elif name == "random_constrained":
            rng = rng or np.random.default_rng(0)
            label = int(basis.labels[rng.integers(0, basis.dim)])
        else:
            raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
        return StateVector.product_state(basis, label)
    if kind == "ising_lr":
        # matter bit 1 is sigma^z = +1 (up)
        if name in ("all_up", "false_vacuum"):
            label = lay.pack([1] * params.N)
        elif name == "all_down":
            label = lay.pack([0] * params.N)
        elif name == "single_kink_center":
            mid = (params.N + 1) // 2
            label = lay.pack([1 if j < mid else 0 for j in range(params.N)])
        else:
            raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
        return StateVector.product_state(basis, label)
    if kind == "z2_1d":
        if name == "single_particle_center":
            mid = params.L // 2
            matter = [1 if j == mid else 0 for j in range(params.L)]
            links = [1 if j < mid else 0 for j in range(lay.n_links)]
            return StateVector.product_state(basis, lay.pack(matter + links))
        if name == "empty":
            return StateVector.product_state(basis, lay.pack([0] * lay.n_slots))
        raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
    if kind == "dfl_z2":
        if name in ("polarized_superposition", "staggered_superposition"):
            matter = [1 if j % 2 == 0 else 0 for j in range(params.L)]
            return dfl_superposition_state(basis, matter)
        if name == "uniform_sector":
            matter = [1 if j % 2 == 0 else 0 for j in range(params.L)]
            links = [0] * lay.n_links       # all tau^x = +1: the uniform sector
            return StateVector.product_state(basis, lay.pack(matter + links))
        raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
    if kind == "z2_pure_2d":
        if name == "random_sector_state":
            rng = rng or np.random.default_rng(0)
            label = int(basis.labels[rng.integers(0, basis.dim)])
            return StateVector.product_state(basis, label)
        raise SpecValidationError(f"initial_state.name: unknown {name!r} for {kind}")
    raise SpecValidationError(f"initial_state: no named states for model {kind!r}")


def _solve_qlm_links(params, matter_bits):
    """Link S^z pattern consistent with the Gauss law for a matter product
    state (integer solution required)."""
    L = params.L
    S = params.spin
    n_links = L if params.bc == "periodic" else L - 1
    q = [((2 * matter_bits[j] - 1) + _stag(j)) / 2.0 for j in range(L)]
    start_vals = np.arange(0, int(2 * S) + 1) - S
    for e0 in start_vals:
        links = [e0]
        ok = True
        for j in range(1, n_links):
            nxt = links[-1] + q[j]
            if abs(nxt) > S or (nxt + S) % 1 != 0:
                ok = False
                break
            links.append(nxt)
        if ok and params.bc == "periodic":
            back = links[-1] + q[0]
            if back != links[0]:
                ok = False
        if ok:
            return [int(v + S) for v in links]
    raise SpecValidationError("initial_state: no Gauss-consistent link pattern "
                              "for the requested matter configuration")


def dfl_superposition_state(basis, matter_bits):
    """Link-polarized (sigma^z up on every link) times a matter product state:
    the equal-weight superposition over every link-x configuration."""
    lay = basis.layout
    matter_label = 0
    for j, b in enumerate(matter_bits):
        matter_label |= int(b) << lay.slot_offset(j)
    n_links = lay.n_links
    amps = np.zeros(basis.dim, dtype=np.complex128)
    for xs in range(1 << n_links):
        label = matter_label
        for k in range(n_links):
            label |= ((xs >> k) & 1) << lay.slot_offset(lay.link_slot(k))
        amps[basis.index_of(label)[0]] = 1.0
    return StateVector.from_amplitudes(basis, amps)


# ----------------------------------------------------------------------
# wave packets
# ----------------------------------------------------------------------

def make_wavepacket(basis, x0, k0, dx, species="ising_meson", base_label=None,
                    clip_warn=0.01):
    """Gaussian one-excitation packet sum_i psi_i |1, i> with
    psi_i = N^{-1} exp[-(x_i - x0)^2 / (2 dx^2) + i k0 x_i].

    species "ising_meson": |1, i> flips spin i of the all-up chain (a bound
    kink pair).  Emits a warning dict entry when more than ``clip_warn`` of
    the envelope weight falls outside the chain.
    """
    if dx <= 0:
        raise ValueError("wave-packet width dx must be positive")
    lay = basis.layout
    N = lay.n_matter
    if base_label is None:
        base = lay.pack([1] * N)      # all-up vacuum; a packet flips one spin
    else:
        base = int(base_label)
    xs = np.arange(N, dtype=float)
    env = np.exp(-((xs - x0) ** 2) / (2.0 * dx * dx))
    # envelope weight beyond the chain, on a unit grid extended 6 dx outward
    ext = np.arange(-int(6 * dx) - 2, N + int(6 * dx) + 2, dtype=float)
    full = np.exp(-((ext - x0) ** 2) / (dx * dx))
    inside = np.exp(-((xs - x0) ** 2) / (dx * dx))
    clipped = 1.0 - inside.sum() / full.sum()
    psi = env * np.exp(1j * k0 * xs)
    if species == "ising_meson":
        labels = np.array([base ^ (1 << lay.slot_offset(j)) for j in range(N)])
    else:
        raise ValueError(f"unknown wave-packet species {species!r}")
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[basis.index_of(labels)] = psi
    state = StateVector.from_amplitudes(basis, amps)
    meta = {"x0": x0, "k0": k0, "dx": dx, "clipped_weight": float(clipped)}
    if clipped > clip_warn:
        meta["warning"] = (f"wave packet clipped by {clipped:.1%} at the boundary")
    return state, meta


def two_packet_state(basis, packets, species="ising_meson"):
    """Product of two space-separated packets: sum_{i<j} psi1_i psi2_j |1_i 1_j>.

    Packets must be separated by at least four widths (checked)."""
    (x1, k1, d1), (x2, k2, d2) = packets
    if abs(x2 - x1) < 4.0 * max(d1, d2):
        raise ValueError("packets must start at least four widths apart")
    lay = basis.layout
    N = lay.n_matter
    base = lay.pack([1] * N)
    xs = np.arange(N, dtype=float)
    psi1 = np.exp(-((xs - x1) ** 2) / (2 * d1 * d1) + 1j * k1 * xs)
    psi2 = np.exp(-((xs - x2) ** 2) / (2 * d2 * d2) + 1j * k2 * xs)
    amps = np.zeros(basis.dim, dtype=np.complex128)
    for i in range(N):
        if abs(psi1[i]) < 1e-12:
            continue
        for j in range(N):
            if i == j or abs(psi2[j]) < 1e-12:
                continue
            label = base ^ (1 << lay.slot_offset(i)) ^ (1 << lay.slot_offset(j))
            amps[basis.index_of(label)[0]] += psi1[i] * psi2[j]
    return StateVector.from_amplitudes(basis, amps)


def scattering_run(params, packets, times, dressing=None, prop=None,
                   mid_fraction=0.34):
    """Collide two packets in the mixed-field Ising chain.

    dressing: None for a plain quench under ``params``, or a dict with keys
    ``g_f`` and ``tau`` for an adiabatic transverse-field ramp 0 -> g_f over
    tau before the collision window (the state-space analog of slowly
    switching on the interactions), optionally ``ramp_down: true`` to undress
    after the window.

    Returns a dict with the kink-density SeriesFrame (columns ``q_<x>``), the
    flipped-magnetization weight inside the central window
    (``mid_weight``), the collision-cut half-chain entropy (``entropy``),
    and the elastic/inelastic verdict against 5x the pre-collision
    background.
    """
    prop = prop or PropagatorSpec()
    basis = default_basis("ising_lr", params)
    psi = two_packet_state(basis, packets)
    times = np.asarray(times, dtype=float)
    schedule_time = 0.0
    builder = ising_field_family(params, basis, "g")
    if dressing:
        tau = dressing["tau"]
        seg = Segment(tau, {"g": 0.0}, {"g": dressing["g_f"]})
        psi = ramp_evolve(builder, Schedule((seg,)), psi, [tau], prop)[0]
        params = M.IsingLRParams(**_params_dict(params, g=dressing["g_f"]))
        schedule_time = tau
    h = M.build_ising_lr(params, basis)
    states = evolve(h, psi, times, prop)
    if dressing and dressing.get("ramp_down"):
        tau = dressing["tau"]
        seg = Segment(tau, {"g": params.g}, {"g": 0.0})
        states[-1] = ramp_evolve(builder, Schedule((seg,)), states[-1], [tau], prop)[0]
    N = params.N
    xs, qd = M.charge_density_diags(basis, left_static=+1, right_static=+1)
    cols = {}
    qmat = np.empty((len(states), len(xs)))
    for it, st in enumerate(states):
        p2 = np.abs(st.amplitudes) ** 2
        qmat[it] = [float((p2 * d).sum()) for d in qd]
    for ix, x in enumerate(xs):
        cols[f"q_{x}"] = qmat[:, ix]
    # flipped magnetization inside the central window
    half = int(N * mid_fraction / 2)
    mid = range(N // 2 - half, N // 2 + half + 1)
    flip = sum((1.0 - (2.0 * basis.slot_values(j) - 1.0)) / 2.0 for j in mid)
    wmid = np.array([float((np.abs(s.amplitudes) ** 2 * flip).sum()) for s in states])
    cols["mid_weight"] = wmid
    ent = np.empty(len(states))
    cut = list(range(N // 2))
    for it, st in enumerate(states):
        _, ee = O.entanglement(st, cut)
        ent[it] = ee["von_neumann"]
    cols["entropy"] = ent
    background = wmid[0]
    signal = wmid[-1]
    frame = O.SeriesFrame(times + schedule_time, cols, {
        "model": "ising_lr", "N": N, "packets": [list(p) for p in packets],
        "dressing": dressing or {}, "mid_window": [min(mid), max(mid)],
    })
    return {
        "frame": frame,
        "background_weight": float(background),
        "final_mid_weight": float(signal),
        "inelastic": bool(signal > 5.0 * max(background, 1e-12)),
    }


def _params_dict(params, **overrides):
    d = {k: getattr(params, k) for k in params.__dataclass_fields__}
    d.update(overrides)
    return d


def ising_field_family(base, basis, vary):
    """Fast builder for Ising ramps linear in the transverse or longitudinal
    field: H(v) = H(rest) + v * field term.  ``vary`` is "g" or "h"."""
    if vary not in ("g", "h"):
        raise ValueError("vary must be 'g' or 'h'")
    h0 = M.build_ising_lr(M.IsingLRParams(**_params_dict(base, **{vary: 0.0})), basis)
    unit = M.build_ising_lr(
        M.IsingLRParams(N=base.N, coupling=("nearest", 0.0), **{vary: 1.0}), basis)

    def builder(d):
        v = d.get(vary, getattr(base, vary))
        if v == 0.0:
            return h0
        return linear_combination([(1.0, h0), (float(v), unit)])

    return builder


# ----------------------------------------------------------------------
# false-vacuum bubbles
# ----------------------------------------------------------------------

def bubble_scan(N, J, h_grid, g, t_star, n_max=3, bc="periodic"):
    """Magnetization activity |M(t*) - M(0)| and n-bubble densities of the
    false vacuum (all spins up) after a quench, scanned over the longitudinal
    field.  Resonant response appears at h = -2J/n."""
    basis = default_basis("ising_lr", M.IsingLRParams(N=N, g=g, h=0.0))
    mag = M.magnetization_diag(basis)
    bubbles = {n: M.bubble_count_diag(basis, n, bc) for n in range(1, n_max + 1)}
    label0 = basis.layout.pack([1] * N)      # false vacuum: all spins up
    activity = np.empty(len(h_grid))
    dens = {n: np.empty(len(h_grid)) for n in bubbles}
    for ih, h in enumerate(h_grid):
        params = M.IsingLRParams(N=N, g=g, h=h,
                                 coupling=("table", _ring_nn_table(N, J, bc)))
        hmat = M.build_ising_lr(params, basis)
        psi0 = StateVector.product_state(basis, label0)
        st = evolve(hmat, psi0, [t_star], PropagatorSpec(method="exact"))[0]
        p2 = np.abs(st.amplitudes) ** 2
        activity[ih] = abs(float((p2 * mag).sum()) - 1.0)
        for n in bubbles:
            dens[n][ih] = float((p2 * bubbles[n]).sum()) / N
    return {"h": np.asarray(h_grid, dtype=float), "activity": activity,
            "bubble_density": dens}


def _ring_nn_table(N, J, bc):
    """Nearest-neighbor coupling table; on a ring the single pair at distance
    N-1 is the closing bond."""
    table = [0.0] * (N - 1)
    table[0] = J
    if bc == "periodic":
        table[N - 2] += J
    return tuple(table)


def bubble_collapse(N, J, h_res, g_list, u_grid, n=2, bc="periodic"):
    """n-bubble density curves at the bubble resonance, one per transverse
    field g, on the rescaled clock u = g^2 t.  At the resonance the dynamics
    is generated at second order in g, so the curves collapse as g -> 0
    (Landau-Zener scaling).  Returns the curves and the inter-curve RMS over
    the mean signal."""
    basis = default_basis("ising_lr", M.IsingLRParams(N=N, g=0.0, h=h_res))
    bub = M.bubble_count_diag(basis, n, bc)
    label0 = basis.layout.pack([1] * N)
    curves = {}
    for g in g_list:
        params = M.IsingLRParams(N=N, g=g, h=h_res,
                                 coupling=("table", _ring_nn_table(N, J, bc)))
        hmat = M.build_ising_lr(params, basis)
        psi0 = StateVector.product_state(basis, label0)
        ts = np.asarray(u_grid) / (g * g)
        states = evolve(hmat, psi0, ts, PropagatorSpec(method="exact"))
        curves[g] = np.array([float((np.abs(s.amplitudes) ** 2 * bub).sum()) / N
                              for s in states])
    arr = np.stack(list(curves.values()))
    signal = float(arr.mean())
    rms = float(np.sqrt(((arr - arr.mean(axis=0)) ** 2).mean()))
    return {"u": np.asarray(u_grid, dtype=float), "curves": curves,
            "signal": signal, "inter_curve_rms": rms}


# ----------------------------------------------------------------------
# ramp collapse
# ----------------------------------------------------------------------

@dataclass
class CollapseFit:
    exponent: float
    residual: float
    window: tuple
    degenerate: bool = False


def kz_collapse(curves, t_ref=None, exponent_grid=None):
    """Best power of the ramp duration that collapses the curves.

    curves: dict tau -> (times, values).  Each curve is rescaled to
    u = (t - t_ref(tau)) / tau^mu (t_ref defaults to 0) and compared on the
    overlapping u window; the fitted exponent minimizes the inter-curve RMS.
    Identical curves make the fit degenerate and are flagged.
    """
    if len(curves) < 2:
        raise ValueError("need at least two ramp durations")
    taus = sorted(curves)
    ref = (lambda tau: 0.0) if t_ref is None else t_ref
    vals = [np.asarray(curves[t][1], dtype=float) for t in taus]
    flat = [v - v.mean() for v in vals]
    if max(np.abs(f).max() for f in flat) < 1e-12 or all(
            len(v) == len(vals[0]) and np.allclose(v, vals[0], atol=1e-12) for v in vals):
        return CollapseFit(float("nan"), 0.0, (0.0, 0.0), degenerate=True)
    grid = exponent_grid if exponent_grid is not None else np.linspace(0.0, 1.2, 241)

    def misfit(mu):
        us = [(np.asarray(curves[t][0]) - ref(t)) / t ** mu for t in taus]
        lo = max(u[0] for u in us)
        hi = min(u[-1] for u in us)
        if hi <= lo:
            return np.inf, (lo, hi)
        grid_u = np.linspace(lo, hi, 200)
        interp = np.stack([np.interp(grid_u, u, v) for u, v in zip(us, vals)])
        return float(np.sqrt(((interp - interp.mean(axis=0)) ** 2).mean())), (lo, hi)

    best = None
    for mu in grid:
        r, win = misfit(mu)
        if best is None or r < best[1]:
            best = (mu, r, win)
    if not np.isfinite(best[1]):
        raise ValueError("no overlapping rescaled window across the curves")
    return CollapseFit(float(best[0]), float(best[1]), best[2])


def kz_ramp_family(N, J, g, taus, h_final, times_per_tau=60, prop=None,
                   tol=1e-8):
    """Linear longitudinal-field ramps h(t) = 2 J t / tau from the interacting
    ground state at h = 0; returns magnetization curves per ramp duration."""
    prop = prop or PropagatorSpec()
    base = M.IsingLRParams(N=N, g=g, h=0.0)
    basis = default_basis("ising_lr", base)
    h0 = M.build_ising_lr(base, basis)
    (e0, psi0), = ground_space(h0, basis, k=1, tol=tol)
    mag = M.magnetization_diag(basis)
    builder = ising_field_family(base, basis, "h")
    curves = {}
    for tau in taus:
        t_end = tau * h_final / (2.0 * J)
        seg = Segment(t_end, {"h": 0.0}, {"h": h_final})
        ts = np.linspace(0.0, t_end, times_per_tau)
        states = ramp_evolve(builder, Schedule((seg,)), psi0, ts, prop)
        vals = [float(np.real(s.expectation(mag))) for s in states]
        curves[tau] = (ts, np.array(vals))
    return curves


# ----------------------------------------------------------------------
# charge-sector ensembles
# ----------------------------------------------------------------------

def dfl_experiment(L, J, h, route, times, prop=None, seed=0):
    """Density dynamics of the dynamical-link Z2 chain from the
    link-polarized superposition state.

    route "many_body": full evolution (guarded at L <= 8), including the
    half-chain entanglement entropy.  route "free_fermion_ensemble": exact
    equal-weight sector average.  Both give identical local fermion
    observables.
    """
    matter = [1 if j % 2 == 0 else 0 for j in range(L)]
    times = np.asarray(times, dtype=float)
    if route == "many_body":
        if L > 8:
            raise ValueError("many-body route guarded at L <= 8")
        params = M.DflZ2Params(L=L, J=J, h=h)
        basis = default_basis("dfl_z2", params)
        hmat, charges = M.build_dfl_z2(params, basis)
        psi0 = dfl_superposition_state(basis, matter)
        states = evolve(hmat, psi0, times, prop or PropagatorSpec())
        cols = {}
        dens = np.empty((len(states), L))
        occd = M.site_occupation_diags(basis)
        for it, st in enumerate(states):
            p2 = np.abs(st.amplitudes) ** 2
            dens[it] = [float((p2 * d).sum()) for d in occd]
        for i in range(L):
            cols[f"n_{i}"] = dens[:, i]
        sign = np.array([1.0 if matter[i] else -1.0 for i in range(L)])
        cols["imbalance"] = (dens * sign).sum(axis=1) / L * 2.0
        ent = np.empty(len(states))
        cut = list(range(L // 2)) + [basis.layout.link_slot(j) for j in range(L // 2)]
        for it, st in enumerate(states):
            _, ee = O.entanglement(st, cut)
            ent[it] = ee["von_neumann"]
        cols["entropy_half"] = ent
        return O.SeriesFrame(times, cols, {"route": route, "L": L, "J": J, "h": h})
    if route == "free_fermion_ensemble":
        out = F.dfl_ensemble(L, J, h, matter, times, sampling="exact_sum")
        cols = {f"n_{i}": out["density"][:, i] for i in range(L)}
        cols["imbalance"] = out["imbalance"]
        return O.SeriesFrame(times, cols, {"route": route, "L": L, "J": J, "h": h})
    raise SpecValidationError(f"protocol.route: unknown {route!r}")


# ----------------------------------------------------------------------
# return-rate runs and revival maps
# ----------------------------------------------------------------------

def dqpt_run(params_pre, params_post, times, degeneracy_tol=1e-8):
    """Quench between two QLM parameter sets, starting from the degenerate
    vacuum pair of the pre-quench Hamiltonian.

    Returns the branch-resolved rate functions, the kink times where the
    dominant branch switches, and the flux order parameter with its
    sign-change times.
    """
    basis = default_basis("qlm", params_pre)
    h_pre = M.build_qlm(params_pre, basis)
    if h_pre.is_diagonal():
        d = h_pre.diag()
        order = np.argsort(d)
        lo = d[order[0]]
        vac_idx = order[np.abs(d[order] - lo) < degeneracy_tol]
        if len(vac_idx) != 2:
            raise ValueError(f"expected a two-fold degenerate vacuum pair, found "
                             f"{len(vac_idx)} states within {degeneracy_tol}")
        vacs = []
        for i in vac_idx:
            amp = np.zeros(basis.dim, dtype=np.complex128)
            amp[i] = 1.0
            vacs.append(StateVector(basis, amp))
    else:
        pairs = ground_space(h_pre, basis, k=2)
        if abs(pairs[0][0] - pairs[1][0]) > degeneracy_tol:
            raise ValueError("vacuum degeneracy absent at the pre-quench parameters: "
                             f"gap {abs(pairs[0][0] - pairs[1][0]):.3e}")
        vacs = [p[1] for p in pairs]
    flux = M.flux_diag(basis, params_pre.spin)
    # order the branches by their flux sign so branch 0 is the negative vacuum
    vacs.sort(key=lambda v: float(np.real(v.expectation(flux))))
    h_post = M.build_qlm(params_post, basis)
    res = O.loschmidt(vacs, h_post, times, volume=params_pre.L)
    w, v = h_post.eigh()
    c0 = v.conj().T @ vacs[0].amplitudes
    evals = []
    for t in times:
        psi = v @ (np.exp(-1j * w * t) * c0)
        evals.append(float((np.abs(psi) ** 2 * flux).sum()))
    evals = np.array(evals)
    sflip = np.asarray(times)[1:][np.diff(np.sign(evals)) != 0]
    return {"loschmidt": res, "flux": evals, "flux_sign_changes": sflip,
            "kink_times": res.kink_times, "basis": basis}


def scar_scan(N, m_grid, chi_grid, times, states=("z2", "vacuum"), omega=1.0,
              bc="periodic", threshold=0.01):
    """First-revival fidelity height of the blockaded chain over a
    (mass, staggering) grid and a set of named initial states."""
    out = {}
    for mm in m_grid:
        for cc in chi_grid:
            params = M.PXPParams.staggered(N=N, omega=omega, m=mm, chi=cc, bc=bc)
            basis = default_basis("pxp", params)
            h = M.build_pxp(params, basis)
            for sname in states:
                psi0 = named_product_state("pxp", params, basis, sname)
                fid, peaks = O.revival_scan(psi0, h, times, threshold=threshold)
                out[(float(mm), float(cc), sname)] = {
                    "first_peak": peaks[0] if peaks else None,
                    "fidelity": fid,
                }
    return out


# ----------------------------------------------------------------------
# declarative runner
# ----------------------------------------------------------------------

SPEC_SCHEMA = {
    "model": {"kind": "one of " + ", ".join(sorted(MODEL_REGISTRY)),
              "params": "keyword arguments of the model parameter class"},
    "basis": "optional sector overrides: gauss_eigenvalues, incoming_flux, filters",
    "initial_state": {"type": "named_product | ground_state_of | vacuum_branch | superposition_all_sectors",
                      "name": "state name for named_product",
                      "index": "branch index for vacuum_branch",
                      "params": "parameter overrides for ground_state_of"},
    "protocol": {"type": "quench | ramp | scan",
                 "schedule": "ramp only: list of {duration, start, end}",
                 "parameter": "scan only: parameter name",
                 "values": "scan only: list of values"},
    "propagator": "optional: {method, subspace_dim, tol, dt, order}",
    "observables": "list of named observables (default: model standard set)",
    "times": "{start, stop, num} or explicit list",
    "seed": "integer RNG seed (default 0)",
}


@dataclass
class ExperimentSpec:
    model_kind: str
    model_params: dict
    initial_state: dict
    protocol: dict
    times: np.ndarray
    propagator: PropagatorSpec = field(default_factory=PropagatorSpec)
    basis_spec: dict = field(default_factory=dict)
    observables: list = None
    seed: int = 0

    @classmethod
    def from_dict(cls, doc):
        def need(key, where, d):
            if key not in d:
                raise SpecValidationError(f"{where}: missing required field {key!r}")
            return d[key]

        model = need("model", "spec", doc)
        kind = need("kind", "model", model)
        if kind not in MODEL_REGISTRY:
            raise SpecValidationError(f"model.kind: unknown model {kind!r}")
        params = need("params", "model", model)
        init = need("initial_state", "spec", doc)
        if "type" not in init:
            raise SpecValidationError("initial_state: missing required field 'type'")
        protocol = doc.get("protocol", {"type": "quench"})
        ptype = protocol.get("type")
        if ptype not in ("quench", "ramp", "scan"):
            raise SpecValidationError(f"protocol.type: unknown {ptype!r}")
        times = need("times", "spec", doc)
        if isinstance(times, dict):
            for k in ("start", "stop", "num"):
                if k not in times:
                    raise SpecValidationError(f"times: missing field {k!r}")
            tgrid = np.linspace(times["start"], times["stop"], int(times["num"]))
        else:
            tgrid = np.asarray(times, dtype=float)
        if len(tgrid) == 0 or (np.diff(tgrid) < 0).any():
            raise SpecValidationError("times: grid must be nonempty and ascending")
        prop = doc.get("propagator", {})
        try:
            pspec = PropagatorSpec(**prop)
        except (TypeError, ValueError) as err:
            raise SpecValidationError(f"propagator: {err}") from None
        return cls(kind, params, init, protocol, tgrid, pspec,
                   doc.get("basis", {}), doc.get("observables"),
                   int(doc.get("seed", 0)))


def _initial_state(spec, kind, params, basis, rng):
    init = spec.initial_state
    t = init["type"]
    if t == "named_product":
        if "name" not in init:
            raise SpecValidationError("initial_state.name: required for named_product")
        return named_product_state(kind, params, basis, init["name"], rng)
    if t == "ground_state_of":
        gp = MODEL_REGISTRY[kind].make_params({**spec.model_params, **init.get("params", {})})
        hg = build_model(kind, gp, basis)
        (e0, psi0), = ground_space(hg, basis, k=1)
        return psi0
    if t == "vacuum_branch":
        idx = init.get("index", 0)
        if kind != "qlm":
            raise SpecValidationError("initial_state.type: vacuum_branch is a qlm state")
        name = "bare_vacuum_left" if idx == 0 else "bare_vacuum_right"
        return named_product_state(kind, params, basis, name, rng)
    if t == "superposition_all_sectors":
        if kind != "dfl_z2":
            raise SpecValidationError(
                "initial_state.type: superposition_all_sectors is a dfl_z2 state")
        return named_product_state(kind, params, basis, "polarized_superposition", rng)
    raise SpecValidationError(f"initial_state.type: unknown {t!r}")


def run(spec):
    """Execute a declarative experiment; returns a SeriesFrame.

    Deterministic for a fixed spec and seed: the metadata embeds the full
    spec, the basis dimension and the package version.
    """
    from . import __version__
    kind = spec.model_kind
    params = MODEL_REGISTRY[kind].make_params(spec.model_params)
    basis = default_basis(kind, params, spec.basis_spec)
    if basis.dim == 0:
        raise SpecValidationError("basis: the requested sector is empty")
    rng = np.random.default_rng(spec.seed)
    obs = standard_observables(kind, params, basis)
    if spec.observables:
        missing = [o for o in spec.observables if o not in obs]
        if missing:
            raise SpecValidationError(f"observables: unknown names {missing}")
        obs = {k: obs[k] for k in spec.observables}
    psi0 = _initial_state(spec, kind, params, basis, rng)
    meta = {
        "spec": {
            "model": {"kind": kind, "params": dict(spec.model_params)},
            "initial_state": spec.initial_state, "protocol": spec.protocol,
            "seed": spec.seed,
        },
        "basis_dim": basis.dim,
        "code_version": __version__,
    }
    ptype = spec.protocol["type"]
    if ptype == "quench":
        h = build_model(kind, params, basis)
        states = evolve(h, psi0, spec.times, spec.propagator)
        frame = O.local_series(states, spec.times, obs, meta)
    elif ptype == "ramp":
        segs = []
        for i, seg in enumerate(spec.protocol.get("schedule", [])):
            try:
                segs.append(Segment(seg["duration"], seg["start"], seg.get("end")))
            except (KeyError, ValueError) as err:
                raise SpecValidationError(f"protocol.schedule[{i}]: {err}") from None
        if not segs:
            raise SpecValidationError("protocol.schedule: a ramp needs segments")
        sched = Schedule(tuple(segs))

        def builder(d):
            return build_model(kind, MODEL_REGISTRY[kind].make_params(
                {**spec.model_params, **d}), basis)

        states = ramp_evolve(builder, sched, psi0, spec.times, spec.propagator)
        frame = O.local_series(states, spec.times, obs, meta)
    else:  # scan
        pname = spec.protocol.get("parameter")
        values = spec.protocol.get("values")
        if not pname or values is None:
            raise SpecValidationError("protocol: scan needs 'parameter' and 'values'")
        cols = {name: [] for name in obs}
        for val in values:
            pp = MODEL_REGISTRY[kind].make_params({**spec.model_params, pname: val})
            h = build_model(kind, pp, basis)
            st = evolve(h, psi0, [spec.times[-1]], spec.propagator)[0]
            for name, ob in obs.items():
                cols[name].append(float(np.real(st.expectation(ob))))
        frame = O.SeriesFrame(np.asarray(values, dtype=float),
                              {k: np.asarray(v) for k, v in cols.items()}, meta)
        frame.metadata["scan_parameter"] = pname
    return frame
