"""Diagnostics computed from states, spectra and operators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .operators import SparseOperator

__all__ = [
    "SeriesFrame", "EntanglementData", "GapRatioResult", "LoschmidtResult",
    "local_series", "largest_domain_distribution", "entanglement",
    "gap_ratios", "esff", "eth_statistics", "level_spacing", "loschmidt",
    "revival_scan", "boundary_star_labeler",
]

_SCHMIDT_FLOOR = 1e-14


@dataclass
class SeriesFrame:
    """Time-indexed table of named real observable series plus metadata."""

    times: np.ndarray
    columns: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float)
            if len(col) != len(self.times):
                raise ValueError(f"column {name!r} length != time grid length")
            self.columns[name] = col

    def to_csv(self, path):
        names = list(self.columns)
        with open(path, "w") as fh:
            fh.write(",".join(["time"] + names) + "\n")
            for i, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(self.columns[n][i])) for n in names]
                fh.write(",".join(row) + "\n")

    def to_json(self, path):
        payload = {
            "times": self.times.tolist(),
            "columns": {k: v.tolist() for k, v in self.columns.items()},
            "metadata": self.metadata,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")


def local_series(states, times, observables, metadata=None):
    """Expectation values of named observables over a list of states.

    ``observables`` maps a column name to a SparseOperator or a diagonal
    array on the states' basis; expectation values of Hermitian operators
    must come out real (checked to 1e-10).
    """
    cols = {}
    for name, ob in observables.items():
        vals = np.empty(len(states))
        for i, st in enumerate(states):
            e = st.expectation(ob)
            if abs(np.imag(e)) > 1e-10 * max(1.0, abs(e)):
                raise ValueError(f"observable {name!r} returned a complex "
                                 f"expectation {e}")
            vals[i] = np.real(e)
        cols[name] = vals
    return SeriesFrame(np.asarray(times, dtype=float), cols, metadata or {})


def largest_domain_distribution(states, times):
    """P(n, t): probability that the largest connected up-spin domain has
    size n, computed exactly from the basis-state probabilities.

    Returns a SeriesFrame with columns ``P0 .. PN``.
    """
    basis = states[0].basis
    N = basis.layout.n_matter
    sizes = np.empty(basis.dim, dtype=np.int64)
    for i, label in enumerate(basis.labels):
        best = run = 0
        for j in range(N):
            if (int(label) >> basis.layout.slot_offset(j)) & 1:
                run += 1
                best = max(best, run)
            else:
                run = 0
        sizes[i] = best
    cols = {f"P{n}": np.zeros(len(states)) for n in range(N + 1)}
    for i, st in enumerate(states):
        prob = np.abs(st.amplitudes) ** 2
        acc = np.bincount(sizes, weights=prob, minlength=N + 1)
        for n in range(N + 1):
            cols[f"P{n}"][i] = acc[n]
    return SeriesFrame(np.asarray(times, dtype=float), cols)


# ----------------------------------------------------------------------
# entanglement
# ----------------------------------------------------------------------

@dataclass
class EntanglementData:
    """Schmidt spectrum of a bipartition, descending, with optional
    superselection tags per Schmidt value."""

    cut: tuple
    schmidt_probs: np.ndarray
    sector_tags: list = None
    truncated_weight: float = 0.0

    def __post_init__(self):
        self.schmidt_probs = np.asarray(self.schmidt_probs, dtype=float)
        if len(self.schmidt_probs) > 1 and (np.diff(self.schmidt_probs) > 0).any():
            raise ValueError("Schmidt probabilities must be descending")
        total = self.schmidt_probs.sum() + self.truncated_weight
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"Schmidt probabilities sum to {total}, not 1")

    def entanglement_levels(self):
        """xi = -log p, ascending (the entanglement-Hamiltonian spectrum)."""
        return -np.log(self.schmidt_probs)


def _split_bits(basis, cut):
    """Per-label (a_index, b_index) in the subsystem product spaces."""
    lay = basis.layout
    cut = sorted(cut)
    comp = [s for s in range(lay.n_slots) if s not in cut]
    if not cut or not comp:
        raise ValueError("the cut must be a proper nonempty slot subset")
    labels = basis.labels

    def pack_side(slots):
        packed = np.zeros(len(labels), dtype=np.int64)
        shift = 0
        for s in slots:
            packed |= basis.slot_values(s).astype(np.int64) << shift
            shift += lay.slot_width(s)
        return packed

    return pack_side(cut), pack_side(comp), cut, comp


def entanglement(state, cut, renyi=(2,), resolve_sectors=False, sector_labeler=None):
    """Schmidt decomposition across a slot cut, plus entropies.

    The reduced state of a constrained basis is built by embedding the
    amplitudes into the full tensor product of the two subsystem spaces.
    With ``resolve_sectors`` the Schmidt problem block-diagonalizes over the
    superselection labels produced by ``sector_labeler(a_labels) ->
    integer array`` (for gauge sectors use :func:`boundary_star_labeler`);
    the returned spectrum is identical, only the tags are added.

    Returns ``(EntanglementData, entropies)`` where entropies holds
    ``von_neumann`` and ``renyi_<k>`` values.
    """
    a_idx, b_idx, cut, comp = _split_bits(state.basis, cut)
    amps = state.amplitudes
    probs = []
    tags = []
    if resolve_sectors:
        if sector_labeler is None:
            raise ValueError("resolve_sectors needs a sector_labeler")
        labels = np.asarray(sector_labeler(a_idx))
        for lab in np.unique(labels):
            sel = labels == lab
            p = _schmidt_probs(a_idx[sel], b_idx[sel], amps[sel])
            probs.append(p)
            tags.extend([int(lab)] * len(p))
    else:
        probs.append(_schmidt_probs(a_idx, b_idx, amps))
        tags = None
    p = np.concatenate(probs) if probs else np.empty(0)
    order = np.argsort(p)[::-1]
    p = p[order]
    if tags is not None:
        tags = [tags[i] for i in order]
    keep = p > _SCHMIDT_FLOOR
    truncated = float(p[~keep].sum())
    p = p[keep]
    if tags is not None:
        tags = [t for t, k in zip(tags, keep) if k]
    # remove the numerical residue from the kept weight reporting side
    data = EntanglementData(tuple(cut), p, tags, truncated)
    s_vn = float(-(p * np.log(p)).sum())
    entropies = {"von_neumann": s_vn}
    for k in renyi:
        entropies[f"renyi_{k}"] = float(np.log((p ** k).sum()) / (1.0 - k))
    return data, entropies


def _schmidt_probs(a_idx, b_idx, amps):
    ua, ia = np.unique(a_idx, return_inverse=True)
    ub, ib = np.unique(b_idx, return_inverse=True)
    mat = np.zeros((len(ua), len(ub)), dtype=np.complex128)
    np.add.at(mat, (ia, ib), amps)
    sv = np.linalg.svd(mat, compute_uv=False)
    return sv ** 2


def boundary_star_labeler(layout, rule, cut):
    """Superselection labels of a gauge-sector cut: the A-side partial
    products of every Gauss star that straddles the cut, packed into one
    integer per A configuration.

    Works for the diagonal Z2 star rules; ``cut`` lists the A-side slots.
    """
    cut = sorted(cut)
    apos = {s: i for i, s in enumerate(cut)}
    offsets = np.cumsum([0] + [layout.slot_width(s) for s in cut[:-1]])
    straddling = []
    nc = rule.n_constraints(layout)
    for c in range(nc):
        slots = _constraint_slots(layout, rule, c)
        ina = [s for s in slots if s in apos]
        if 0 < len(ina) < len(slots):
            straddling.append(ina)

    def labeler(a_idx):
        a_idx = np.asarray(a_idx, dtype=np.int64)
        out = np.zeros(len(a_idx), dtype=np.int64)
        for bit, ina in enumerate(straddling):
            par = np.zeros(len(a_idx), dtype=np.int64)
            for s in ina:
                par ^= (a_idx >> int(offsets[cut.index(s)])) & 1
            out |= par << bit
        return out

    return labeler


def _constraint_slots(layout, rule, c):
    from .basis import GaussZ2Plaquette2D, GaussZ2Matter
    if isinstance(rule, GaussZ2Plaquette2D):
        ex, _ = layout.extents
        y, x = divmod(c, ex)
        return rule.star_slots(layout, x, y)
    if isinstance(rule, GaussZ2Matter):
        L = layout.n_matter
        slots = [c]
        if layout.boundary == "periodic":
            slots += [layout.link_slot((c - 1) % L), layout.link_slot(c)]
        else:
            if c > 0:
                slots.append(layout.link_slot(c - 1))
            if c < L - 1:
                slots.append(layout.link_slot(c))
        return slots
    raise ValueError(f"no star structure known for rule {rule.name!r}")


# ----------------------------------------------------------------------
# spectral statistics
# ----------------------------------------------------------------------

@dataclass
class GapRatioResult:
    ratios: np.ndarray
    mean: float
    dropped_pairs: int


def gap_ratios(levels, zero_tol=0.0):
    """Consecutive-gap ratios r = min(d_i, d_{i-1}) / max(d_i, d_{i-1}).

    Levels must be sorted ascending (checked); at least 3 are required.
    Exact degeneracies leave zero spacings for which the ratio is undefined;
    those spacings are dropped pairwise and the count is reported.
    """
    levels = np.asarray(levels, dtype=float)
    if len(levels) < 3:
        raise ValueError("need at least 3 levels for a gap ratio")
    if (np.diff(levels) < -1e-12 * max(1.0, np.abs(levels).max())).any():
        raise ValueError("levels must be ascending")
    d = np.diff(levels)
    zero = d <= zero_tol
    dropped = int(zero.sum())
    d = d[~zero]
    if len(d) < 2:
        return GapRatioResult(np.empty(0), float("nan"), dropped)
    r = np.minimum(d[1:], d[:-1]) / np.maximum(d[1:], d[:-1])
    return GapRatioResult(r, float(r.mean()), dropped)


def esff(spectra, phi_grid):
    """Ensemble-averaged spectral form factor of entanglement spectra:

        F(phi) = < |sum_l exp(i phi xi_l)|^2 / R^2 >

    where R is the number of levels of each spectrum (its rank).  F(0) = 1.
    """
    if not len(spectra):
        raise ValueError("empty ensemble")
    phi = np.asarray(phi_grid, dtype=float)
    out = np.zeros(len(phi))
    for xi in spectra:
        xi = np.asarray(xi, dtype=float)
        z = np.exp(1j * np.outer(phi, xi)).sum(axis=1)
        out += (np.abs(z) ** 2) / len(xi) ** 2
    return out / len(spectra)


def eth_statistics(h, a, bulk_fraction=0.5, n_omega_bins=40, guard=20000):
    """Matrix elements of ``a`` in the eigenbasis of ``h``.

    Returns a dict with the eigenenergies, the diagonal curve, the
    eigenstate-to-eigenstate diagonal fluctuation inside the central bulk
    window, and binned off-diagonal |A_nm|^2 against omega = E_n - E_m
    (off-diagonal elements average to zero; their variance carries the
    structure).
    """
    if h.dim > guard:
        raise ValueError(f"full diagonalization refused at dim={h.dim}")
    w, v = h.eigh()
    amat = v.conj().T @ a.tocsr().dot(v)
    diag = np.real(np.diag(amat))
    n = len(w)
    lo = int(n * (0.5 - bulk_fraction / 2))
    hi = max(int(n * (0.5 + bulk_fraction / 2)), lo + 2)
    fluct = float(np.abs(np.diff(diag[lo:hi])).mean())
    iu = np.triu_indices(n, k=1)
    om = np.abs(w[iu[0]] - w[iu[1]])
    off = amat[iu]
    bins = np.linspace(0, om.max() + 1e-12, n_omega_bins + 1)
    which = np.digitize(om, bins) - 1
    var = np.zeros(n_omega_bins)
    mean = np.zeros(n_omega_bins, dtype=complex)
    for b in range(n_omega_bins):
        sel = which == b
        if sel.any():
            var[b] = float(np.mean(np.abs(off[sel]) ** 2))
            mean[b] = off[sel].mean()
    return {
        "energies": w, "diagonal": diag, "bulk_diag_fluctuation": fluct,
        "omega_bins": 0.5 * (bins[1:] + bins[:-1]), "offdiag_sq": var,
        "offdiag_mean": mean, "offdiag_mean_abs": float(np.abs(off.mean())),
    }


def level_spacing(spectrum, unfold_degree=7, n_bins=40):
    """Unfolded nearest-neighbor spacing histogram plus the unfolding-free
    mean gap ratio.

    The caller must pass a single symmetry block; mixed symmetry sectors are
    flagged heuristically (an excess of near-degenerate ratios) in the
    ``warning`` field.
    """
    e = np.sort(np.asarray(spectrum, dtype=float))
    n = len(e)
    if n < 10:
        raise ValueError("need at least 10 levels")
    stair = np.arange(1, n + 1, dtype=float)
    coef = np.polyfit(e, stair, unfold_degree)
    unfolded = np.polyval(coef, e)
    s = np.diff(unfolded)
    s = s[s > 0]
    s = s / s.mean()
    hist, edges = np.histogram(s, bins=np.linspace(0, 4, n_bins + 1), density=True)
    gr = gap_ratios(e)
    tiny = float((gr.ratios < 0.02).mean()) if len(gr.ratios) else 0.0
    warning = None
    if tiny > 0.1:
        warning = ("an excess of near-zero gap ratios suggests unresolved "
                   "symmetry sectors in the input spectrum")
    return {"s": 0.5 * (edges[1:] + edges[:-1]), "p": hist,
            "mean_r": gr.mean, "dropped_pairs": gr.dropped_pairs,
            "warning": warning}


# ----------------------------------------------------------------------
# return amplitudes
# ----------------------------------------------------------------------

@dataclass
class LoschmidtResult:
    times: np.ndarray
    amplitudes: np.ndarray        # (n_branches, n_times) complex
    rates: np.ndarray             # (n_branches, n_times)
    argmin_branch: np.ndarray     # (n_times,) int
    rate: np.ndarray              # min over branches
    kink_times: np.ndarray
    underflow: bool = False


def loschmidt(psi0_list, h, times, volume, refine=True):
    """Branch-resolved return amplitudes L_b(t) = <psi_b| e^{-iHt} |psi_b>
    and rate functions  lambda_b = -log|L_b| / volume.

    Kinks are grid points where the argmin branch switches; each is refined
    by one interval bisection.  Amplitudes falling under 1e-300 are clamped
    before the log (flagged in ``underflow``); the rate stays finite.
    """
    times = np.asarray(times, dtype=float)
    w, v = h.eigh()
    comps = [v.conj().T @ p.amplitudes for p in psi0_list]

    def amps_at(t):
        ph = np.exp(-1j * w * t)
        return np.array([np.vdot(c, ph * c) for c in comps])

    amps = np.stack([amps_at(t) for t in times], axis=1)
    mags = np.abs(amps)
    underflow = bool((mags < 1e-300).any())
    rates = -np.log(np.maximum(mags, 1e-300)) / volume
    argmin = np.argmin(rates, axis=0)
    kinks = []
    for i in np.flatnonzero(np.diff(argmin) != 0):
        lo, hi = times[i], times[i + 1]
        if refine:
            mid = 0.5 * (lo + hi)
            rm = -np.log(np.maximum(np.abs(amps_at(mid)), 1e-300)) / volume
            if np.argmin(rm) == argmin[i]:
                lo = mid
            else:
                hi = mid
        kinks.append(0.5 * (lo + hi))
    return LoschmidtResult(times, amps, rates, argmin,
                           rates[argmin, np.arange(len(times))],
                           np.asarray(kinks), underflow)


def revival_scan(psi0, h, times, threshold=0.1, prop=None):
    """Fidelity |<psi0 | psi(t)>|^2 series plus the local maxima above the
    threshold, as a list of (time, height) pairs."""
    from .evolve import evolve, PropagatorSpec
    states = evolve(h, psi0, times, prop or PropagatorSpec())
    fid = np.array([abs(psi0.overlap(s)) ** 2 for s in states])
    peaks = []
    for i in range(1, len(fid) - 1):
        if fid[i] >= fid[i - 1] and fid[i] >= fid[i + 1] and fid[i] >= threshold:
            peaks.append((float(times[i]), float(fid[i])))
    return fid, peaks
