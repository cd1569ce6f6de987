"""Command-line front end.

Subcommands:
  run         execute an experiment spec (JSON), write CSV + JSON + manifest
  verify      run the built-in cross-model oracle suites
  list-models print the model table
  basis-dump  enumerate a sector and dump it as JSON

Exit codes: 0 success, 2 spec-validation error, 3 numerical failure.
``--threads`` (or the LGTLAB_THREADS environment variable) caps the linear
algebra thread pool; results are independent of the thread count.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _configure_threads(n):
    if n is None:
        n = os.environ.get("LGTLAB_THREADS")
    if n is None:
        return None
    n = int(n)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass
    return n


def _write_manifest(path, spec_path, seed, wall, dim, outputs, threads):
    from . import __version__
    digest = hashlib.sha256(open(spec_path, "rb").read()).hexdigest()
    manifest = {
        "spec_path": os.path.abspath(spec_path),
        "spec_sha256": digest,
        "code_version": __version__,
        "seed": seed,
        "wall_seconds": wall,
        "basis_dimension": dim,
        "outputs": outputs,
        "threads": threads,
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def cmd_run(args):
    from .protocols import ExperimentSpec, SpecValidationError, run
    threads = _configure_threads(args.threads)
    try:
        with open(args.spec) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        bundled = _bundled_spec(args.spec)
        if bundled is None:
            print(f"error: spec file {args.spec!r} not found", file=sys.stderr)
            return EXIT_VALIDATION
        with open(bundled) as fh:
            doc = json.load(fh)
        args.spec = bundled
    except json.JSONDecodeError as err:
        print(f"error: spec is not valid JSON: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = ExperimentSpec.from_dict(doc)
    except SpecValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, os.path.splitext(os.path.basename(args.spec))[0])
    t0 = time.monotonic()
    try:
        frame = run(spec)
    except SpecValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, ValueError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    wall = time.monotonic() - t0
    csv_path, json_path = stem + ".csv", stem + ".json"
    frame.to_csv(csv_path)
    frame.to_json(json_path)
    _write_manifest(stem + ".manifest.json", args.spec, spec.seed, wall,
                    frame.metadata.get("basis_dim"), [csv_path, json_path], threads)
    print(f"wrote {csv_path} ({len(frame.times)} rows, "
          f"dim {frame.metadata.get('basis_dim')}, {wall:.1f} s)")
    return EXIT_OK


def _bundled_spec(name):
    base = os.path.join(os.path.dirname(__file__), "specs")
    for cand in (name, name + ".json"):
        p = os.path.join(base, os.path.basename(cand))
        if os.path.exists(p):
            return p
    return None


def cmd_list_models(args):
    from .protocols import model_table
    rows = model_table()
    widths = [max(len(r[i]) for r in rows + [("model", "parameters", "reference")])
              for i in range(3)]
    header = ("model".ljust(widths[0]), "parameters".ljust(widths[1]), "reference")
    print("  ".join(header))
    print("-" * (sum(widths) + 4))
    for r in rows:
        print(f"{r[0].ljust(widths[0])}  {r[1].ljust(widths[1])}  {r[2]}")
    return EXIT_OK


def cmd_basis_dump(args):
    from .protocols import (MODEL_REGISTRY, SpecValidationError, default_basis)
    threads = _configure_threads(args.threads)
    try:
        doc = json.loads(args.params) if args.params else {}
        if args.kind not in MODEL_REGISTRY:
            raise SpecValidationError(f"model.kind: unknown model {args.kind!r}")
        params = MODEL_REGISTRY[args.kind].make_params(doc)
        sector = json.loads(args.sector) if args.sector else None
        basis = default_basis(args.kind, params, sector)
    except SpecValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except json.JSONDecodeError as err:
        print(f"validation error: params/sector must be JSON: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    basis.dump(args.output)
    print(f"wrote {args.output} (dimension {basis.dim})")
    return EXIT_OK


# ----------------------------------------------------------------------
# verification suites
# ----------------------------------------------------------------------

def _verify_duality():
    import numpy as np
    from . import models as M
    from .protocols import default_basis
    report = []
    for L in (4, 6, 8):
        qp = M.QLMParams(L=L, spin=0.5, kappa_tilde=1.0, m=0.37, chi=0.0)
        basis = default_basis("qlm", qp)
        eq = np.linalg.eigvalsh(M.build_qlm(qp, basis).dense())
        pxp, off = M.pxp_equivalent_of_qlm(qp)
        pb = default_basis("pxp", pxp)
        ep = np.linalg.eigvalsh(M.build_pxp(pxp, pb).dense()) + off
        dev = float(np.abs(np.sort(eq) - np.sort(ep)).max())
        report.append((f"qlm<->blockaded L={L}", dev, dev < 1e-10))
    for n_matter in (5, 7):
        vfun = lambda r: 0.9 / r ** 2
        hg, _ = M.z2_gauged_sector_hamiltonian(n_matter, 0.7, 1.3, 0.9, vfun)
        pars, off = M.ising_dual_of_z2_gauged(n_matter, 0.7, 1.3, 0.9, vfun)
        basis = default_basis("ising_lr", pars)
        ei = np.linalg.eigvalsh(M.build_ising_lr(pars, basis).dense()) + off
        eg = np.linalg.eigvalsh(hg.dense())
        dev = float(np.abs(np.sort(eg) - np.sort(ei)).max())
        report.append((f"z2-gauge<->ising L={n_matter}", dev, dev < 1e-10))
    return report


def _verify_dfl_oracle():
    import numpy as np
    from .protocols import dfl_experiment
    L, J, h = 6, 1.0, 0.7
    ts = np.linspace(0.0, 10.0, 11)
    mb = dfl_experiment(L, J, h, "many_body", ts)
    ff = dfl_experiment(L, J, h, "free_fermion_ensemble", ts)
    dev = max(float(np.abs(mb.columns[f"n_{i}"] - ff.columns[f"n_{i}"]).max())
              for i in range(L))
    return [("dfl many-body vs sector ensemble L=6", dev, dev < 1e-8)]


def _verify_trotter():
    import numpy as np
    from . import models as M
    from .protocols import default_basis
    from .evolve import StateVector, PropagatorSpec, evolve
    params = M.IsingLRParams(N=8, g=0.9, h=0.4, coupling=("nearest", 1.0))
    basis = default_basis("ising_lr", params)
    h = M.build_ising_lr(params, basis)
    rng = np.random.default_rng(5)
    psi0 = StateVector.from_amplitudes(
        basis, rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim))
    t = 1.0
    exact = evolve(h, psi0, [t], PropagatorSpec(method="exact"))[0]
    report = []
    for order, target in ((1, 1.0), (2, 2.0)):
        dts = np.array([0.2, 0.1, 0.05, 0.025])
        errs = []
        for dt in dts:
            tr = evolve(h, psi0, [t], PropagatorSpec(method="trotter", order=order, dt=dt))[0]
            errs.append(np.linalg.norm(tr.amplitudes - exact.amplitudes))
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        ok = abs(slope - target) < 0.1 * target
        report.append((f"trotter order {order} slope", float(slope), ok))
    return report


def _verify_gapratio_refs():
    import numpy as np
    from .observables import gap_ratios
    rng = np.random.default_rng(11)
    report = []
    s = rng.exponential(size=100_000)
    levels = np.cumsum(s)
    r = gap_ratios(levels)
    report.append(("poisson mean r", r.mean, abs(r.mean - 0.386) < 0.01))
    for name, target in (("goe", 0.531), ("gue", 0.600)):
        vals = []
        for _ in range(1000):
            n = 200
            if name == "goe":
                a = rng.normal(size=(n, n))
                mat = (a + a.T) / 2
            else:
                a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
                mat = (a + a.conj().T) / 2
            w = np.linalg.eigvalsh(mat)
            rr = gap_ratios(w[n // 4: 3 * n // 4])
            vals.append(rr.ratios)
        mean = float(np.mean(np.concatenate(vals)))
        report.append((f"{name} mean r", mean, abs(mean - target) < 0.01))
    return report


SUITES = {
    "duality": _verify_duality,
    "dfl_oracle": _verify_dfl_oracle,
    "trotter": _verify_trotter,
    "gapratio_refs": _verify_gapratio_refs,
}


def cmd_verify(args):
    _configure_threads(args.threads)
    names = list(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        for check, value, ok in SUITES[name]():
            status = "pass" if ok else "FAIL"
            print(f"[{status}] {name}: {check} = {value:.3e}"
                  if isinstance(value, float) else f"[{status}] {name}: {check}")
            failed += 0 if ok else 1
    if failed:
        print(f"{failed} checks failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lgtlab",
        description="exact-dynamics laboratory for lattice gauge theories")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment spec")
    p_run.add_argument("spec", help="spec JSON path or bundled spec name")
    p_run.add_argument("--out", default="runs", help="output directory")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="run a built-in oracle suite")
    p_ver.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p_ver.add_argument("--threads", type=int, default=None)
    p_ver.set_defaults(func=cmd_verify)

    p_list = sub.add_parser("list-models", help="print the model table")
    p_list.set_defaults(func=cmd_list_models)

    p_dump = sub.add_parser("basis-dump", help="enumerate a sector to JSON")
    p_dump.add_argument("kind", help="model name")
    p_dump.add_argument("--params", default=None, help="model parameters (JSON)")
    p_dump.add_argument("--sector", default=None, help="sector overrides (JSON)")
    p_dump.add_argument("--output", default="basis.json")
    p_dump.add_argument("--threads", type=int, default=None)
    p_dump.set_defaults(func=cmd_basis_dump)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
