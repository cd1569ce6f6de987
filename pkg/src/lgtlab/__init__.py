"""lgtlab: a desk-scale exact-dynamics laboratory for lattice gauge theories.

Bit-packed constrained bases, sparse Hamiltonians for a zoo of gauge models
and their dual formulations, Krylov/exact/Trotter propagators, a quadratic
fast path for charge-sector ensembles and topological-angle quenches, the
standard nonequilibrium diagnostics, and composed experiment protocols.
"""

__version__ = "0.1.0"

from . import basis, evolve, freefermion, models, observables, operators, protocols

__all__ = ["basis", "evolve", "freefermion", "models", "observables",
           "operators", "protocols", "__version__"]
