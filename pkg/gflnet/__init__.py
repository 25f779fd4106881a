from .version import __version__
from .core import (
    ObjCore,
    GflnetError,
    ModelError,
    ConfigError,
    NumericalError,
    NonConvergenceError,
)
from .netgraph import Line, NetworkModel, radial_chain, assemble_admittance, kron_reduce
from .inverter import RawInverterGains, TimeConstants, derive_time_constants, epsilon
from .powerflow import PowerFlowProblem, PowerFlowSolution, solve_fixed_point, build_equilibrium
from .dynamics import DynamicsSystem, rhs, simulate
from .linstab import StabilityCertificate, certify
from .spl import RadialFamilySpec, compute_spl, spl_table
