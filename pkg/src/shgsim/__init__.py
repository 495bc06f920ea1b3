"""Two coupled oscillators with second-harmonic interaction, in both pictures."""

from .algebra import (
    BasisState,
    NormalMonomial,
    OperatorExpansion,
    SubspaceBasis,
    commutator,
    enumerate_basis,
    hamiltonian_block,
    monomial_matrix,
    normal_order_product,
    operator_matrix,
)
from .heisenberg import (
    AmplitudeSolution,
    AmplitudeSystem,
    ProcessIndex,
    enumerate_processes,
    generate_system,
    integrate_amplitudes,
    realize_operator,
    realize_operators,
    solve_amplitudes,
    truncated_expansion,
)
from .schrodinger import Propagator, StateVector, build_propagator, component_rhs, evolve, expectation

__version__ = "0.1.0"
