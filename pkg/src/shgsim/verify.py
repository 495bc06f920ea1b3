"""Oracles and cross-picture checks.

Each check returns a :class:`CheckReport`; :func:`run_battery` runs the whole
set for one ``(K, gamma, t_max)`` and returns the reports sorted by name.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import algebra as alg
from .algebra import OperatorExpansion, SubspaceBasis, enumerate_basis, operator_matrix
from .heisenberg import (
    AmplitudeSolution,
    AmplitudeSystem,
    ProcessIndex,
    generate_system,
    hierarchy_violations,
    integrate_amplitudes,
    realize_operators,
    truncated_expansion,
)
from .schrodinger import StateVector, build_propagator, evolve

STRUCTURAL_TOL = 1e-10
CLOSED_FORM_TOL = 1e-8
CROSS_PICTURE_TOL = 1e-6
TAYLOR_TOL = 1e-9


@dataclass(frozen=True)
class CheckReport:
    name: str
    max_abs_error: float
    tolerance: float
    context: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_error <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_abs_error": float(self.max_abs_error),
            "tolerance": self.tolerance,
            "passed": self.passed,
            "context": self.context,
        }

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_abs_error={self.max_abs_error:.3e}  tol={self.tolerance:.0e}"


def _ctx(K, gamma, t_grid, **extra) -> dict:
    t_grid = np.asarray(t_grid, dtype=float)
    ctx = {
        "K": K,
        "gamma": {"re": complex(gamma).real, "im": complex(gamma).imag},
        "t_grid": {"start": float(t_grid[0]), "stop": float(t_grid[-1]), "n": int(t_grid.size)},
    }
    ctx.update(extra)
    return ctx


# ---------------------------------------------------------------------------
# closed forms for the H_2 problem
# ---------------------------------------------------------------------------


def closed_form_amplitudes(gamma: complex, t) -> dict[ProcessIndex, np.ndarray]:
    """Analytic f011, f112, f123, g011, g022."""
    gamma = complex(gamma)
    t = np.asarray(t, dtype=float)
    if gamma == 0:
        zero = np.zeros_like(t, dtype=complex)
        return {ProcessIndex(1, 0, 1, 1): zero + 1, ProcessIndex(1, 1, 1, 2): zero,
                ProcessIndex(2, 0, 1, 1): zero + 1, ProcessIndex(1, 1, 2, 3): zero,
                ProcessIndex(2, 0, 2, 2): zero}
    a = abs(gamma)
    w = math.sqrt(2) * a
    s, c = np.sin(w * t), np.cos(w * t)
    return {
        ProcessIndex(1, 0, 1, 1): np.ones_like(t, dtype=complex),
        ProcessIndex(1, 1, 1, 2): 1j * math.sqrt(2) * gamma / a * s,
        ProcessIndex(2, 0, 1, 1): c + 0j,
        ProcessIndex(1, 1, 2, 3): c - 1 + 0j,
        ProcessIndex(2, 0, 2, 2): 1j * gamma.conjugate() / (math.sqrt(2) * a) * s,
    }


# ---------------------------------------------------------------------------
# Taylor oracle
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def taylor_derivatives(osc: int, order: int, gamma: complex) -> tuple[OperatorExpansion, ...]:
    """``d^k a_osc / dt^k`` at ``t = 0`` for ``k = 0..order`` via ``dX/dt = i[H, X]``."""
    H = alg.shg_hamiltonian(gamma)
    X = alg.annihilator(osc)
    out = [X]
    for _ in range(order):
        X = 1j * alg.commutator(H, X)
        out.append(X)
    return tuple(out)


def taylor_oracle(osc: int, order: int, t: float, basis: SubspaceBasis,
                  gamma: complex) -> np.ndarray:
    if order < 0 or order > 12:
        raise ValueError(f"order must be in 0..12, got {order}")
    if abs(gamma) * abs(t) > 0.5:
        raise ValueError(f"|gamma| t = {abs(gamma) * abs(t):.3g} exceeds the 0.5 radius guard")
    mat = np.zeros((basis.dim, basis.dim), dtype=complex)
    for k, X in enumerate(taylor_derivatives(osc, order, complex(gamma))):
        mat += t ** k / math.factorial(k) * operator_matrix(X, basis)
    return mat


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def schrodinger_operator(prop, osc: int, t: float) -> np.ndarray:
    """``U(t)^dag a_osc U(t)`` on ``H_K``; column ``c`` holds ``a_osc`` evaluated on evolved state ``c``."""
    U = prop.unitary(t)
    A = operator_matrix(alg.annihilator(osc), prop.basis)
    return U.conj().T @ A @ U


def heisenberg_solution(K: int, gamma: complex, t_end: float,
                        system_hook: Callable[[AmplitudeSystem], AmplitudeSystem] | None = None,
                        rtol: float = 1e-10, atol: float = 1e-12) -> AmplitudeSolution:
    system = generate_system(max(K - 1, 1), gamma)
    if system_hook is not None:
        system = system_hook(system)
    return integrate_amplitudes(system, t_end, rtol=rtol, atol=atol)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def cross_picture_check(K: int, gamma: complex, t_grid: Sequence[float],
                        n_states: int = 5, seed: int = 0,
                        solution: AmplitudeSolution | None = None) -> CheckReport:
    """Heisenberg-realised ``a_j(t)`` against ``U^dag a_j U`` from the eigen path.

    Compares full matrices on ``H_K`` and, for ``n_states`` random normalised
    state pairs, the elements ``<phi(t)| a_j |psi(t)>``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    basis = enumerate_basis(K)
    prop = build_propagator(K, gamma)
    sol = solution or heisenberg_solution(K, gamma, float(t_grid.max()))
    rng = np.random.default_rng(seed)
    pairs = [(StateVector.random(basis, rng), StateVector.random(basis, rng)) for _ in range(n_states)]
    worst = 0.0
    for osc in (1, 2):
        A = operator_matrix(alg.annihilator(osc), basis)
        heis = realize_operators(osc, sol, t_grid, basis)
        for t, Ht in zip(t_grid, heis):
            worst = max(worst, float(np.abs(Ht - schrodinger_operator(prop, osc, t)).max(initial=0)))
            for phi, psi in pairs:
                lhs = phi.components.conj() @ Ht @ psi.components
                rhs = evolve(prop, phi, t).components.conj() @ A @ evolve(prop, psi, t).components
                worst = max(worst, abs(lhs - rhs))
    return CheckReport("cross_picture", worst, CROSS_PICTURE_TOL,
                       _ctx(K, gamma, t_grid, seed=seed, n_states=n_states))


def grading_violation(mat: np.ndarray, basis: SubspaceBasis, shift: int) -> float:
    """Largest entry of ``mat`` outside the ``H^(N) -> H^(N - shift)`` pattern."""
    labels = basis.block_labels
    allowed = labels[:, None] == labels[None, :] - shift
    return float(np.abs(np.where(allowed, 0, mat)).max(initial=0))


def conservation_check(K: int, gamma: complex, t_grid: Sequence[float],
                       n_states: int = 5, seed: int = 0,
                       solution: AmplitudeSolution | None = None) -> CheckReport:
    """<N> drift along Schrodinger evolution plus the exact grading of a_j(t).

    Grading violations must be exactly zero; any nonzero entry fails the
    check regardless of the drift tolerance.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    basis = enumerate_basis(K)
    prop = build_propagator(K, gamma)
    Nmat = operator_matrix(alg.integral_of_motion(), basis)
    rng = np.random.default_rng(seed)
    states = [StateVector.random(basis, rng) for _ in range(n_states)]
    drift = 0.0
    for psi in states:
        n0 = (psi.components.conj() @ Nmat @ psi.components).real
        for t in t_grid:
            c = evolve(prop, psi, t).components
            drift = max(drift, abs(c.conj() @ Nmat @ c - n0))
    sol = solution or heisenberg_solution(K, gamma, float(t_grid.max()))
    leak = 0.0
    for osc in (1, 2):
        for Ht in realize_operators(osc, sol, t_grid, basis):
            leak = max(leak, grading_violation(Ht, basis, osc))
    err = drift if leak == 0 else np.inf
    return CheckReport("conservation_grading", err, STRUCTURAL_TOL,
                       _ctx(K, gamma, t_grid, seed=seed, n_states=n_states,
                            drift=float(drift), grading_leak=float(leak)))


def commutator_deviation_check(gamma: complex, t_grid: Sequence[float],
                               solution: AmplitudeSolution | None = None) -> CheckReport:
    """``[a2(t), a2(t)^dag]`` of the M<=0 truncation vs ``1 + 2 sin^2 a1^dag a1``.

    Also requires ``[a1(t), a1(t)^dag]`` of the M<=1 truncation to differ from
    the identity wherever the sine is not small.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    sol = solution or integrate_amplitudes(generate_system(1, gamma), float(t_grid.max()))
    w = math.sqrt(2) * abs(gamma)
    worst = 0.0
    a1_min_dev = np.inf
    for t in t_grid:
        A2 = truncated_expansion(2, sol, t, 0)
        comm = alg.commutator(A2, A2.adjoint())
        expected = OperatorExpansion({(0, 0, 0, 0): 1.0, (1, 0, 1, 0): 2 * math.sin(w * t) ** 2})
        worst = max(worst, alg.max_coefficient_difference(comm, expected))
        if abs(math.sin(w * t)) > 1e-3:
            A1 = truncated_expansion(1, sol, t, 1)
            dev = alg.commutator(A1, A1.adjoint()) - OperatorExpansion.identity()
            a1_min_dev = min(a1_min_dev, max((abs(c) for _, c in dev), default=0.0))
    err = worst if a1_min_dev > CLOSED_FORM_TOL else np.inf
    return CheckReport("commutator_deviation", err, CLOSED_FORM_TOL,
                       _ctx(2, gamma, t_grid, a1_min_deviation=float(a1_min_dev)
                            if np.isfinite(a1_min_dev) else None))


def mean_occupation_check(gamma: complex, t_grid: Sequence[float],
                          solution: AmplitudeSolution | None = None) -> CheckReport:
    """Heisenberg-path ``<0,1| n_j(t) |0,1>`` against the closed forms."""
    t_grid = np.asarray(t_grid, dtype=float)
    sol = solution or integrate_amplitudes(generate_system(1, gamma), float(t_grid.max()))
    basis = enumerate_basis(2)
    col = basis.index((0, 1))
    w = math.sqrt(2) * abs(gamma)
    worst = 0.0
    for t in t_grid:
        A1 = truncated_expansion(1, sol, t, 1)
        A2 = truncated_expansion(2, sol, t, 0)
        n1 = alg.normal_order_product(A1.adjoint(), A1)
        n2 = alg.normal_order_product(A2.adjoint(), A2)
        s2 = math.sin(w * t) ** 2
        m1 = operator_matrix(n1, basis)[col, col]
        m2 = operator_matrix(n2, basis)[col, col]
        worst = max(worst, abs(m1 - 2 * s2), abs(m2 - (1 - s2)), abs(m1 + 2 * m2 - 2),
                    abs(n1.coefficient((0, 1, 0, 1)) - 2 * s2))
    return CheckReport("mean_occupation", worst, CLOSED_FORM_TOL, _ctx(2, gamma, t_grid))


def amplitude_closed_form_check(gamma: complex, t_grid: Sequence[float],
                                solution: AmplitudeSolution | None = None) -> CheckReport:
    t_grid = np.asarray(t_grid, dtype=float)
    sol = solution or integrate_amplitudes(generate_system(1, gamma), float(t_grid.max()))
    worst = 0.0
    for p, exact in closed_form_amplitudes(gamma, t_grid).items():
        worst = max(worst, float(np.abs(sol.amplitude(p, t_grid) - exact).max()))
    return CheckReport("amplitude_closed_form", worst, CLOSED_FORM_TOL, _ctx(2, gamma, t_grid))


def taylor_check(K: int, gamma: complex, order: int = 8, n_points: int = 11,
                 solution: AmplitudeSolution | None = None) -> CheckReport:
    """Order-``order`` Taylor oracle against both propagation paths for ``|gamma| t <= 0.1``."""
    if gamma == 0:
        t_grid = np.zeros(1)
    else:
        t_grid = np.linspace(0, 0.1 / abs(gamma), n_points)
    basis = enumerate_basis(K)
    prop = build_propagator(K, gamma)
    sol = solution or heisenberg_solution(K, gamma, float(t_grid.max()))
    worst = 0.0
    for osc in (1, 2):
        heis = realize_operators(osc, sol, t_grid, basis)
        for t, Ht in zip(t_grid, heis):
            T = taylor_oracle(osc, order, t, basis, gamma)
            worst = max(worst, float(np.abs(T - Ht).max(initial=0)),
                        float(np.abs(T - schrodinger_operator(prop, osc, t)).max(initial=0)))
    return CheckReport("taylor_oracle", worst, TAYLOR_TOL, _ctx(K, gamma, t_grid, order=order))


def generator_check(M_max: int, gamma: complex = 1.0) -> CheckReport:
    system = generate_system(M_max, gamma)
    n = len(hierarchy_violations(system))
    return CheckReport("generator_hierarchy", float(n), 0.0, {"M_max": M_max, "violations": n})


# ---------------------------------------------------------------------------
# battery
# ---------------------------------------------------------------------------


def run_battery(K: int, gamma: complex, t_max: float, samples: int = 51, seed: int = 0,
                system_hook: Callable[[AmplitudeSystem], AmplitudeSystem] | None = None,
                taylor_order: int = 8, workers: int = 1) -> list[CheckReport]:
    """All checks for one configuration, sorted by name.

    ``system_hook`` may replace the generated amplitude system before
    integration (fault injection in tests).  The order-8 Taylor comparison is
    run on ``H_min(K, 3)``: beyond that its truncation remainder at
    ``|gamma| t = 0.1`` exceeds the 1e-9 tier.
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    gamma = complex(gamma)
    t_grid = np.linspace(0.0, t_max, samples)
    big = heisenberg_solution(max(K, 2), gamma, t_max, system_hook)
    jobs = [
        lambda: cross_picture_check(K, gamma, t_grid, seed=seed, solution=big),
        lambda: conservation_check(K, gamma, t_grid, seed=seed, solution=big),
        lambda: commutator_deviation_check(gamma, t_grid, solution=big),
        lambda: mean_occupation_check(gamma, t_grid, solution=big),
        lambda: amplitude_closed_form_check(gamma, t_grid, solution=big),
        lambda: generator_check(max(K - 1, 1), gamma),
    ]
    if gamma != 0 and 0.1 / abs(gamma) <= t_max:
        jobs.append(lambda: taylor_check(min(K, 3), gamma, order=taylor_order, solution=big))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(lambda job: job(), jobs))
    else:
        reports = [job() for job in jobs]
    return sorted(reports, key=lambda r: r.name)
