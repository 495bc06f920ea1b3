"""Heisenberg-picture solution by expansion into elementary processes.

The time-evolved annihilators are written as

    a1(t) = sum f_{MmR}(t) * P1(M, m, R),    a2(t) = sum g_{MmR}(t) * P2(M, m, R)

where each process ``P`` is a normally ordered monomial fixed by the created
energy ``M``, the number ``m`` of annihilated quanta and the order ``R``.
Substituting into

    da1/dt = 2 i gamma a1(t)^dag a2(t),    da2/dt = i conj(gamma) a1(t)^2

and matching monomials gives a closed bilinear system for the amplitudes.
Here the coupling terms are derived mechanically with the normal-ordering
product and afterwards checked against the closed-form index relations
(:func:`reference_term`) and the hierarchy selection rules
(:func:`hierarchy_violations`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .algebra import (
    DEFAULT_EXPONENT_CEILING,
    AlgebraError,
    Exponents,
    OperatorExpansion,
    SubspaceBasis,
    monomial_matrix,
    monomial_product,
)

SYSTEM_SCHEMA_VERSION = 1


class GeneratorError(RuntimeError):
    """The derived amplitude system is inconsistent (indicates an index bug)."""


class CoverageError(ValueError):
    """An amplitude solution does not cover what a subspace or cut requires."""


class IntegrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# process indices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class ProcessIndex:
    osc: int
    M: int
    m: int
    R: int

    def __post_init__(self):
        if self.osc not in (1, 2):
            raise ValueError(f"oscillator must be 1 or 2, got {self.osc}")
        if min(self.exponents) < 0:
            raise GeneratorError(f"process {self.label} has negative exponents {self.exponents}")

    @property
    def exponents(self) -> Exponents:
        M, m, R = self.M, self.m, self.R
        return (2 * R - M - 2 * m, M + m - R, 2 * m - M - self.osc, M - m + self.osc)

    @property
    def label(self) -> str:
        return f"{'fg'[self.osc - 1]}{self.M}{self.m}{self.R}" if max(self.M, self.m, self.R) < 10 \
            else f"{'fg'[self.osc - 1]}[{self.M},{self.m},{self.R}]"

    @classmethod
    def from_exponents(cls, osc: int, exps: Exponents) -> ProcessIndex:
        i, j, k, l = exps
        if 2 * l + k - 2 * j - i != osc:
            raise GeneratorError(f"monomial {exps} does not lower the energy by {osc}")
        return cls(osc, i + 2 * j, k + l, i + j + k + l)

    def __str__(self) -> str:
        return self.label


def m_range(osc: int, M: int) -> range:
    if osc == 1:
        return range(M // 2 + 1, M + 2)
    return range((M + 1) // 2 + 1, M + 3)


def R_range(M: int, m: int) -> range:
    return range((M + 1) // 2 + m, M + m + 1)


def enumerate_processes(M_max_f: int, M_max_g: int) -> list[ProcessIndex]:
    """All f-processes with ``M <= M_max_f`` then all g-processes with ``M <= M_max_g``."""
    if M_max_f < 0 or M_max_g < -1:
        raise ValueError(f"need M_max_f >= 0 and M_max_g >= -1, got {M_max_f}, {M_max_g}")
    out = []
    for osc, top in ((1, M_max_f), (2, M_max_g)):
        for M in range(top + 1):
            for m in m_range(osc, M):
                for R in R_range(M, m):
                    out.append(ProcessIndex(osc, M, m, R))
    return out


# ---------------------------------------------------------------------------
# amplitude system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingTerm:
    """``constant * s1' * s2`` where ``s1'`` is conjugated for f-targets."""

    source1: ProcessIndex
    source2: ProcessIndex
    weight: int
    constant: complex


@dataclass(frozen=True)
class AmplitudeSystem:
    M_max: int
    gamma: complex
    index_table: tuple[ProcessIndex, ...]
    coupling_terms: dict[ProcessIndex, tuple[CouplingTerm, ...]] = field(repr=False)

    @cached_property
    def position(self) -> dict[ProcessIndex, int]:
        return {p: i for i, p in enumerate(self.index_table)}

    @property
    def size(self) -> int:
        return len(self.index_table)

    @property
    def initial_values(self) -> np.ndarray:
        y = np.zeros(self.size, dtype=complex)
        for p in (ProcessIndex(1, 0, 1, 1), ProcessIndex(2, 0, 1, 1)):
            if p in self.position:
                y[self.position[p]] = 1.0
        return y

    def processes(self, osc: int, M_cut: int | None = None) -> list[ProcessIndex]:
        return [p for p in self.index_table
                if p.osc == osc and (M_cut is None or p.M <= M_cut)]

    @property
    def max_M(self) -> dict[int, int]:
        """Highest ``M`` covered per oscillator (-1 when none)."""
        return {osc: max((p.M for p in self.index_table if p.osc == osc), default=-1)
                for osc in (1, 2)}

    @cached_property
    def _arrays(self):
        tgt, s1, s2, const, conj = [], [], [], [], []
        pos = self.position
        for target, terms in self.coupling_terms.items():
            for term in terms:
                tgt.append(pos[target])
                s1.append(pos[term.source1])
                s2.append(pos[term.source2])
                const.append(term.constant)
                conj.append(target.osc == 1)
        return (np.array(tgt, dtype=int), np.array(s1, dtype=int), np.array(s2, dtype=int),
                np.array(const, dtype=complex), np.array(conj, dtype=bool))

    def rhs(self, y: np.ndarray) -> np.ndarray:
        tgt, s1, s2, const, conj = self._arrays
        if tgt.size == 0:
            return np.zeros_like(y, dtype=complex)
        first = np.where(conj, np.conj(y[s1]), y[s1])
        contrib = const * first * y[s2]
        return (np.bincount(tgt, contrib.real, minlength=self.size)
                + 1j * np.bincount(tgt, contrib.imag, minlength=self.size))

    def to_document(self) -> dict:
        """Versioned plain-data form; key order is fixed."""
        return {
            "schema_version": SYSTEM_SCHEMA_VERSION,
            "M_max": self.M_max,
            "gamma": {"re": self.gamma.real, "im": self.gamma.imag},
            "amplitudes": [_index_doc(p) for p in self.index_table],
            "targets": [
                {
                    "target": _index_doc(p),
                    "terms": [
                        {
                            "source1": _index_doc(t.source1),
                            "conjugate_source1": p.osc == 1,
                            "source2": _index_doc(t.source2),
                            "weight": t.weight,
                            "constant": {"re": t.constant.real, "im": t.constant.imag},
                        }
                        for t in self.coupling_terms.get(p, ())
                    ],
                }
                for p in self.index_table
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1)

    @classmethod
    def from_document(cls, doc: dict) -> AmplitudeSystem:
        if doc.get("schema_version") != SYSTEM_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
        table = tuple(_index_from_doc(d) for d in doc["amplitudes"])
        terms = {}
        for entry in doc["targets"]:
            target = _index_from_doc(entry["target"])
            terms[target] = tuple(
                CouplingTerm(_index_from_doc(t["source1"]), _index_from_doc(t["source2"]),
                             int(t["weight"]), complex(t["constant"]["re"], t["constant"]["im"]))
                for t in entry["terms"])
        g = doc["gamma"]
        return cls(int(doc["M_max"]), complex(g["re"], g["im"]), table, terms)


def _index_doc(p: ProcessIndex) -> dict:
    return {"osc": p.osc, "M": p.M, "m": p.m, "R": p.R}


def _index_from_doc(d: dict) -> ProcessIndex:
    return ProcessIndex(int(d["osc"]), int(d["M"]), int(d["m"]), int(d["R"]))


def _adjoint(exps: Exponents) -> Exponents:
    i, j, k, l = exps
    return (k, l, i, j)


@lru_cache(maxsize=32)
def _derive_weights(M_max: int, ceiling: int) -> dict[ProcessIndex, tuple[tuple[ProcessIndex, ProcessIndex, int], ...]]:
    """Integer weights of every coupling term for targets up to ``M_max``.

    Sources are drawn from one level beyond the closed set so that a
    hierarchy breach would surface as a term with an untracked source.
    """
    targets = set(enumerate_processes(M_max, M_max - 1))
    f_src = enumerate_processes(M_max + 1, -1)
    g_src = [p for p in enumerate_processes(0, M_max) if p.osc == 2]
    acc: dict[ProcessIndex, dict[tuple[ProcessIndex, ProcessIndex], int]] = {t: {} for t in targets}

    def collect(osc, left, right, left_exps):
        for exps, w in monomial_product(left_exps, right.exponents, ceiling).items():
            target = ProcessIndex.from_exponents(osc, exps)
            if target in acc:
                key = (left, right)
                acc[target][key] = acc[target].get(key, 0) + w

    # a1(t)^dag a2(t): the f-source enters through its adjoint
    for f in f_src:
        for g in g_src:
            collect(1, f, g, _adjoint(f.exponents))
    # a1(t) a1(t): ordered pairs
    for f1 in f_src:
        for f2 in f_src:
            collect(2, f1, f2, f1.exponents)

    return {t: tuple((s1, s2, w) for (s1, s2), w in sorted(acc[t].items()) if w)
            for t in sorted(targets)}


def generate_system(M_max: int, gamma: complex,
                    ceiling: int = DEFAULT_EXPONENT_CEILING,
                    validate: bool = True) -> AmplitudeSystem:
    """Closed amplitude system: f with ``M <= M_max`` and g with ``M <= M_max - 1``.

    This is exactly what is needed for the operators on ``H_K`` with
    ``K = M_max + 1``.
    """
    if M_max < 0:
        raise ValueError(f"M_max must be >= 0, got {M_max}")
    gamma = complex(gamma)
    table = tuple(enumerate_processes(M_max, M_max - 1))
    weights = _derive_weights(M_max, ceiling)
    prefactor = {1: 2j * gamma, 2: 1j * gamma.conjugate()}
    terms = {
        t: tuple(CouplingTerm(s1, s2, w, prefactor[t.osc] * w) for s1, s2, w in weights[t])
        for t in table
    }
    system = AmplitudeSystem(M_max, gamma, table, terms)
    if validate:
        problems = hierarchy_violations(system) + reference_mismatches(system)
        if problems:
            raise GeneratorError("generated system failed validation:\n  " + "\n  ".join(problems))
    return system


# ---------------------------------------------------------------------------
# closed-form index relations and selection rules (validation only)
# ---------------------------------------------------------------------------


def _binom(n: int, k: int) -> int:
    return math.comb(n, k) if 0 <= k <= n else 0


def reference_term(target: ProcessIndex, source1: ProcessIndex,
                   M2: int, m2: int) -> tuple[ProcessIndex, int] | None:
    """Second source and weight predicted by the closed-form index relations.

    Given the target, the first source and ``(M2, m2)`` of the second source,
    the order ``R2`` and the reordering counts ``s1, s2`` are fixed; the
    weight is the binomial/factorial product.  Returns ``None`` when the
    product vanishes.
    """
    M, m, R = target.M, target.m, target.R
    M1, m1, R1 = source1.M, source1.m, source1.R
    if target.osc == 1:
        R2 = R + R1 - 2 * m - 2 * m1 + 2 * m2
        s1 = M - M1 - M2 - 2 * m - 2 * m1 + 2 * m2 + 2 * R1 - 1
        s2 = M1 + M2 - M - m - m1 + m2 + R - R2 + 1
        left = (2 * R1 - M1 - 2 * m1, M1 + m1 - R1)
        osc2 = 2
    else:
        R2 = R - R1 - 2 * m + 2 * m1 + 2 * m2
        s1 = M - M1 - M2 + 2 * m - 2 * m1 - 2 * m2 - 2 * R + 2 * R1 + 2 * R2
        s2 = M1 + M2 - M - m + m1 + m2 + R - R1 - R2
        left = (2 * m1 - M1 - 1, M1 - m1 + 1)
        osc2 = 1
    if s1 < 0 or s2 < 0 or R2 not in R_range(M2, m2) or m2 not in m_range(osc2, M2):
        return None
    source2 = ProcessIndex(osc2, M2, m2, R2)
    right = (2 * R2 - M2 - 2 * m2, M2 + m2 - R2)
    w = (_binom(left[0], s1) * _binom(right[0], s1) * _binom(left[1], s2)
         * _binom(right[1], s2) * math.factorial(s1) * math.factorial(s2))
    if w == 0:
        return None
    # the remaining monomial must be the target itself
    i1, j1, k1, l1 = _adjoint(source1.exponents) if target.osc == 1 else source1.exponents
    i2, j2, k2, l2 = source2.exponents
    if (i1 + i2 - s1, j1 + j2 - s2, k1 + k2 - s1, l1 + l2 - s2) != target.exponents:
        return None
    return source2, w


def reference_system_weights(system: AmplitudeSystem) -> dict[ProcessIndex, dict[tuple[ProcessIndex, ProcessIndex], int]]:
    """Coupling weights built only from the closed-form index relations."""
    out = {}
    f_all = enumerate_processes(system.M_max + 1, -1)
    for target in system.index_table:
        acc = {}
        for s1 in f_all:
            top2 = system.M_max + 1 if target.osc == 2 else system.M_max
            for M2 in range(top2 + 1):
                for m2 in m_range(2 if target.osc == 1 else 1, M2):
                    hit = reference_term(target, s1, M2, m2)
                    if hit is not None:
                        acc[(s1, hit[0])] = acc.get((s1, hit[0]), 0) + hit[1]
        out[target] = acc
    return out


def reference_mismatches(system: AmplitudeSystem) -> list[str]:
    problems = []
    ref = reference_system_weights(system)
    for target in system.index_table:
        derived = {(t.source1, t.source2): t.weight for t in system.coupling_terms.get(target, ())}
        if derived != ref[target]:
            problems.append(f"{target}: derived {_fmt(derived)} != closed form {_fmt(ref[target])}")
    return problems


def _fmt(d: dict) -> str:
    return "{" + ", ".join(f"{a}*{b}:{w}" for (a, b), w in sorted(d.items())) + "}"


def hierarchy_violations(system: AmplitudeSystem) -> list[str]:
    """Selection-rule breaches in the system, as human-readable strings.

    f-target at M: sources need M1 <= M-1 and M2 <= M-1.
    g-target at M: sources need M1 <= M and M2 <= M+1.
    Sources at the top of the window must carry the target's ``m``.
    Every source must itself belong to the system.
    """
    problems = []
    tracked = set(system.index_table)
    for target, terms in system.coupling_terms.items():
        M = target.M
        for t in terms:
            a, b = t.source1, t.source2
            if a not in tracked or b not in tracked:
                problems.append(f"{target} uses untracked source {a if a not in tracked else b}")
            if target.osc == 1:
                if a.osc != 1 or b.osc != 2:
                    problems.append(f"{target} has source types {a}, {b}")
                if a.M > M - 1 or b.M > M - 1:
                    problems.append(f"{target}: source M ({a.M}, {b.M}) exceeds M-1={M - 1}")
                if b.M == M - 1 and b.m != target.m:
                    problems.append(f"{target}: top-level g-source {b} has m != {target.m}")
            else:
                if a.osc != 1 or b.osc != 1:
                    problems.append(f"{target} has source types {a}, {b}")
                if a.M > M or b.M > M + 1:
                    problems.append(f"{target}: source M ({a.M}, {b.M}) exceeds ({M}, {M + 1})")
                for s in (a, b):
                    if s.M == M + 1 and s.m != target.m:
                        problems.append(f"{target}: top-level f-source {s} has m != {target.m}")
    return problems


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmplitudeSolution:
    system: AmplitudeSystem
    time_grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    t_end: float = 0.0
    _dense: object = field(default=None, repr=False, compare=False)

    def __call__(self, t: float | np.ndarray) -> np.ndarray:
        """Amplitude vector(s) at ``t``; shape ``(size,)`` or ``(size, len(t))``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.t_end * (1 + 1e-12) + 1e-300):
            raise CoverageError(f"time {t} outside integrated range [0, {self.t_end}]")
        if self._dense is None:
            y0 = self.values[:, 0]
            return y0 if t_arr.ndim == 0 else np.repeat(y0[:, None], t_arr.size, axis=1)
        out = self._dense(t_arr)
        # pin the initial condition exactly
        if t_arr.ndim == 0:
            return self.values[:, 0].copy() if t_arr == 0 else out
        out[:, t_arr == 0] = self.values[:, [0]]
        return out

    def amplitude(self, p: ProcessIndex, t: float | np.ndarray):
        return self(t)[self.system.position[p]]


def integrate_amplitudes(system: AmplitudeSystem, t_end: float,
                         rtol: float = 1e-10, atol: float = 1e-12,
                         max_step: float | None = None) -> AmplitudeSolution:
    """Co-integrate all amplitudes with DOP853 and keep the dense interpolant.

    The default maximum step is ``0.01 / |gamma|``.  For ``gamma == 0`` the
    amplitudes stay at their initial values.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    y0 = system.initial_values
    if system.gamma == 0 or t_end == 0:
        return AmplitudeSolution(system, np.array([0.0]), y0[:, None], float(t_end))
    if max_step is None:
        max_step = 0.01 / abs(system.gamma)
    sol = solve_ivp(lambda t, y: system.rhs(y), (0.0, float(t_end)), y0, method="DOP853",
                    rtol=rtol, atol=atol, max_step=max_step, dense_output=True)
    if sol.status != 0:
        raise IntegrationError(f"amplitude integration stopped at t={sol.t[-1]:.6g}: {sol.message}")
    return AmplitudeSolution(system, sol.t, sol.y, float(t_end), sol.sol)


def solve_amplitudes(K: int, gamma: complex, t_end: float, **kwargs) -> AmplitudeSolution:
    """Generate and integrate the system that covers ``H_K``."""
    return integrate_amplitudes(generate_system(max(K - 1, 0), gamma), t_end, **kwargs)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def required_M(osc: int, K: int) -> int:
    """Highest process ``M`` with a nonzero matrix on ``H_K``."""
    return K - osc


def _check_coverage(sol: AmplitudeSolution, osc: int, M_need: int):
    have = sol.system.max_M[osc]
    if M_need > have:
        raise CoverageError(
            f"oscillator {osc} needs processes up to M={M_need}, solution covers M<={have} "
            f"(generate with M_max >= {M_need + osc - 1})")


@lru_cache(maxsize=64)
def _process_stack(processes: tuple[ProcessIndex, ...], basis: SubspaceBasis) -> np.ndarray:
    if not processes:
        return np.zeros((0, basis.dim, basis.dim), dtype=complex)
    stack = np.stack([monomial_matrix(p.exponents, basis) for p in processes])
    stack.setflags(write=False)
    return stack


def realize_operator(osc: int, sol: AmplitudeSolution, t: float,
                     basis: SubspaceBasis) -> np.ndarray:
    """Matrix of ``a_osc(t)`` on the basis."""
    if osc not in (1, 2):
        raise ValueError(f"oscillator must be 1 or 2, got {osc}")
    M_need = required_M(osc, basis.K)
    _check_coverage(sol, osc, M_need)
    procs = tuple(sol.system.processes(osc, M_need))
    stack = _process_stack(procs, basis)
    if not procs:
        return np.zeros((basis.dim, basis.dim), dtype=complex)
    amps = sol(t)
    idx = [sol.system.position[p] for p in procs]
    return np.tensordot(amps[idx], stack, axes=1)


def realize_operators(osc: int, sol: AmplitudeSolution, times: Sequence[float],
                      basis: SubspaceBasis) -> np.ndarray:
    """``a_osc(t)`` for many times at once; shape ``(len(times), dim, dim)``."""
    M_need = required_M(osc, basis.K)
    _check_coverage(sol, osc, M_need)
    procs = tuple(sol.system.processes(osc, M_need))
    times = np.asarray(times, dtype=float)
    if not procs:
        return np.zeros((times.size, basis.dim, basis.dim), dtype=complex)
    stack = _process_stack(procs, basis)
    idx = [sol.system.position[p] for p in procs]
    amps = sol(times)[idx]
    return np.einsum("pt,pij->tij", amps, stack)


def truncated_expansion(osc: int, sol: AmplitudeSolution, t: float, M_cut: int) -> OperatorExpansion:
    """``a_osc(t)`` as an operator expansion keeping processes with ``M <= M_cut``."""
    _check_coverage(sol, osc, M_cut)
    amps = sol(t)
    return OperatorExpansion(
        {p.exponents: amps[sol.system.position[p]] for p in sol.system.processes(osc, M_cut)},
        prune=0.0)


def process_expansion(processes: Iterable[ProcessIndex], amplitudes: Iterable[complex]) -> OperatorExpansion:
    return OperatorExpansion({p.exponents: a for p, a in zip(processes, amplitudes)}, prune=0.0)


__all__ = [
    "AlgebraError", "AmplitudeSolution", "AmplitudeSystem", "CouplingTerm", "CoverageError",
    "GeneratorError", "IntegrationError", "ProcessIndex", "SYSTEM_SCHEMA_VERSION",
    "enumerate_processes", "generate_system", "hierarchy_violations", "integrate_amplitudes",
    "realize_operator", "realize_operators", "reference_mismatches", "reference_term",
    "required_M", "solve_amplitudes", "truncated_expansion",
]
