"""Two-mode bosonic operator algebra.

Operators are kept as finite sums of normally ordered monomials
``(a1^dag)^i (a2^dag)^j a1^k a2^l`` keyed by the exponent tuple ``(i, j, k, l)``.
Products are brought back to normal order with exact integer combinatorics;
only the outer coefficients are floating point.

States are labelled by the eigenvalue ``N`` of ``n1 + 2 n2`` and the number
``l`` of quanta in mode 2, i.e. the Fock state ``|N - 2l, l>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Union

import numpy as np

Exponents = tuple[int, int, int, int]

DEFAULT_PRUNE = 1e-14
DEFAULT_EXPONENT_CEILING = 64


class AlgebraError(ValueError):
    """Raised for invalid operator-algebra input (e.g. exponent ceiling hit)."""


class SubspaceLeakError(AlgebraError):
    """An operator maps part of the subspace outside of it."""


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class BasisState:
    N: int
    l: int

    def __post_init__(self):
        if self.N < 0 or self.l < 0 or 2 * self.l > self.N:
            raise AlgebraError(f"invalid basis label (N={self.N}, l={self.l})")

    @property
    def n1(self) -> int:
        return self.N - 2 * self.l

    @property
    def n2(self) -> int:
        return self.l

    @property
    def fock(self) -> tuple[int, int]:
        return (self.N - 2 * self.l, self.l)

    def __str__(self) -> str:
        return f"|{self.n1},{self.n2}>"


@dataclass(frozen=True)
class SubspaceBasis:
    """All states ``|N-2l, l>`` with ``N <= K``, ordered by ``(N, l)``."""

    K: int
    states: tuple[BasisState, ...] = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[BasisState]:
        return iter(self.states)

    @cached_property
    def _fock_index(self) -> dict[tuple[int, int], int]:
        return {s.fock: i for i, s in enumerate(self.states)}

    def index(self, state: BasisState | tuple[int, int]) -> int:
        """Position of a state; tuples are read as Fock labels ``(n1, n2)``."""
        key = state.fock if isinstance(state, BasisState) else tuple(state)
        try:
            return self._fock_index[key]
        except KeyError:
            raise AlgebraError(f"state {key} not in basis with K={self.K}") from None

    def fock_index(self, n1: int, n2: int) -> int | None:
        return self._fock_index.get((n1, n2))

    def block_slice(self, N: int) -> slice:
        """Slice of the canonical order occupied by the invariant block ``N``."""
        if not 0 <= N <= self.K:
            raise AlgebraError(f"block N={N} outside 0..{self.K}")
        start = sum(n // 2 + 1 for n in range(N))
        return slice(start, start + N // 2 + 1)

    @cached_property
    def block_labels(self) -> np.ndarray:
        """``N`` of every basis vector, in canonical order."""
        return np.array([s.N for s in self.states], dtype=int)


def enumerate_basis(K: int) -> SubspaceBasis:
    if K < 0:
        raise AlgebraError(f"cutoff K must be >= 0, got {K}")
    states = tuple(BasisState(N, l) for N in range(K + 1) for l in range(N // 2 + 1))
    return SubspaceBasis(K, states)


def subspace_dimension(K: int) -> int:
    return sum(N // 2 + 1 for N in range(K + 1))


# ---------------------------------------------------------------------------
# operator expansions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalMonomial:
    coeff: complex
    exponents: Exponents

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if len(exps) != 4 or min(exps) < 0:
            raise AlgebraError(f"exponents must be 4 non-negative ints, got {self.exponents}")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeff", complex(self.coeff))

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def adjoint(self) -> NormalMonomial:
        i, j, k, l = self.exponents
        return NormalMonomial(self.coeff.conjugate(), (k, l, i, j))


Scalar = Union[int, float, complex]


class OperatorExpansion:
    """Immutable finite sum of normally ordered monomials.

    Coefficients whose magnitude does not exceed ``prune`` are dropped on
    construction.  Multiplication of two expansions is the normally ordered
    operator product.
    """

    __slots__ = ("_terms", "prune")

    def __init__(self, terms: Mapping[Exponents, Scalar] | Iterable[NormalMonomial] = (),
                 prune: float = DEFAULT_PRUNE):
        acc: dict[Exponents, complex] = {}
        items = terms.items() if isinstance(terms, Mapping) else (
            (m.exponents, m.coeff) for m in terms)
        for exps, c in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != 4 or min(exps) < 0:
                raise AlgebraError(f"invalid exponent tuple {exps}")
            acc[exps] = acc.get(exps, 0j) + complex(c)
        self._terms = MappingProxyType(
            {e: c for e, c in sorted(acc.items()) if abs(c) > prune})
        self.prune = prune

    # construction helpers
    @classmethod
    def monomial(cls, exponents: Exponents, coeff: Scalar = 1.0) -> OperatorExpansion:
        return cls({tuple(exponents): coeff})

    @classmethod
    def identity(cls, coeff: Scalar = 1.0) -> OperatorExpansion:
        return cls({(0, 0, 0, 0): coeff})

    @classmethod
    def zero(cls) -> OperatorExpansion:
        return cls()

    @property
    def terms(self) -> Mapping[Exponents, complex]:
        return self._terms

    def monomials(self) -> list[NormalMonomial]:
        return [NormalMonomial(c, e) for e, c in self._terms.items()]

    def coefficient(self, exponents: Exponents) -> complex:
        return self._terms.get(tuple(exponents), 0j)

    def max_exponent(self) -> int:
        return max((max(e) for e in self._terms), default=0)

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def __repr__(self) -> str:
        if not self._terms:
            return "OperatorExpansion(0)"
        return "OperatorExpansion(" + " + ".join(
            f"({c:.6g}){_label(e)}" for e, c in self._terms.items()) + ")"

    def __eq__(self, other) -> bool:
        if not isinstance(other, OperatorExpansion):
            return NotImplemented
        return dict(self._terms) == dict(other._terms)

    __hash__ = None

    def allclose(self, other: OperatorExpansion, atol: float = 1e-12) -> bool:
        return max_coefficient_difference(self, other) <= atol

    # arithmetic
    def __add__(self, other: OperatorExpansion | Scalar) -> OperatorExpansion:
        other = _as_expansion(other)
        acc = dict(self._terms)
        for e, c in other._terms.items():
            acc[e] = acc.get(e, 0j) + c
        return OperatorExpansion(acc, self.prune)

    __radd__ = __add__

    def __neg__(self) -> OperatorExpansion:
        return self.scale(-1)

    def __sub__(self, other: OperatorExpansion | Scalar) -> OperatorExpansion:
        return self + (-_as_expansion(other))

    def __rsub__(self, other: Scalar) -> OperatorExpansion:
        return _as_expansion(other) - self

    def scale(self, factor: Scalar) -> OperatorExpansion:
        return OperatorExpansion({e: factor * c for e, c in self._terms.items()}, self.prune)

    def __mul__(self, other: OperatorExpansion | Scalar) -> OperatorExpansion:
        if isinstance(other, OperatorExpansion):
            return normal_order_product(self, other)
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        return NotImplemented

    def __rmul__(self, other: Scalar) -> OperatorExpansion:
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        return NotImplemented

    def __matmul__(self, other: OperatorExpansion) -> OperatorExpansion:
        return normal_order_product(self, other)

    def adjoint(self) -> OperatorExpansion:
        return OperatorExpansion(
            {(k, l, i, j): c.conjugate() for (i, j, k, l), c in self._terms.items()},
            self.prune)

    @property
    def dag(self) -> OperatorExpansion:
        return self.adjoint()


def _as_expansion(x) -> OperatorExpansion:
    if isinstance(x, OperatorExpansion):
        return x
    return OperatorExpansion.identity(x)


def _label(e: Exponents) -> str:
    names = ("a1^dag", "a2^dag", "a1", "a2")
    parts = [n if p == 1 else f"{n}^{p}" for n, p in zip(names, e) if p]
    return " ".join(parts) or "1"


def max_coefficient_difference(a: OperatorExpansion, b: OperatorExpansion) -> float:
    keys = set(a.terms) | set(b.terms)
    return max((abs(a.coefficient(k) - b.coefficient(k)) for k in keys), default=0.0)


# ladder operators and common observables
def a1() -> OperatorExpansion:
    return OperatorExpansion.monomial((0, 0, 1, 0))


def a2() -> OperatorExpansion:
    return OperatorExpansion.monomial((0, 0, 0, 1))


def annihilator(osc: int) -> OperatorExpansion:
    if osc == 1:
        return a1()
    if osc == 2:
        return a2()
    raise AlgebraError(f"oscillator must be 1 or 2, got {osc}")


def number_operator(osc: int) -> OperatorExpansion:
    return annihilator(osc).adjoint() * annihilator(osc)


def integral_of_motion() -> OperatorExpansion:
    """``n1 + 2 n2``."""
    return number_operator(1) + 2 * number_operator(2)


def shg_hamiltonian(gamma: complex) -> OperatorExpansion:
    """``-gamma a1^dag^2 a2 - conj(gamma) a2^dag a1^2`` (hbar = 1)."""
    gamma = complex(gamma)
    return OperatorExpansion({(2, 0, 0, 1): -gamma, (0, 1, 2, 0): -gamma.conjugate()})


# ---------------------------------------------------------------------------
# normal ordering
# ---------------------------------------------------------------------------


def reorder_weights(m: int, n: int) -> list[tuple[int, int]]:
    """Terms of ``a^m (a^dag)^n`` in normal order.

    Returns ``(j, w)`` pairs meaning ``w (a^dag)^(n-j) a^(m-j)`` with
    ``w = j! C(m, j) C(n, j)``.  The weight is built incrementally so no full
    factorial is ever formed.
    """
    out = [(0, 1)]
    w = 1
    for j in range(1, min(m, n) + 1):
        # w_j = w_{j-1} * (m-j+1)(n-j+1)/j, exact in integers
        w = w * (m - j + 1) * (n - j + 1) // j
        out.append((j, w))
    return out


def monomial_product(left: Exponents, right: Exponents,
                     ceiling: int = DEFAULT_EXPONENT_CEILING) -> dict[Exponents, int]:
    """Normally ordered product of two unit monomials with integer weights."""
    i1, j1, k1, l1 = left
    i2, j2, k2, l2 = right
    if max(*left, *right) > ceiling or max(i1 + i2, j1 + j2, k1 + k2, l1 + l2) > ceiling:
        raise AlgebraError(
            f"exponent ceiling {ceiling} exceeded in product {left} * {right}")
    out: dict[Exponents, int] = {}
    # mode 1 and mode 2 reorder independently: a1^k1 (a1^dag)^i2 and a2^l1 (a2^dag)^j2
    for s, w1 in reorder_weights(k1, i2):
        for t, w2 in reorder_weights(l1, j2):
            key = (i1 + i2 - s, j1 + j2 - t, k1 + k2 - s, l1 + l2 - t)
            out[key] = out.get(key, 0) + w1 * w2
    return out


def normal_order_product(left: OperatorExpansion, right: OperatorExpansion,
                         ceiling: int = DEFAULT_EXPONENT_CEILING) -> OperatorExpansion:
    acc: dict[Exponents, complex] = {}
    for el, cl in left.terms.items():
        for er, cr in right.terms.items():
            c = cl * cr
            for key, w in monomial_product(el, er, ceiling).items():
                acc[key] = acc.get(key, 0j) + c * w
    return OperatorExpansion(acc, min(left.prune, right.prune))


def commutator(A: OperatorExpansion, B: OperatorExpansion,
               ceiling: int = DEFAULT_EXPONENT_CEILING) -> OperatorExpansion:
    return normal_order_product(A, B, ceiling) - normal_order_product(B, A, ceiling)


# ---------------------------------------------------------------------------
# matrix realisation
# ---------------------------------------------------------------------------


def _ladder_action(exponents: Exponents, n1: int, n2: int) -> tuple[tuple[int, int], float] | None:
    """Apply a unit monomial to ``|n1, n2>``; ``None`` if the result vanishes."""
    i, j, k, l = exponents
    if k > n1 or l > n2:
        return None
    m1, m2 = n1 - k, n2 - l
    # a^k |n> = sqrt(n!/(n-k)!) |n-k>,  (a^dag)^i |m> = sqrt((m+i)!/m!) |m+i>
    sq = math.perm(n1, k) * math.perm(n2, l) * math.perm(m1 + i, i) * math.perm(m2 + j, j)
    return (m1 + i, m2 + j), math.sqrt(sq)


def monomial_matrix(mono: NormalMonomial | Exponents, basis: SubspaceBasis) -> np.ndarray:
    """Matrix ``<row| mono |col>`` on the basis; out-of-subspace images are zero."""
    if isinstance(mono, NormalMonomial):
        exps, coeff = mono.exponents, mono.coeff
    else:
        exps, coeff = tuple(mono), 1.0
    return coeff * _unit_monomial_matrix(exps, basis)


def _unit_monomial_matrix(exps: Exponents, basis: SubspaceBasis) -> np.ndarray:
    return _cached_unit_matrix(tuple(exps), basis.K)


@lru_cache(maxsize=4096)
def _cached_unit_matrix(exps: Exponents, K: int) -> np.ndarray:
    basis = enumerate_basis(K)
    mat = np.zeros((basis.dim, basis.dim), dtype=complex)
    for col, s in enumerate(basis.states):
        hit = _ladder_action(exps, s.n1, s.n2)
        if hit is None:
            continue
        row = basis.fock_index(*hit[0])
        if row is not None:
            mat[row, col] = hit[1]
    mat.setflags(write=False)
    return mat


def operator_matrix(op: OperatorExpansion, basis: SubspaceBasis,
                    check_leak: bool = False) -> np.ndarray:
    """Matrix of an expansion on ``basis``.

    With ``check_leak`` an image with nonzero weight outside the subspace
    raises :class:`SubspaceLeakError` instead of being dropped.
    """
    mat = np.zeros((basis.dim, basis.dim), dtype=complex)
    for exps, c in op.terms.items():
        if check_leak:
            for s in basis.states:
                hit = _ladder_action(exps, s.n1, s.n2)
                if hit is not None and basis.fock_index(*hit[0]) is None:
                    raise SubspaceLeakError(
                        f"{_label(exps)} maps {s} to |{hit[0][0]},{hit[0][1]}> outside K={basis.K}")
        mat += c * _unit_monomial_matrix(exps, basis)
    return mat


def hamiltonian_block(N: int, gamma: complex) -> np.ndarray:
    """Matrix of the SHG Hamiltonian on the invariant block ``N`` (hbar = 1)."""
    if N < 0:
        raise AlgebraError(f"block index must be >= 0, got {N}")
    gamma = complex(gamma)
    size = N // 2 + 1
    H = np.zeros((size, size), dtype=complex)
    for l in range(size - 1):
        amp = math.sqrt((l + 1) * (N - 2 * l) * (N - 2 * l - 1))
        H[l, l + 1] = -gamma * amp
        H[l + 1, l] = -gamma.conjugate() * amp
    return H
