"""Schrodinger-picture propagation on the truncated space ``H_K``.

The Hamiltonian is block diagonal over the invariant blocks ``N = 0..K``; each
block is diagonalised once and evolution is exact.  :func:`component_rhs`
provides the component equations so an ODE integrator can be run against the
eigen path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .algebra import (
    AlgebraError,
    OperatorExpansion,
    SubspaceBasis,
    enumerate_basis,
    hamiltonian_block,
    operator_matrix,
)


class PropagationError(RuntimeError):
    pass


class BasisMismatchError(AlgebraError):
    pass


@dataclass(frozen=True)
class StateVector:
    basis: SubspaceBasis
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = np.array(self.components, dtype=complex)
        if comps.shape != (self.basis.dim,):
            raise BasisMismatchError(
                f"state has {comps.shape} components, basis K={self.basis.K} has dim {self.basis.dim}")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.components))

    def normalized(self) -> StateVector:
        n = self.norm
        if n == 0:
            raise ValueError("cannot normalise the zero vector")
        return StateVector(self.basis, self.components / n)

    def amplitude(self, n1: int, n2: int) -> complex:
        return complex(self.components[self.basis.index((n1, n2))])

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.components[self.basis.block_slice(N)])
                         for N in range(self.basis.K + 1)])

    @classmethod
    def fock(cls, basis: SubspaceBasis, n1: int, n2: int) -> StateVector:
        c = np.zeros(basis.dim, dtype=complex)
        c[basis.index((n1, n2))] = 1.0
        return cls(basis, c)

    @classmethod
    def random(cls, basis: SubspaceBasis, rng: np.random.Generator) -> StateVector:
        """Complex-normal components, normalised."""
        c = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
        return cls(basis, c / np.linalg.norm(c))


@dataclass(frozen=True)
class Propagator:
    K: int
    gamma: complex
    basis: SubspaceBasis = field(repr=False)
    eigenvalues: tuple[np.ndarray, ...] = field(repr=False)
    eigenvectors: tuple[np.ndarray, ...] = field(repr=False)

    def block_unitary(self, N: int, t: float) -> np.ndarray:
        lam, V = self.eigenvalues[N], self.eigenvectors[N]
        return (V * np.exp(-1j * lam * t)) @ V.conj().T

    def unitary(self, t: float) -> np.ndarray:
        """Full ``exp(-i H t)`` on ``H_K`` (block diagonal)."""
        U = np.zeros((self.basis.dim, self.basis.dim), dtype=complex)
        for N in range(self.K + 1):
            sl = self.basis.block_slice(N)
            U[sl, sl] = self.block_unitary(N, t)
        return U


def build_propagator(K: int, gamma: complex) -> Propagator:
    basis = enumerate_basis(K)
    vals, vecs = [], []
    for N in range(K + 1):
        H = hamiltonian_block(N, gamma)
        try:
            lam, V = np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:
            raise PropagationError(f"eigendecomposition failed for block N={N}: {exc}") from exc
        lam.setflags(write=False)
        V.setflags(write=False)
        vals.append(lam)
        vecs.append(V)
    return Propagator(K, complex(gamma), basis, tuple(vals), tuple(vecs))


def evolve(prop: Propagator, psi0: StateVector, t: float) -> StateVector:
    if psi0.basis.K != prop.K:
        raise BasisMismatchError(f"state is on K={psi0.basis.K}, propagator on K={prop.K}")
    out = np.empty_like(psi0.components)
    for N in range(prop.K + 1):
        sl = prop.basis.block_slice(N)
        lam, V = prop.eigenvalues[N], prop.eigenvectors[N]
        out[sl] = V @ (np.exp(-1j * lam * t) * (V.conj().T @ psi0.components[sl]))
    return StateVector(prop.basis, out)


def component_rhs(basis: SubspaceBasis, gamma: complex, C: np.ndarray) -> np.ndarray:
    """``dC/dt`` from the component equations of the Schrodinger equation."""
    C = np.asarray(C)
    if C.shape[0] != basis.dim:
        raise BasisMismatchError(f"vector length {C.shape[0]} != basis dim {basis.dim}")
    gamma = complex(gamma)
    out = np.zeros_like(C, dtype=complex)
    for N in range(basis.K + 1):
        sl = basis.block_slice(N)
        c = C[sl]
        d = out[sl]
        for l in range(N // 2 + 1):
            if l + 1 <= N // 2:
                d[l] += 1j * gamma * np.sqrt((l + 1) * (N - 2 * l) * (N - 2 * l - 1)) * c[l + 1]
            if l >= 1:
                d[l] += 1j * gamma.conjugate() * np.sqrt(l * (N - 2 * l + 2) * (N - 2 * l + 1)) * c[l - 1]
    return out


def integrate_components(basis: SubspaceBasis, gamma: complex, psi0: StateVector,
                         t_eval, rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Integrate the component equations; returns an array ``(len(t_eval), dim)``.

    This is the ODE counterpart of :func:`evolve`, kept for differential tests.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval[-1] == 0:
        return np.tile(psi0.components, (len(t_eval), 1))
    sol = solve_ivp(lambda t, y: component_rhs(basis, gamma, y), (0.0, float(t_eval[-1])),
                    psi0.components.astype(complex), method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise PropagationError(f"component integration failed near t={sol.t[-1]}: {sol.message}")
    return sol.y.T


def expectation(psi: StateVector, obs: OperatorExpansion | np.ndarray) -> complex:
    mat = obs if isinstance(obs, np.ndarray) else operator_matrix(obs, psi.basis)
    if mat.shape != (psi.basis.dim, psi.basis.dim):
        raise BasisMismatchError(f"observable shape {mat.shape} does not fit dim {psi.basis.dim}")
    c = psi.components
    return complex(c.conj() @ (mat @ c))
