"""Truncated Fock space: basis enumeration, ladder operators, Hamiltonian.

Operators are plain matrices. Ladder operators are always CSR sparse; the
Hamiltonian and number operators are dense below ``DENSE_LIMIT`` and CSR
above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyFailure, CapacityExceeded, InvalidRequest

BOSE = "bose"
FERMI = "fermi"
DEFAULT_MAX_DIM = 20000
DENSE_LIMIT = 512


def _count(m: int, cap: int, n_max: int) -> int:
    # ways[n] = number of occupation vectors over the modes seen so far with total n
    ways = np.zeros(n_max + 1, dtype=object)
    ways[0] = 1
    for _ in range(m):
        new = np.zeros_like(ways)
        for n in range(n_max + 1):
            new[n] = sum(ways[n - k] for k in range(min(cap, n) + 1))
        ways = new
    return int(sum(ways))


def _colex(m: int, cap: int, budget: int):
    # mode 0 varies fastest, so the vacuum comes first and (1,0) precedes (0,1)
    if m == 0:
        yield ()
        return
    for last in range(min(cap, budget) + 1):
        for head in _colex(m - 1, cap, budget - last):
            yield head + (last,)


@dataclass(frozen=True, eq=False)
class FockBasis:
    statistics: str
    n_modes: int
    cap: int
    n_max: int
    states: np.ndarray  # (dim, n_modes) occupation numbers
    index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def lookup(self, occupation) -> int:
        return self.index[tuple(int(n) for n in occupation)]

    def totals(self, modes=None) -> np.ndarray:
        cols = slice(None) if modes is None else list(modes)
        return self.states[:, cols].sum(axis=1)


def enumerate_basis(n_modes: int, statistics: str = BOSE, cap: int = 2, n_max: int = 2,
                    max_dim: int = DEFAULT_MAX_DIM) -> FockBasis:
    """Occupation-number basis with a per-mode cap and a total-particle cap.

    States are ordered co-lexicographically (compare the last mode first),
    which puts the vacuum first. Fermi statistics force ``cap = 1``.
    """
    statistics = statistics.lower()
    if statistics not in (BOSE, FERMI):
        raise InvalidRequest(f"statistics must be 'bose' or 'fermi', got {statistics!r}")
    if n_modes < 1:
        raise InvalidRequest("need at least one mode")
    if n_max < 0 or cap < 0:
        raise InvalidRequest("occupation caps must be non-negative")
    if statistics == FERMI:
        cap = 1
    dim = _count(n_modes, cap, n_max)
    if dim > max_dim:
        raise CapacityExceeded(f"Fock dimension {dim} exceeds limit {max_dim}")
    states = np.array(list(_colex(n_modes, cap, n_max)), dtype=np.int64).reshape(dim, n_modes)
    index = {tuple(int(n) for n in s): i for i, s in enumerate(states)}
    return FockBasis(statistics, n_modes, cap, n_max, states, index)


def _check_mode(basis: FockBasis, r: int):
    if not 0 <= r < basis.n_modes:
        raise InvalidRequest(f"mode {r} outside 0..{basis.n_modes - 1}")


@lru_cache(maxsize=256)
def _creation(basis: FockBasis, r: int) -> sp.csr_matrix:
    occ = basis.states
    ok = (occ[:, r] < basis.cap) & (occ.sum(axis=1) < basis.n_max)
    src = np.flatnonzero(ok)
    target = occ[src].copy()
    target[:, r] += 1
    dst = np.array([basis.index[tuple(t)] for t in target.tolist()], dtype=np.int64)
    if basis.statistics == FERMI:
        vals = (-1.0) ** occ[src, :r].sum(axis=1)
    else:
        vals = np.sqrt(occ[src, r] + 1.0)
    mat = sp.csr_matrix((vals.astype(complex), (dst, src)), shape=(basis.dim, basis.dim))
    mat.sort_indices()
    return mat


def ladder(basis: FockBasis, r: int, kind: str = "create") -> sp.csr_matrix:
    """Creation or annihilation operator for mode ``r``.

    Bose: ``sqrt(n_r + 1)``, zero when either cap would be exceeded.
    Fermi: Jordan-Wigner sign ``(-1)**sum(n_j, j < r)``.
    """
    _check_mode(basis, r)
    a_dag = _creation(basis, r)
    if kind == "create":
        return a_dag.copy()
    if kind == "annihilate":
        return a_dag.conj().T.tocsr()
    raise InvalidRequest(f"kind must be 'create' or 'annihilate', got {kind!r}")


def creators(basis: FockBasis, modes=None) -> list:
    modes = range(basis.n_modes) if modes is None else modes
    return [ladder(basis, r, "create") for r in modes]


def annihilators(basis: FockBasis, modes=None) -> list:
    modes = range(basis.n_modes) if modes is None else modes
    return [ladder(basis, r, "annihilate") for r in modes]


def _finish(mat):
    if sp.issparse(mat):
        return mat.toarray() if mat.shape[0] < DENSE_LIMIT else mat.tocsr()
    return mat if mat.shape[0] < DENSE_LIMIT else sp.csr_matrix(mat)


def number_operator(basis: FockBasis, subset=None):
    subset = range(basis.n_modes) if subset is None else list(subset)
    for r in subset:
        _check_mode(basis, r)
    counts = basis.states[:, list(subset)].sum(axis=1).astype(complex)
    return _finish(sp.diags(counts, format="csr"))


def to_dense(op) -> np.ndarray:
    return op.toarray() if sp.issparse(op) else np.asarray(op)


def hermiticity_defect(op) -> float:
    d = op - op.conj().T
    d = d.toarray() if sp.issparse(d) else d
    return float(np.max(np.abs(d))) if d.size else 0.0


def assemble_hamiltonian(basis: FockBasis, energies, tensor=None, g_int: float = 1.0):
    """``sum_n W_n a+_n a_n + (g_int/2) sum V[n,m,k,l] a+_n a+_m a_k a_l``."""
    W = np.asarray(energies, dtype=float)
    if W.shape != (basis.n_modes,):
        raise InvalidRequest(f"need {basis.n_modes} mode energies, got shape {W.shape}")
    H = sp.diags((basis.states @ W).astype(complex), format="csr")
    if tensor is not None and g_int != 0:
        V = np.asarray(tensor)
        m = basis.n_modes
        if V.shape != (m, m, m, m):
            raise InvalidRequest(f"interaction tensor shape {V.shape} does not match {m} modes")
        ann = annihilators(basis)
        pairs = [[(ann[k] @ ann[l]).tocsr() for l in range(m)] for k in range(m)]
        H_int = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for n in range(m):
            for mm in range(m):
                coeff = V[n, mm]
                if not np.any(coeff):
                    continue
                inner = sum(coeff[k, l] * pairs[k][l]
                            for k in range(m) for l in range(m) if coeff[k, l] != 0)
                # a+_n a+_m = (a_m a_n)^dagger
                H_int = H_int + pairs[mm][n].conj().T @ inner
        H = H + 0.5 * g_int * H_int
    H = _finish(H)
    defect = hermiticity_defect(H)
    if defect > 1e-10:
        raise AssemblyFailure(f"Hamiltonian hermiticity defect {defect:.3e}")
    return H


def scale_coupling_blocks(tensor, channel_modes, g_mb: float = 1.0, g_mm: float = 1.0):
    """Rescale interaction elements by how many indices fall in the channel set.

    Elements mixing channel and remaining modes are multiplied by ``g_mb``,
    elements entirely inside the channel by ``g_mm``; pure remaining-mode
    elements are left alone.
    """
    V = np.array(tensor, copy=True)
    m = V.shape[0]
    in_m = np.zeros(m, dtype=bool)
    in_m[list(channel_modes)] = True
    hits = (in_m[:, None, None, None].astype(int) + in_m[None, :, None, None]
            + in_m[None, None, :, None] + in_m[None, None, None, :])
    V[(hits > 0) & (hits < 4)] *= g_mb
    V[hits == 4] *= g_mm
    return V


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Dense Hermitian, PSD, unit-trace matrix with its validity certificate."""

    matrix: np.ndarray
    trace: float
    min_eigenvalue: float

    @classmethod
    def certify(cls, matrix, tol: float = 1e-10) -> "DensityOperator":
        rho = np.array(to_dense(matrix), dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InvalidRequest(f"density operator must be square, got shape {rho.shape}")
        defect = hermiticity_defect(rho)
        if defect > tol:
            raise InvalidRequest(f"density operator not Hermitian (defect {defect:.3e})")
        rho = 0.5 * (rho + rho.conj().T)
        tr = float(np.trace(rho).real)
        lo = float(np.linalg.eigvalsh(rho)[0])
        if abs(tr - 1) > tol:
            raise InvalidRequest(f"density operator trace {tr!r} differs from 1")
        if lo < -tol:
            raise InvalidRequest(f"density operator has negative eigenvalue {lo:.3e}")
        return cls(rho, tr, lo)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)


def as_matrix(rho) -> np.ndarray:
    """Dense matrix behind a DensityOperator, sparse matrix or array."""
    if isinstance(rho, DensityOperator):
        return rho.matrix
    return to_dense(rho)


def pure_state(basis: FockBasis, occupation) -> DensityOperator:
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    i = basis.lookup(occupation)
    rho[i, i] = 1.0
    return DensityOperator(rho, 1.0, 0.0)
