"""Exact unitary propagation and channel-matrix diagnostics.

Everything is done in the eigenbasis of the full Hamiltonian (hbar = 1), so
``exp(-iHt) X exp(+iHt)`` is a phase pattern applied to ``U^+ X U``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRequest, NumericalFailure
from .fock import (DensityOperator, FockBasis, annihilators, as_matrix,
                   assemble_hamiltonian, creators, ladder, to_dense)

EMPTY_CHANNEL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    samples: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise InvalidRequest("time grid needs t1 > t0")
        if self.samples < 2:
            raise InvalidRequest("time grid needs at least 2 samples")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.samples)


@dataclass(frozen=True, eq=False)
class PropagatorCache:
    energies: np.ndarray
    vectors: np.ndarray
    residual: float

    @classmethod
    def from_hamiltonian(cls, H) -> "PropagatorCache":
        H = to_dense(H)
        vals, vecs = np.linalg.eigh(H)
        resid = float(np.max(np.abs((vecs * vals) @ vecs.conj().T - H)))
        return cls(vals, vecs, resid)

    def check(self, tol: float = 1e-9):
        if not self.residual < tol:
            raise NumericalFailure(f"spectral decomposition residual {self.residual:.3e} > {tol}")

    def to_eigenbasis(self, X) -> np.ndarray:
        U = self.vectors
        return U.conj().T @ to_dense(X) @ U

    def from_eigenbasis(self, X) -> np.ndarray:
        U = self.vectors
        return U @ X @ U.conj().T

    def phases(self, t: float) -> np.ndarray:
        """``exp(-i (E_a - E_b) t)`` as a matrix over eigenstate pairs."""
        f = np.exp(-1j * self.energies * t)
        return np.outer(f, f.conj())


def conjugate(X, cache: PropagatorCache, t: float) -> np.ndarray:
    """``exp(-iHt) X exp(+iHt)``."""
    cache.check()
    return cache.from_eigenbasis(cache.phases(t) * cache.to_eigenbasis(X))


def propagate(rho, cache: PropagatorCache, t: float) -> DensityOperator:
    """Schrodinger-picture state after elapsed time ``t``."""
    rho_t = conjugate(as_matrix(rho), cache, t)
    rho_t = 0.5 * (rho_t + rho_t.conj().T)
    lo = rho.min_eigenvalue if isinstance(rho, DensityOperator) else \
        float(np.linalg.eigvalsh(rho_t)[0])
    return DensityOperator(rho_t, float(np.trace(rho_t).real), lo)


def free_channel_series(w0, energies, grid: TimeGrid) -> np.ndarray:
    """``w_rr'(t) = exp(-i (W_r - W_r') (t - t0)) w_rr'(t0)`` on every grid time."""
    w0 = np.asarray(w0, dtype=complex)
    W = np.asarray(energies, dtype=float)
    if W.shape != (w0.shape[0],):
        raise InvalidRequest("need one energy per channel mode")
    dt = grid.times - grid.t0
    f = np.exp(-1j * W[None, :] * dt[:, None])
    return f[:, :, None] * f.conj()[:, None, :] * w0[None]


def one_body_matrix(rho, basis: FockBasis, subset) -> np.ndarray:
    """``G[i, j] = Tr(a+_{s_j} a_{s_i} rho)``."""
    rho = as_matrix(rho)
    ann = annihilators(basis, subset)
    moved = [a @ rho for a in ann]  # a_{s_i} rho
    # Tr(a_i rho a+_j) = sum(moved_i * conj(a_j))
    return np.array([[np.sum(a_j.conj().multiply(m_i)) for a_j in ann] for m_i in moved])


def extract_channel_matrix(rho, modes, basis: FockBasis):
    """Normalized channel block of the one-body matrix and its weight.

    Returns ``(w, p)`` with ``p = Tr G_M``; ``w`` is ``None`` when the channel is
    empty (``p <= 1e-12``).
    """
    G = one_body_matrix(rho, basis, modes)
    p = float(np.trace(G).real)
    if p <= EMPTY_CHANNEL:
        return None, p
    w = G / p
    return 0.5 * (w + w.conj().T), p


@dataclass(frozen=True)
class ChannelSeries:
    times: np.ndarray
    w: np.ndarray          # (n_t, k, k); NaN where the channel is empty
    weight: np.ndarray     # p_M(t)
    trace_drift: float = np.nan
    purity_drift: float = np.nan


def evolve_channel(rho, cache: PropagatorCache, basis: FockBasis, modes, grid: TimeGrid,
                   check_unitarity: bool = True) -> ChannelSeries:
    """Propagate ``rho`` over the grid and extract the channel matrix at each time.

    With ``check_unitarity`` the full state is rebuilt in the Fock basis at
    every sample to record the maximal trace and purity drift.
    """
    cache.check()
    rho = as_matrix(rho)
    modes = list(modes)
    k = len(modes)
    rho_e = cache.to_eigenbasis(rho)
    cre, ann = creators(basis, modes), annihilators(basis, modes)
    # G[i, j](t) = Tr(O_ij rho(t)), O_ij = a+_j a_i; precomputed in the eigenbasis, transposed
    ops = np.array([[cache.to_eigenbasis((cre[j] @ ann[i]).toarray()).T
                     for j in range(k)] for i in range(k)])
    tr0 = np.trace(rho).real
    pur0 = np.vdot(rho, rho).real
    ws, ps = [], []
    tr_drift = pur_drift = 0.0
    for t in grid.times:
        rho_t_e = cache.phases(t - grid.t0) * rho_e
        G = np.einsum("ijab,ab->ij", ops, rho_t_e)
        p = float(np.trace(G).real)
        ps.append(p)
        if p > EMPTY_CHANNEL:
            w = G / p
            ws.append(0.5 * (w + w.conj().T))
        else:
            ws.append(np.full((k, k), np.nan + 0j))
        if check_unitarity:
            full = cache.from_eigenbasis(rho_t_e)
            tr_drift = max(tr_drift, abs(np.trace(full).real - tr0))
            pur_drift = max(pur_drift, abs(np.vdot(full, full).real - pur0))
    return ChannelSeries(grid.times.copy(), np.array(ws), np.array(ps),
                         tr_drift if check_unitarity else np.nan,
                         pur_drift if check_unitarity else np.nan)


def trace_norm(X) -> float:
    return float(np.sum(np.linalg.svd(X, compute_uv=False)))


def decoherence_metrics(series: ChannelSeries, free: np.ndarray) -> list[dict]:
    """Per-time purity, l1 coherence, trace distance to ``free`` and leakage."""
    free = np.asarray(free)
    if free.shape != series.w.shape:
        raise InvalidRequest(f"grid mismatch: extracted {series.w.shape} vs free {free.shape}")
    p0 = series.weight[0]
    records = []
    for t, w, p, wf in zip(series.times, series.w, series.weight, free):
        if np.all(np.isfinite(w)):
            off = w - np.diag(np.diag(w))
            rec = dict(t=float(t), purity=float(np.vdot(w, w).real),
                       coherence_l1=float(np.sum(np.abs(off))),
                       trace_distance=0.5 * trace_norm(w - wf))
        else:
            rec = dict(t=float(t), purity=np.nan, coherence_l1=np.nan, trace_distance=np.nan)
        rec["leakage"] = float(1 - p / p0) if p0 > EMPTY_CHANNEL else np.nan
        records.append(rec)
    return records


def dressed_creation(cache: PropagatorCache, basis: FockBasis, r: int, t: float,
                     energy: float):
    """Heisenberg-dressed creator ``exp(-iHt) a+_r exp(+iHt)`` and its deviation
    ``max|D_r(t) - exp(-i W_r t) a+_r|`` from the free phase law."""
    a_dag = ladder(basis, r, "create").toarray()
    D = conjugate(a_dag, cache, t)
    return D, float(np.max(np.abs(D - np.exp(-1j * energy * t) * a_dag)))


def interaction_commutator_norm(H, basis: FockBasis, energies, r: int) -> float:
    """``max|[H - H0, a+_r]|`` with ``H0 = sum_n W_n a+_n a_n``: the initial slope of
    the dressed-creator deviation."""
    H_int = to_dense(H) - to_dense(assemble_hamiltonian(basis, energies))
    a_dag = ladder(basis, r, "create").toarray()
    return float(np.max(np.abs(H_int @ a_dag - a_dag @ H_int)))
