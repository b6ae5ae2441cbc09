"""Microchannel states and their reduction to one-particle quantities.

A channel is a set ``M`` of mode indices. The unfed state has no
excitation in ``M``; the fed state adds exactly one, distributed according
to a channel matrix ``w``. Reductions map Fock-space observables and
projection measures to matrices on the one-particle space spanned by ``M``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRequest, NormalizationFailure, PreconditionViolation
from .fock import (DensityOperator, FockBasis, annihilators, as_matrix, creators,
                   hermiticity_defect, number_operator, to_dense)

KERNEL_TOL = 1e-12


def _modes(basis: FockBasis, modes) -> list[int]:
    modes = [int(r) for r in modes]
    if len(set(modes)) != len(modes) or not modes:
        raise InvalidRequest(f"channel modes must be distinct and non-empty, got {modes}")
    for r in modes:
        if not 0 <= r < basis.n_modes:
            raise InvalidRequest(f"channel mode {r} outside 0..{basis.n_modes - 1}")
    return modes


def validate_channel_matrix(w, tol: float = 1e-10) -> np.ndarray:
    w = np.array(w, dtype=complex)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
        raise InvalidRequest(f"channel matrix must be square, got shape {w.shape}")
    if hermiticity_defect(w) > 1e-12:
        raise InvalidRequest("channel matrix is not Hermitian")
    w = 0.5 * (w + w.conj().T)
    lo = np.linalg.eigvalsh(w)[0]
    if lo < -1e-12:
        raise InvalidRequest(f"channel matrix has negative eigenvalue {lo:.3e}")
    if abs(np.trace(w).real - 1) > tol:
        raise InvalidRequest(f"channel matrix trace {np.trace(w).real!r} is not 1")
    return w


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Channel modes, channel matrix ``w`` and feeding probability ``lam``.

    ``energies`` are the mode energies of the channel modes (same order as
    ``modes``); when given, the bandwidth and the timescale 1/bandwidth are
    available.
    """

    modes: tuple
    w: np.ndarray
    lam: float = 0.5
    energies: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(r) for r in self.modes))
        w = validate_channel_matrix(self.w)
        if w.shape[0] != len(self.modes):
            raise InvalidRequest(f"channel matrix is {w.shape[0]}x{w.shape[0]}, "
                                 f"channel has {len(self.modes)} modes")
        object.__setattr__(self, "w", w)
        if not 0 < self.lam < 1:
            raise InvalidRequest(f"feeding probability must lie in (0, 1), got {self.lam}")
        if self.energies is not None:
            e = np.asarray(self.energies, dtype=float)
            if e.shape != (len(self.modes),):
                raise InvalidRequest("need one energy per channel mode")
            object.__setattr__(self, "energies", e)

    @property
    def bandwidth(self) -> float | None:
        if self.energies is None:
            return None
        return float(self.energies.max() - self.energies.min())

    @property
    def timescale(self) -> float | None:
        bw = self.bandwidth
        if bw is None:
            return None
        return np.inf if bw == 0 else 1.0 / bw

    def one_particle_state(self) -> np.ndarray:
        """``W1 = sum |r> w_rr' <r'|`` in the channel-mode basis."""
        return self.w.copy()

    def one_particle_hamiltonian(self) -> np.ndarray | None:
        return None if self.energies is None else np.diag(self.energies).astype(complex)


def zero_sector(basis: FockBasis, modes, max_total: int | None = None) -> np.ndarray:
    """Indices of basis states with no particle in ``modes``."""
    sel = basis.totals(modes) == 0
    if max_total is not None:
        sel &= basis.totals() <= max_total
    return np.flatnonzero(sel)


def embed(basis: FockBasis, indices, block) -> np.ndarray:
    full = np.zeros((basis.dim, basis.dim), dtype=complex)
    idx = np.asarray(indices)
    full[np.ix_(idx, idx)] = block
    return full


def kernel_defect(basis: FockBasis, rho, modes) -> float:
    """``max_r max|a_r rho|`` over the channel modes."""
    rho = as_matrix(rho)
    return max(float(np.max(np.abs(a @ rho))) for a in annihilators(basis, modes))


def make_unfed_state(basis: FockBasis, modes, bath_state=None) -> DensityOperator:
    """Unfed state: the bath state with the channel modes empty.

    ``bath_state`` is either a full Fock-space matrix supported on the
    zero-channel sector, or a matrix on that sector alone (in the order of
    :func:`zero_sector`). ``None`` means the vacuum.
    """
    modes = _modes(basis, modes)
    sector = zero_sector(basis, modes)
    if bath_state is None:
        rho = np.zeros((basis.dim, basis.dim), dtype=complex)
        rho[0, 0] = 1.0
    else:
        b = as_matrix(bath_state)
        if b.shape == (len(sector), len(sector)) and len(sector) != basis.dim:
            rho = embed(basis, sector, b)
        elif b.shape == (basis.dim, basis.dim):
            outside = np.ones(basis.dim, dtype=bool)
            outside[sector] = False
            leak = max(np.max(np.abs(b[outside]), initial=0.0),
                       np.max(np.abs(b[:, outside]), initial=0.0))
            if leak > KERNEL_TOL:
                raise PreconditionViolation(
                    f"bath state has weight {leak:.3e} on states with channel excitations")
            rho = np.array(b, dtype=complex)
        else:
            raise InvalidRequest(f"bath state shape {b.shape} fits neither the Fock space "
                                 f"({basis.dim}) nor the unfed sector ({len(sector)})")
    state = DensityOperator.certify(rho)
    defect = kernel_defect(basis, state, modes)
    if defect >= KERNEL_TOL:
        raise PreconditionViolation(f"unfed state not annihilated by channel modes ({defect:.3e})")
    return state


def make_fed_state(basis: FockBasis, rho0, spec: ChannelSpec) -> DensityOperator:
    """``sum_{r,r'} w_rr' a+_r rho0 a_r'``."""
    rho0 = as_matrix(rho0)
    up = [a @ rho0 for a in creators(basis, spec.modes)]  # a+_r rho0
    down = annihilators(basis, spec.modes)
    rho1 = np.zeros_like(rho0, dtype=complex)
    for i in range(len(spec.modes)):
        for j in range(len(spec.modes)):
            if spec.w[i, j] != 0:
                rho1 += spec.w[i, j] * (up[i] @ down[j])
    tr = np.trace(rho1).real
    if abs(tr - 1) > 1e-8:
        raise NormalizationFailure(
            f"fed state trace {tr!r}: the unfed state is not empty in the channel "
            "or the particle cap leaves no room for the extra excitation")
    return DensityOperator.certify(rho1, tol=1e-8)


def mix_channel(rho0, rho1, lam: float) -> DensityOperator:
    if not 0 < lam < 1:
        raise InvalidRequest(f"feeding probability must lie in (0, 1), got {lam}")
    rho = (1 - lam) * as_matrix(rho0) + lam * as_matrix(rho1)
    return DensityOperator.certify(rho)


def reduce_observable(basis: FockBasis, A, rho0, modes) -> np.ndarray:
    """One-particle matrix ``A1[r', r] = Tr(a_r' A a+_r rho0)``."""
    modes = _modes(basis, modes)
    A = to_dense(A)
    rho0 = as_matrix(rho0)
    left = np.array([a @ A for a in annihilators(basis, modes)])    # a_r' A
    right = np.array([c @ rho0 for c in creators(basis, modes)])    # a+_r rho0
    return np.einsum("iab,jba->ij", left, right)


def eigenprojections(A, tol: float = 1e-9) -> list[np.ndarray]:
    """Spectral projections of a Hermitian matrix, eigenvalues grouped within ``tol``."""
    vals, vecs = np.linalg.eigh(to_dense(A))
    cells, start = [], 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] > tol:
            v = vecs[:, start:i]
            cells.append(v @ v.conj().T)
            start = i
    return cells


@dataclass(frozen=True)
class EffectMatrix:
    cells: tuple

    def completeness_defect(self) -> float:
        total = sum(self.cells)
        return float(np.max(np.abs(total - np.eye(total.shape[0]))))

    def eigenvalue_range(self) -> tuple[float, float]:
        ev = np.concatenate([np.linalg.eigvalsh(F) for F in self.cells])
        return float(ev.min()), float(ev.max())


def _check_pvm(projections, dim):
    total = np.zeros((dim, dim), dtype=complex)
    for P in projections:
        P = to_dense(P)
        if P.shape != (dim, dim):
            raise InvalidRequest(f"projection has shape {P.shape}, Fock space is {dim}")
        if hermiticity_defect(P) > 1e-10 or np.max(np.abs(P @ P - P)) > 1e-10:
            raise InvalidRequest("measure cell is not an orthogonal projection")
        total += P
    if np.max(np.abs(total - np.eye(dim))) > 1e-8:
        raise InvalidRequest("projections do not resolve the identity")


def reduce_effect(basis: FockBasis, projections, rho0, modes) -> EffectMatrix:
    """Reduce a Fock-space projection measure to one-particle effects."""
    _check_pvm(projections, basis.dim)
    cells = []
    for P in projections:
        F = reduce_observable(basis, P, rho0, modes)
        cells.append(0.5 * (F + F.conj().T))
    return EffectMatrix(tuple(cells))


@dataclass(frozen=True)
class CellDefect:
    idempotency: float   # max|F^2 - F|
    commutator: float    # max|[E, N_M]|
    chain: float         # max|sum_r Tr(a_r1 E a+_r a_r E a+_r2 rho0) - F|
    factorization: float # max|F F - sum_r Tr(a_r1 E a+_r a_r E a+_r2 rho0)|


def projection_defect(basis: FockBasis, effects: EffectMatrix, projections, rho0,
                      modes) -> list[CellDefect]:
    """How far each reduced effect is from being a projection.

    Alongside ``max|F^2 - F|`` this reports the commutator of the Fock cell
    with the channel number operator, and both steps of the trace chain that
    turns ``F^2`` into ``F`` when that commutator vanishes.
    """
    modes = _modes(basis, modes)
    n_m = to_dense(number_operator(basis, modes))
    rho0 = as_matrix(rho0)
    out = []
    for F, P in zip(effects.cells, projections):
        P = to_dense(P)
        # chain[r1, r2] = sum_r Tr(a_r1 P a+_r a_r P a+_r2 rho0) = Tr(a_r1 P N_M P a+_r2 rho0)
        chain = reduce_observable(basis, P @ n_m @ P, rho0, modes)
        out.append(CellDefect(
            idempotency=float(np.max(np.abs(F @ F - F))),
            commutator=float(np.max(np.abs(P @ n_m - n_m @ P))),
            chain=float(np.max(np.abs(chain - F))),
            factorization=float(np.max(np.abs(F @ F - chain))),
        ))
    return out


def expectation_identity_residual(basis: FockBasis, A, rho0, spec: ChannelSpec,
                                  lam: float | None = None) -> float:
    """``|Tr(A rho) - (1-lam) Tr(A rho0) - lam Tr(W1 A1)|`` for the mixed channel state.

    The left side is evaluated on the assembled Fock-space state, the right
    side through the one-particle reduction.
    """
    lam = spec.lam if lam is None else lam
    rho0 = as_matrix(rho0)
    A = to_dense(A)
    rho = mix_channel(rho0, make_fed_state(basis, rho0, spec), lam).matrix
    lhs = np.sum(A * rho.T)
    A1 = reduce_observable(basis, A, rho0, spec.modes)
    rhs = (1 - lam) * np.sum(A * rho0.T) + lam * np.trace(spec.one_particle_state() @ A1)
    return float(abs(lhs - rhs))


def random_channel_matrix(k: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = k if rank is None else rank
    g = rng.normal(size=(k, rank)) + 1j * rng.normal(size=(k, rank))
    w = g @ g.conj().T
    w = 0.5 * (w + w.conj().T)
    return w / np.trace(w).real


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (g + g.conj().T)


def channel_matrix_to_json(w) -> dict:
    w = np.asarray(w, dtype=complex)
    return {"dim": int(w.shape[0]), "re": w.real.tolist(), "im": w.imag.tolist()}


def channel_matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        k = int(obj["dim"])
        w = np.array(obj["re"], dtype=float) + 1j * np.array(obj["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidRequest(f"malformed channel matrix JSON: {exc}") from exc
    if w.shape != (k, k):
        raise InvalidRequest(f"channel matrix JSON declares dim {k} but holds shape {w.shape}")
    return w
