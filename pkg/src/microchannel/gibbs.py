"""Generalized Gibbs states, Kubo correlations, and the feeding construction.

All states here are finite matrices; the exponent ``-sum_j zeta_j A_j`` is
diagonalized once per evaluation and every quantity is taken in that
eigenbasis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import kernel_defect, validate_channel_matrix, zero_sector
from .errors import (DependentObservables, InvalidRequest, NonConvergence, NumericalFailure,
                     PreconditionViolation)
from .evolver import PropagatorCache, conjugate
from .fock import DensityOperator, FockBasis, annihilators, as_matrix, creators, to_dense


@dataclass(frozen=True, eq=False)
class GibbsModel:
    observables: tuple
    zeta: np.ndarray
    zeta0: float = np.nan
    names: tuple = ()
    residuals: np.ndarray | None = field(default=None, repr=False)
    iterations: int = 0

    def __post_init__(self):
        obs = tuple(to_dense(A) for A in self.observables)
        if not obs:
            raise InvalidRequest("a Gibbs model needs at least one observable")
        d = obs[0].shape[0]
        for A in obs:
            if A.shape != (d, d):
                raise InvalidRequest("observables differ in dimension")
            if np.max(np.abs(A - A.conj().T)) > 1e-10:
                raise InvalidRequest("observables must be Hermitian")
        zeta = np.asarray(self.zeta, dtype=float).reshape(-1)
        if zeta.shape != (len(obs),):
            raise InvalidRequest(f"{len(obs)} observables but {zeta.size} multipliers")
        names = tuple(self.names) or tuple(f"A{j}" for j in range(len(obs)))
        object.__setattr__(self, "observables", obs)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.observables[0].shape[0]

    def to_json(self) -> dict:
        return {
            "observables": list(self.names),
            "zeta": [float(z) for z in self.zeta],
            "zeta0": float(self.zeta0),
            "residuals": None if self.residuals is None else [float(r) for r in self.residuals],
        }


def _spectrum(observables, zeta):
    with np.errstate(over="ignore", invalid="ignore"):
        X = -sum(z * A for z, A in zip(zeta, observables))
        X = 0.5 * (X + X.conj().T)
    if not np.all(np.isfinite(X)):
        raise NumericalFailure("Gibbs exponent is not finite; rescale the observables or "
                               "start from smaller multipliers")
    x, U = np.linalg.eigh(X)
    top = x[-1]
    q = np.exp(x - top)
    z = q.sum()
    log_z = top + np.log(z)
    if not np.isfinite(log_z):
        raise NumericalFailure(f"log partition function overflowed (max exponent {top:.3e}); "
                               "rescale the observables")
    return q / z, U, float(log_z)


def gibbs_state(model: GibbsModel) -> tuple[DensityOperator, GibbsModel]:
    """``exp(-sum_j zeta_j A_j) / Z``, together with the model carrying ``zeta0 = ln Z``."""
    p, U, log_z = _spectrum(model.observables, model.zeta)
    rho = (U * p) @ U.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityOperator(rho, float(np.trace(rho).real), float(p.min())), \
        replace(model, zeta0=log_z)


def _zero_cutoff(p):
    return 10 * len(p) * np.finfo(float).eps * max(float(np.max(p)), 0.0)


def _log_mean(p) -> np.ndarray:
    """``L[i, j] = int_0^1 p_i^s p_j^(1-s) ds``; zero when either eigenvalue is zero."""
    p = np.asarray(p, dtype=float)
    alive = p > _zero_cutoff(p)
    safe = np.where(alive, p, 1.0)
    lp = np.log(safe)
    d = lp[:, None] - lp[None, :]
    b = np.broadcast_to(safe[None, :], d.shape)
    small = np.abs(d) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.where(small, b * (1 + d / 2 + d * d / 6), (safe[:, None] - safe[None, :]) / d)
    return np.where(alive[:, None] & alive[None, :], L, 0.0)


def _kubo_eig(p, U, A_list, B_list):
    L = _log_mean(p)
    Ae = [U.conj().T @ A @ U for A in A_list]
    Be = [U.conj().T @ B @ U for B in B_list]
    ea = np.array([np.sum(p * np.diag(a)) for a in Ae])
    eb = np.array([np.sum(p * np.diag(b)) for b in Be])
    # sum_ij A_ij B_ji L_ij
    raw = np.array([[np.sum(a * b.T * L) for b in Be] for a in Ae])
    return raw - np.outer(ea, eb)


def kubo_correlation(w, A, B) -> complex:
    """Canonical (Kubo) correlation ``int_0^1 Tr(w^s A w^(1-s) B) ds - <A><B>``."""
    w = as_matrix(w)
    p, U = np.linalg.eigh(0.5 * (w + w.conj().T))
    p = np.clip(p, 0.0, None)
    return complex(_kubo_eig(p, U, [to_dense(A)], [to_dense(B)])[0, 0])


def kubo_matrix(w, observables) -> np.ndarray:
    w = as_matrix(w)
    p, U = np.linalg.eigh(0.5 * (w + w.conj().T))
    obs = [to_dense(A) for A in observables]
    return _kubo_eig(np.clip(p, 0.0, None), U, obs, obs)


def von_neumann_entropy(rho) -> float:
    p = np.linalg.eigvalsh(as_matrix(rho))
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def fit_gibbs(observables, targets, init=None, tol: float = 1e-8, max_iter: int = 100,
              names=(), max_halvings: int = 30) -> GibbsModel:
    """Maximum-entropy multipliers reproducing ``targets`` as expectations.

    Newton's method on ``<A_j>(zeta) = target_j``. The Jacobian is minus the
    Kubo covariance matrix; a step is halved while it increases the residual
    norm.
    """
    obs = tuple(to_dense(A) for A in observables)
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(obs),):
        raise InvalidRequest(f"{len(obs)} observables but {targets.size} targets")
    zeta = np.zeros(len(obs)) if init is None else np.array(init, dtype=float)
    model = GibbsModel(obs, zeta, names=names)

    def evaluate(z):
        p, U, log_z = _spectrum(obs, z)
        diag = np.array([np.real(np.einsum("ai,ab,bi->i", U.conj(), A, U)) for A in obs])
        return diag @ p - targets, p, U, log_z

    r, p, U, log_z = evaluate(zeta)
    for it in range(max_iter + 1):
        if np.max(np.abs(r)) < tol:
            return replace(model, zeta=zeta, zeta0=log_z, residuals=r, iterations=it)
        if it == max_iter:
            break
        C = np.real(_kubo_eig(p, U, obs, obs))
        C = 0.5 * (C + C.T)
        ev = np.linalg.eigvalsh(C)
        if ev[0] <= 1e-13 * max(ev[-1], 1e-300):
            raise DependentObservables(
                f"Kubo covariance is singular (eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e}); "
                "the observables are linearly dependent on the support of the state")
        step = np.linalg.solve(C, r)
        norm = np.linalg.norm(r)
        for _ in range(max_halvings + 1):
            trial = evaluate(zeta + step)
            if np.linalg.norm(trial[0]) <= norm:
                break
            step = step / 2
        zeta = zeta + step
        r, p, U, log_z = trial
    raise NonConvergence(f"Gibbs fit did not converge in {max_iter} iterations "
                         f"(residual {np.max(np.abs(r)):.3e})",
                         residual=float(np.max(np.abs(r))), iterations=max_iter)


def sector_gibbs_state(basis: FockBasis, modes, H, beta: float, mu: float = 0.0,
                       max_total: int | None = None) -> DensityOperator:
    """Gibbs state ``exp(-beta (H - mu N))`` on the sector with the channel modes empty.

    ``max_total`` bounds the particle number of the sector; pass
    ``n_max - 1`` to leave room for one channel excitation.
    """
    idx = zero_sector(basis, modes, max_total)
    H = to_dense(H)[np.ix_(idx, idx)]
    N = np.diag(basis.totals()[idx].astype(float))
    rho, _ = gibbs_state(GibbsModel((H, N), np.array([beta, -beta * mu])))
    full = np.zeros((basis.dim, basis.dim), dtype=complex)
    full[np.ix_(idx, idx)] = rho.matrix
    return DensityOperator(full, rho.trace, min(rho.min_eigenvalue, 0.0))


@dataclass(frozen=True)
class HistoryTerm:
    """Discretized memory integral: ``sum_k weight_k S_k``."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple((float(wt), to_dense(S)) for wt, S in self.terms)
        if not all(np.isfinite(wt) for wt, _ in terms):
            raise InvalidRequest("history weights must be finite")
        object.__setattr__(self, "terms", terms)


def time_derivative(H, A) -> np.ndarray:
    """Heisenberg derivative ``i [H, A]``."""
    H, A = to_dense(H), to_dense(A)
    return 1j * (H @ A - A @ H)


def evolution_rhs(model: GibbsModel, H, history: HistoryTerm | None = None) -> np.ndarray:
    """First-order rates ``d<A_j>/dt`` for every observable of the model.

    ``Tr(dA_j/dt w) + sum_k weight_k <dA_j/dt, S_k>_w`` with ``w`` the model's
    Gibbs state and ``<.,.>`` the Kubo correlation.
    """
    H = to_dense(H)
    if H.shape != (model.dim, model.dim):
        raise InvalidRequest(f"Hamiltonian is {H.shape}, observables are {model.dim}-dimensional")
    history = history or HistoryTerm()
    for _, S in history.terms:
        if S.shape != H.shape:
            raise InvalidRequest("history operator dimension mismatch")
    w, _ = gibbs_state(model)
    p, U = np.linalg.eigh(w.matrix)
    p = np.clip(p, 0.0, None)
    dots = [time_derivative(H, A) for A in model.observables]
    rates = np.array([np.sum(d * w.matrix.T) for d in dots], dtype=complex)
    if history.terms:
        K = _kubo_eig(p, U, dots, [S for _, S in history.terms])
        rates = rates + K @ np.array([wt for wt, _ in history.terms])
    return rates.real


@dataclass(frozen=True, eq=False)
class SourceSpec:
    modes: tuple
    operators: tuple        # B_r for r in modes, dense
    window: float
    samples: int
    sample_times: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray      # (samples, |M|, n_modes)


def _kernel_samples(kernel, times, n_channel, n_modes):
    if callable(kernel):
        K = np.array([np.asarray(kernel(t), dtype=complex) for t in times])
    else:
        K = np.asarray(kernel, dtype=complex)
        if K.ndim == 2:
            K = np.broadcast_to(K, (len(times),) + K.shape)
    if K.shape != (len(times), n_channel, n_modes):
        raise InvalidRequest(f"kernel shape {K.shape}, expected "
                             f"({len(times)}, {n_channel}, {n_modes}) or ({n_channel}, {n_modes})")
    return np.array(K)


def build_source_ops(cache: PropagatorCache, basis: FockBasis, modes, kernel, window: float,
                     samples: int, t1: float = 0.0) -> SourceSpec:
    """Source operators ``B_r = sum_k dt_k sum_s K_rs(t'_k) a_s(-(t1 - t'_k))``.

    Sample times ``t'_k`` span ``[t1 - window, t1]`` with trapezoid weights;
    a single sample sits at ``t1`` with weight 1. ``a_s(-u)`` is the
    annihilator conjugated as ``exp(-iHu) a_s exp(+iHu)``. ``kernel`` is a
    ``(|M|, n_modes)`` array, a per-sample stack of those, or a callable of
    ``t'``; its columns for channel modes must vanish.
    """
    modes = tuple(int(r) for r in modes)
    if samples < 1 or window < 0:
        raise InvalidRequest("need samples >= 1 and a non-negative window")
    if samples == 1:
        times, weights = np.array([t1], dtype=float), np.ones(1)
    else:
        times = np.linspace(t1 - window, t1, samples)
        weights = np.full(samples, window / (samples - 1))
        weights[[0, -1]] *= 0.5
    K = _kernel_samples(kernel, times, len(modes), basis.n_modes)
    if np.any(K[:, :, list(modes)] != 0):
        raise InvalidRequest("source kernel couples to channel modes; it may only index the "
                             "remaining modes")
    bath = [s for s in range(basis.n_modes) if s not in modes and np.any(K[:, :, s] != 0)]
    ann = {s: a for s, a in zip(bath, annihilators(basis, bath))}
    B = [np.zeros((basis.dim, basis.dim), dtype=complex) for _ in modes]
    for k, (t, dt) in enumerate(zip(times, weights)):
        moved = {s: conjugate(ann[s].toarray(), cache, t1 - t) for s in bath}
        for i in range(len(modes)):
            for s in bath:
                if K[k, i, s] != 0:
                    B[i] += dt * K[k, i, s] * moved[s]
    return SourceSpec(modes, tuple(B), float(window), int(samples), times, weights, K)


def feeding_matrix(spec: SourceSpec, rho_s, basis: FockBasis):
    """Feeding matrix ``sigma[i, j] = Tr(B_i rho B_j^+)`` and its normalization.

    Returns ``(sigma, w)``; ``w = sigma / Tr sigma`` is ``None`` when the feed is
    empty (``Tr sigma <= 1e-14``).
    """
    rho = as_matrix(rho_s)
    defect = kernel_defect(basis, rho, spec.modes)
    if defect >= 1e-12:
        raise PreconditionViolation(f"source state has channel excitations ({defect:.3e})")
    moved = [B @ rho for B in spec.operators]
    sigma = np.array([[np.sum(m_i * B_j.conj()) for B_j in spec.operators] for m_i in moved])
    sigma = 0.5 * (sigma + sigma.conj().T)
    tr = float(np.trace(sigma).real)
    if tr <= 1e-14:
        return sigma, None
    return sigma, validate_channel_matrix(sigma / tr)


def source_fed_state(spec: SourceSpec, rho_s, basis: FockBasis) -> DensityOperator:
    """Normalized ``X rho X^+`` with ``X = sum_r a+_r B_r``."""
    rho = as_matrix(rho_s)
    X = sum(c @ B for c, B in zip(creators(basis, spec.modes), spec.operators))
    out = X @ rho @ X.conj().T
    tr = np.trace(out).real
    if tr <= 1e-14:
        raise InvalidRequest("source operators annihilate the source state")
    return DensityOperator.certify(out / tr)
