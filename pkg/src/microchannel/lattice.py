"""Normal modes of a confined one-body problem on a 1D finite-difference grid.

Units are hbar = m = 1, so the one-body operator is ``-0.5 * d2/dx2 + V(x)``
on the open interval (0, L) with Dirichlet endpoints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import InvalidRequest, NumericalFailure
from . import cache

# relative gap below which two eigenvalues are treated as one degenerate level
DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    length: float = 1.0
    points: int = 200

    def __post_init__(self):
        if not self.length > 0 or not np.isfinite(self.length):
            raise InvalidRequest(f"grid length must be positive, got {self.length}")
        if int(self.points) != self.points or self.points < 8:
            raise InvalidRequest(f"grid needs at least 8 interior points, got {self.points}")

    @property
    def spacing(self) -> float:
        return self.length / (self.points + 1)

    @property
    def x(self) -> np.ndarray:
        """Interior grid points; the two boundary points carry u = 0."""
        return self.spacing * np.arange(1, self.points + 1)


@dataclass(frozen=True)
class PotentialSpec:
    """One-body potential: ``zero``, ``harmonic``, ``barrier`` or ``tabulated``.

    ``harmonic`` is ``0.5 * k * (x - center)**2`` with ``center`` defaulting to
    the middle of the box. ``barrier`` is ``height`` on ``a <= x <= b``.
    """

    kind: str = "zero"
    k: float = 1.0
    center: float | None = None
    height: float = 0.0
    a: float = 0.0
    b: float = 0.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("zero", "harmonic", "barrier", "tabulated"):
            raise InvalidRequest(f"unknown potential kind {self.kind!r}")
        nums = [self.k, self.height, self.a, self.b]
        if self.center is not None:
            nums.append(self.center)
        if not np.all(np.isfinite(nums)) or not np.all(np.isfinite(self.values)):
            raise InvalidRequest("potential parameters must be finite")
        if self.kind == "barrier" and self.b < self.a:
            raise InvalidRequest("barrier needs a <= b")

    def sample(self, grid: SpatialGrid) -> np.ndarray:
        x = grid.x
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            c = grid.length / 2 if self.center is None else self.center
            return 0.5 * self.k * (x - c) ** 2
        if self.kind == "barrier":
            return np.where((x >= self.a) & (x <= self.b), self.height, 0.0)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (grid.points,):
            raise InvalidRequest(
                f"tabulated potential has {vals.size} values, grid has {grid.points} points")
        return vals

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "harmonic":
            d.update(k=self.k, center=self.center)
        elif self.kind == "barrier":
            d.update(height=self.height, a=self.a, b=self.b)
        elif self.kind == "tabulated":
            d.update(values=list(self.values))
        return d


@dataclass(frozen=True)
class TwoBodyKernel:
    """Pair interaction V(|x - y|).

    ``contact``: ``g * delta(x - y)``.
    ``gaussian``: ``g * exp(-r**2 / (2 range**2)) / (sqrt(2 pi) range)``, which
    tends to the contact kernel of the same ``g`` as ``range -> 0``.
    ``tabulated``: linear interpolation of ``(r, v)`` samples, constant beyond
    the last sample.
    """

    kind: str = "contact"
    g: float = 1.0
    range: float = 0.1
    r: tuple[float, ...] = ()
    v: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("contact", "gaussian", "tabulated"):
            raise InvalidRequest(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.range > 0:
            raise InvalidRequest("gaussian kernel range must be positive")
        if self.kind == "tabulated":
            if len(self.r) != len(self.v) or len(self.r) < 2:
                raise InvalidRequest("tabulated kernel needs matching r and v samples (>= 2)")
            if np.any(np.diff(self.r) <= 0):
                raise InvalidRequest("tabulated kernel r samples must increase")
        if not np.all(np.isfinite([self.g, self.range, *self.r, *self.v])):
            raise InvalidRequest("kernel parameters must be finite")

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "gaussian":
            s = self.range
            return self.g * np.exp(-(r**2) / (2 * s * s)) / (np.sqrt(2 * np.pi) * s)
        if self.kind == "tabulated":
            return np.interp(r, self.r, self.v)
        raise InvalidRequest("contact kernel has no pointwise values")


@dataclass(frozen=True)
class ModeBasis:
    grid: SpatialGrid
    energies: np.ndarray
    vectors: np.ndarray  # shape (n_modes, points), normalized with weight h
    residuals: np.ndarray = field(default=None, repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.energies)

    def gram(self) -> np.ndarray:
        return self.grid.spacing * self.vectors @ self.vectors.T


def fd_operator(grid: SpatialGrid, pot: PotentialSpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the tridiagonal one-body operator."""
    h = grid.spacing
    diag = 1.0 / h**2 + pot.sample(grid)
    off = np.full(grid.points - 1, -0.5 / h**2)
    return diag, off


def apply_fd(diag: np.ndarray, off: np.ndarray, u: np.ndarray) -> np.ndarray:
    hu = diag * u
    hu[..., :-1] += off * u[..., 1:]
    hu[..., 1:] += off * u[..., :-1]
    return hu


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first component that is nonzero relative to the vector's scale is made positive
    out = vecs.copy()
    for i, v in enumerate(out):
        big = np.abs(v) > 1e-12 * np.max(np.abs(v))
        if v[np.argmax(big)] < 0:
            out[i] = -v
    return out


def _canonical_block(block: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis for a degenerate eigenspace.

    Vectors are built in order of the grid position of their largest
    component: each pass picks the not-yet-used position carrying the largest
    weight in the remaining subspace (lowest position on ties), takes the
    subspace vector maximizing that component and projects it out.
    """
    k = block.shape[0]
    q, _ = np.linalg.qr(block.T)  # columns span the eigenspace
    basis = []
    rest = q
    for _ in range(k):
        weight = np.sum(rest**2, axis=1)
        pos = int(np.flatnonzero(weight >= weight.max() * (1 - 1e-12))[0])
        v = rest @ rest[pos]
        v /= np.linalg.norm(v)
        basis.append(v)
        rest = rest - np.outer(v, v @ rest)
        u, s, _ = np.linalg.svd(rest, full_matrices=False)
        rest = u[:, s > 1e-8]
    return np.array(basis)


def solve_modes(grid: SpatialGrid, pot: PotentialSpec, n_modes: int) -> ModeBasis:
    """Lowest ``n_modes`` eigenpairs of the Dirichlet finite-difference operator.

    Mode vectors satisfy ``h * sum(u_i * u_j) = delta_ij`` and start with a
    positive first nonzero component.
    """
    if n_modes < 1 or n_modes > grid.points:
        raise InvalidRequest(f"n_modes must be in [1, {grid.points}], got {n_modes}")
    diag, off = fd_operator(grid, pot)
    try:
        vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_modes - 1))
    except LinAlgError as exc:
        raise NumericalFailure(f"tridiagonal eigensolver failed: {exc}") from exc
    vecs = vecs.T.copy()

    scale = max(np.max(np.abs(vals)), 1.0)
    start = 0
    while start < n_modes:
        stop = start + 1
        while stop < n_modes and vals[stop] - vals[start] <= DEGENERACY_RTOL * scale:
            stop += 1
        if stop - start > 1:
            vecs[start:stop] = _canonical_block(vecs[start:stop])
        start = stop

    vecs = _fix_signs(vecs)
    resid = np.linalg.norm(apply_fd(diag, off, vecs) - vals[:, None] * vecs, axis=1)
    op_norm = np.max(np.abs(diag)) + 2 * np.max(np.abs(off))
    if not np.all(np.isfinite(resid)) or np.max(resid) > 1e-8 * op_norm:
        raise NumericalFailure(
            f"eigenpairs not converged: max residual {np.max(resid):.3e} "
            f"(operator norm {op_norm:.3e})")
    return ModeBasis(grid, vals, vecs / np.sqrt(grid.spacing), resid)


def two_body_elements(basis: ModeBasis, kernel: TwoBodyKernel, subset=None) -> np.ndarray:
    """Pair-interaction tensor ``V[n, m, k, l]`` over the selected modes.

    ``V[n,m,k,l] = h^2 sum_{x,y} u_n(x) u_m(y) V(|x-y|) u_k(y) u_l(x)``; the
    contact kernel collapses one sum. The result is symmetrized so that the
    exchange ``(n,m,k,l) -> (m,n,l,k)`` and the adjoint transpose
    ``(n,m,k,l) -> (l,k,m,n)`` hold exactly.
    """
    idx = np.arange(basis.n_modes) if subset is None else np.asarray(subset, dtype=int)
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= basis.n_modes):
        raise InvalidRequest(f"mode subset {list(idx)} outside 0..{basis.n_modes - 1}")
    u = basis.vectors[idx]
    h = basis.grid.spacing
    pair = u[:, None, :] * u[None, :, :]  # pair[n, l, x] = u_n(x) u_l(x)
    if kernel.kind == "contact":
        V = kernel.g * h * np.einsum("nlx,mkx->nmkl", pair, pair)
    else:
        x = basis.grid.x
        K = kernel(x[:, None] - x[None, :])
        V = h * h * np.einsum("nlx,xy,mky->nmkl", pair, K, pair, optimize=True)
    V = 0.5 * (V + V.transpose(1, 0, 3, 2))
    V = 0.5 * (V + np.einsum("lkmn->nmkl", V))
    return V


def analytic_box_energies(length: float, n_modes: int) -> np.ndarray:
    n = np.arange(1, n_modes + 1)
    return n**2 * np.pi**2 / (2 * length**2)


def _cache_key(grid: SpatialGrid, pot: PotentialSpec, n_modes: int) -> str:
    payload = json.dumps(
        {"grid": [grid.length, grid.points], "potential": pot.to_dict(), "n_modes": n_modes},
        sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


class ModeCache:
    """On-disk cache of solved mode bases keyed by a content hash of the inputs."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, grid, pot, n_modes) -> Path:
        return self.directory / f"modes-{_cache_key(grid, pot, n_modes)[:32]}.bin"

    def solve(self, grid: SpatialGrid, pot: PotentialSpec, n_modes: int) -> ModeBasis:
        path = self.path_for(grid, pot, n_modes)
        if path.exists():
            length, energies, vectors = cache.read_modes(path)
            if length == grid.length and vectors.shape == (n_modes, grid.points):
                return ModeBasis(grid, energies, vectors)
        basis = solve_modes(grid, pot, n_modes)
        self.directory.mkdir(parents=True, exist_ok=True)
        cache.write_modes(path, grid.length, basis.energies, basis.vectors)
        return basis
