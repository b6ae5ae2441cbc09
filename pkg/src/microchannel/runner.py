"""Experiment presets driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (ChannelSpec, channel_matrix_from_json, channel_matrix_to_json,
                      eigenprojections, expectation_identity_residual, make_fed_state,
                      make_unfed_state, mix_channel, projection_defect, random_channel_matrix,
                      random_hermitian, reduce_effect)
from .config import ExperimentConfig
from .errors import InvalidRequest
from .evolver import (PropagatorCache, TimeGrid, decoherence_metrics, evolve_channel,
                      free_channel_series)
from .fock import (assemble_hamiltonian, enumerate_basis, ladder, number_operator,
                   pure_state, scale_coupling_blocks, to_dense)
from .gibbs import (build_source_ops, feeding_matrix, fit_gibbs, gibbs_state, kubo_matrix,
                    sector_gibbs_state, von_neumann_entropy)
from .lattice import (PotentialSpec, SpatialGrid, TwoBodyKernel, analytic_box_energies,
                      solve_modes, two_body_elements)

RNG_NAME = "numpy.random.PCG64"


def fmt(x) -> str:
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Outcome:
    scalars: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def check(self, name, value, tol, passed=None):
        value = float(value)
        ok = bool(value < tol) if passed is None else bool(passed)
        self.checks.append({"name": name, "value": value, "tolerance": tol, "pass": ok})


class System:
    """Modes, interaction tensor and Fock space shared by the experiments."""

    def __init__(self, cfg: ExperimentConfig):
        raw = cfg.raw
        self.cfg = cfg
        self.grid = SpatialGrid(raw["grid"]["length"], raw["grid"]["points"])
        pot = dict(raw["potential"])
        if "values" in pot:
            pot["values"] = tuple(pot["values"])
        self.potential = PotentialSpec(**pot)
        kern = dict(raw["kernel"])
        for key in ("r", "v"):
            if key in kern:
                kern[key] = tuple(kern[key])
        self.kernel = TwoBodyKernel(**kern)
        self.modes = solve_modes(self.grid, self.potential, raw["n_modes"])
        self.energies = self.modes.energies
        self.channel = list(raw.get("channel_modes", []))
        self._tensor = None
        self._basis = None

    @property
    def tensor(self):
        if self._tensor is None:
            self._tensor = two_body_elements(self.modes, self.kernel)
        return self._tensor

    @property
    def basis(self):
        if self._basis is None:
            f = self.cfg.raw["fock"]
            self._basis = enumerate_basis(self.cfg.raw["n_modes"], f["statistics"],
                                          f.get("cap", 2), f["n_max"],
                                          f.get("max_dim", 20000))
        return self._basis

    def hamiltonian(self, g_mb=None):
        c = self.cfg.raw["couplings"]
        g_mb = c["g_MB"] if g_mb is None else g_mb
        V = self.tensor
        if self.channel:
            V = scale_coupling_blocks(V, self.channel, g_mb, c["g_MM"])
        return assemble_hamiltonian(self.basis, self.energies, V, c["g_int"])

    def unfed_state(self, H):
        b = self.cfg.raw["bath"]
        if b["kind"] == "vacuum":
            return make_unfed_state(self.basis, self.channel)
        if b["kind"] == "particle":
            s = b.get("mode")
            if s is None or s in self.channel or s >= self.basis.n_modes:
                raise InvalidRequest("bath 'particle' needs a non-channel 'mode'")
            occ = [0] * self.basis.n_modes
            occ[s] = 1
            return make_unfed_state(self.basis, self.channel, pure_state(self.basis, occ))
        bath = sector_gibbs_state(self.basis, self.channel, H, b.get("beta", 1.0),
                                  b.get("mu", 0.0), max_total=self.basis.n_max - 1)
        return make_unfed_state(self.basis, self.channel, bath)

    def channel_spec(self, rng, w=None):
        ch = self.cfg.raw["channel"]
        src = ch["w"]
        k = len(self.channel)
        if w is None:
            if src["source"] == "explicit":
                if "matrix" not in src:
                    raise InvalidRequest("explicit channel matrix missing 'matrix'")
                w = channel_matrix_from_json(src["matrix"])
            elif src["source"] == "random":
                w = random_channel_matrix(k, rng)
            elif src["source"] == "diagonal":
                pops = np.asarray(src.get("populations", [1.0 / k] * k), dtype=float)
                if pops.shape != (k,):
                    raise InvalidRequest("need one population per channel mode")
                w = np.diag(pops).astype(complex)
            else:
                raise InvalidRequest("channel matrix source 'from-feeding' is only available "
                                     "in the feeding experiment")
        return ChannelSpec(self.channel, w, ch["lambda"], self.energies[self.channel])

    def time_grid(self):
        t = self.cfg.raw["time"]
        return TimeGrid(t["t0"], t["t1"], t["samples"])


def series_csv(series, metrics, k) -> str:
    header = ["t", "purity", "coherence_l1", "trace_distance", "leakage"]
    for part in ("re", "im"):
        header += [f"w_{part}_{i}_{j}" for i in range(k) for j in range(k)]
    rows = []
    for rec, w in zip(metrics, series.w):
        rows.append([rec["t"], rec["purity"], rec["coherence_l1"], rec["trace_distance"],
                     rec["leakage"], *w.real.ravel(), *w.imag.ravel()])
    return csv_text(header, rows)


def _channel_run(system, spec, H, grid, out: Outcome, tag=""):
    rho0 = system.unfed_state(H)
    rho = mix_channel(rho0, make_fed_state(system.basis, rho0, spec), spec.lam)
    cache = PropagatorCache.from_hamiltonian(H)
    series = evolve_channel(rho, cache, system.basis, spec.modes, grid)
    free = free_channel_series(spec.w, spec.energies, grid)
    metrics = decoherence_metrics(series, free)
    out.check(f"trace_drift{tag}", series.trace_drift, 1e-10)
    out.check(f"purity_drift{tag}", series.purity_drift, 1e-10)
    out.scalars[f"spectral_residual{tag}"] = cache.residual
    return series, free, metrics


def run_modes(system: System, rng, out: Outcome):
    n = system.modes.n_modes
    pot = system.potential
    if pot.kind == "zero":
        analytic = analytic_box_energies(system.grid.length, n)
    elif pot.kind == "harmonic":
        analytic = (np.arange(n) + 0.5) * np.sqrt(pot.k)
    else:
        analytic = np.full(n, np.nan)
    rel = np.abs(system.energies - analytic) / np.abs(analytic)
    out.files["modes.csv"] = csv_text(
        ["n", "energy", "analytic", "rel_error"],
        [[i + 1, e, a, r] for i, (e, a, r) in enumerate(zip(system.energies, analytic, rel))])
    out.check("gram_defect", np.max(np.abs(system.modes.gram() - np.eye(n))), 1e-10)
    if np.all(np.isfinite(rel)):
        out.check("max_rel_error_vs_analytic", np.max(rel), 1e-3)
    out.scalars["n_modes"] = n
    out.scalars["spacing"] = system.grid.spacing


def run_free_channel(system: System, rng, out: Outcome):
    spec = system.channel_spec(rng)
    grid = system.time_grid()
    H = system.hamiltonian()
    series, free, metrics = _channel_run(system, spec, H, grid, out)
    dev = float(np.max(np.abs(series.w - free)))
    out.scalars.update(max_deviation_from_free=dev, bandwidth=spec.bandwidth,
                       timescale=spec.timescale, dim=system.basis.dim)
    out.check("free_law_deviation", dev, 1e-8)
    out.files["series.csv"] = series_csv(series, metrics, len(spec.modes))
    out.files["channel_matrix.json"] = json.dumps(channel_matrix_to_json(spec.w), indent=2)


def run_reduction_check(system: System, rng, out: Outcome):
    basis = system.basis
    spec = system.channel_spec(rng)
    H = system.hamiltonian()
    rho0 = system.unfed_state(H)
    n_obs = system.cfg.raw["checks"]["random_observables"]
    residuals = [expectation_identity_residual(basis, random_hermitian(basis.dim, rng), rho0, spec)
                 for _ in range(n_obs)]
    out.check("identity_residual_max", max(residuals), 1e-10)

    n_cells = system.cfg.raw["checks"]["pvm_cells"]
    _, vecs = np.linalg.eigh(random_hermitian(basis.dim, rng))
    groups = np.array_split(np.arange(basis.dim), min(n_cells, basis.dim))
    pvm = [vecs[:, g] @ vecs[:, g].conj().T for g in groups]
    eff = reduce_effect(basis, pvm, rho0, spec.modes)
    lo, hi = eff.eigenvalue_range()
    out.check("effect_below_zero", max(-lo, 0.0), 1e-10)
    out.check("effect_above_one", max(hi - 1, 0.0), 1e-10)
    out.check("effect_completeness", eff.completeness_defect(), 1e-8)
    ident = [np.eye(basis.dim)]
    trivial = projection_defect(basis, reduce_effect(basis, ident, rho0, spec.modes), ident,
                                rho0, spec.modes)
    out.check("trivial_partition_defect", trivial[0].idempotency, 1e-10)
    cells = projection_defect(basis, eff, pvm, rho0, spec.modes)
    out.scalars["random_pvm_idempotency"] = [c.idempotency for c in cells]
    out.scalars["random_pvm_commutator"] = [c.commutator for c in cells]
    number_cells = eigenprojections(number_operator(basis, spec.modes))
    ncells = projection_defect(basis, reduce_effect(basis, number_cells, rho0, spec.modes),
                               number_cells, rho0, spec.modes)
    out.check("number_pvm_idempotency", max(c.idempotency for c in ncells), 1e-10)


def run_decoherence_sweep(system: System, rng, out: Outcome):
    spec = system.channel_spec(rng)
    grid = system.time_grid()
    couplings = system.cfg.raw["sweep"]["g_MB"]
    peaks = []
    for i, g in enumerate(couplings):
        H = system.hamiltonian(g_mb=g)
        series, free, metrics = _channel_run(system, spec, H, grid, out, tag=f"[{i}]")
        peaks.append(max(m["trace_distance"] for m in metrics))
        out.files[f"series_{i:02d}.csv"] = series_csv(series, metrics, len(spec.modes))
    out.scalars["g_MB"] = list(couplings)
    out.scalars["max_trace_distance"] = peaks
    slopes = []
    pts = [(g, p) for g, p in zip(couplings, peaks) if g > 0 and p > 0]
    for (g1, p1), (g2, p2) in zip(pts, pts[1:]):
        slopes.append(math.log(p2 / p1) / math.log(g2 / g1))
    out.scalars["loglog_slopes"] = slopes
    out.files["sweep.csv"] = csv_text(["g_MB", "max_trace_distance"], zip(couplings, peaks))


def _named_observable(system: System, name: str):
    basis = system.basis
    if name == "N":
        return to_dense(number_operator(basis))
    if name == "NM":
        return to_dense(number_operator(basis, system.channel))
    if name == "H":
        return to_dense(system.hamiltonian())
    if name == "H0":
        return to_dense(assemble_hamiltonian(basis, system.energies))
    parts = name.split(":")
    if parts[0] == "n":
        return to_dense(number_operator(basis, [int(parts[1])]))
    i, j = int(parts[1]), int(parts[2])
    hop = (ladder(basis, i, "create") @ ladder(basis, j, "annihilate")).toarray()
    return hop + hop.conj().T


def run_gibbs_fit(system: System, rng, out: Outcome):
    g = system.cfg.raw["gibbs"]
    names = g["observables"]
    obs = [_named_observable(system, n) for n in names]
    if len(g["targets"]) != len(obs):
        raise InvalidRequest("gibbs: one target per observable required")
    tol = g.get("tol", 1e-8)
    model = fit_gibbs(obs, g["targets"], tol=tol, max_iter=g.get("max_iter", 100),
                      names=tuple(names))
    state, model = gibbs_state(model)
    C = np.real(kubo_matrix(state, obs))
    out.check("constraint_residual", np.max(np.abs(model.residuals)), tol)
    out.check("covariance_asymmetry", np.max(np.abs(C - C.T)), 1e-10)
    out.check("covariance_negativity", max(-np.linalg.eigvalsh(0.5 * (C + C.T))[0], 0.0), 1e-10)
    out.scalars.update(entropy=von_neumann_entropy(state), iterations=model.iterations,
                       zeta0=model.zeta0)
    out.files["gibbs_model.json"] = json.dumps(_clean(model.to_json()), indent=2)


def run_feeding(system: System, rng, out: Outcome):
    f = system.cfg.raw["feeding"]
    H = system.hamiltonian()
    cache = PropagatorCache.from_hamiltonian(H)
    cache.check()
    kernel = np.asarray(f["kernel"], dtype=float)
    src = build_source_ops(cache, system.basis, system.channel, kernel, f["window"],
                           f["samples"], f.get("t1", 0.0))
    rho_s = system.unfed_state(H)
    sigma, w = feeding_matrix(src, rho_s, system.basis)
    out.scalars["sigma_trace"] = float(np.trace(sigma).real)
    out.check("sigma_negativity", max(-np.linalg.eigvalsh(sigma)[0], 0.0), 1e-12)
    feed = {"sigma": channel_matrix_to_json(sigma),
            "w_t0": None if w is None else channel_matrix_to_json(w)}
    out.files["feeding.json"] = json.dumps(feed, indent=2)
    if w is None:
        out.scalars["empty_feed"] = True
        return
    out.scalars["empty_feed"] = False
    spec = system.channel_spec(rng, w=w)
    grid = system.time_grid()
    series, free, metrics = _channel_run(system, spec, H, grid, out)
    out.scalars["max_trace_distance"] = max(m["trace_distance"] for m in metrics)
    out.files["series.csv"] = series_csv(series, metrics, len(spec.modes))


EXPERIMENT_RUNNERS = {
    "modes": run_modes,
    "free-channel": run_free_channel,
    "reduction-check": run_reduction_check,
    "decoherence-sweep": run_decoherence_sweep,
    "gibbs-fit": run_gibbs_fit,
    "feeding": run_feeding,
}


def run(cfg: ExperimentConfig, out_dir, seed: int | None = None) -> dict:
    """Run the configured experiment and write its files; returns the summary."""
    seed = cfg.raw["seed"] if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(seed))
    system = System(cfg)
    out = Outcome()
    EXPERIMENT_RUNNERS[cfg.experiment](system, rng, out)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(out.files):
        (out_dir / name).write_text(out.files[name])
    summary = {
        "artifact_version": __version__,
        "config_hash": cfg.digest(),
        "experiment": cfg.experiment,
        "seed": seed,
        "rng": RNG_NAME,
        "scalars": _clean(out.scalars),
        "checks": _clean(out.checks),
        "all_checks_pass": all(c["pass"] for c in out.checks),
        "files": sorted(out.files),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
