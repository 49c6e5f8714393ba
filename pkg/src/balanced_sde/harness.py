"""Coupled-path integration, reference solutions, convergence and moment
studies.

The unit of work is a fixed-size chunk of path indices: one batch of fine
Wiener grids, the reference on them, and every scheme at every coarse level on
the same grids.  Chunk boundaries depend only on the path count, never on the
number of worker threads, and all cross-chunk sums go through ``math.fsum``,
so reported numbers do not depend on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .brownian import WienerGrid, auxiliary_generator, coarse_increments, double_ito_all, generate_paths
from .core import (
    Commutativity,
    InsufficientResolutionError,
    SchemeKind,
    SchemeSpec,
    SdeSystem,
    SimConfig,
    StudyError,
    Trajectory,
    divergence_mask,
    validate,
)
from .schemes import StepInputs, stepper

CHUNK_SIZE = 500
SEGMENT = 1024
UNSTABLE_FRACTION = 0.01
LEVEL_GAP = 4


# ----------------------------------------------------------------------------
# integration


def _broadcast_x0(x0, grid: WienerGrid, d: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    batch = grid.increments.shape[:-2]
    if x0.shape[-1:] != (d,):
        raise ValueError(f"initial state must have trailing length {d}, got shape {x0.shape}")
    return np.array(np.broadcast_to(x0, batch + (d,)), dtype=float)


def propagate(
    system: SdeSystem,
    scheme: SchemeSpec,
    grid: WienerGrid,
    coarse_level: int,
    x0,
    observer: Optional[Callable[[int, np.ndarray], None]] = None,
    allow_fine_ito: bool = False,
):
    """Run ``scheme`` over ``grid`` at ``coarse_level``.

    Returns ``(terminal_state, divergence_step)``; ``divergence_step`` is -1
    for paths that never tripped the divergence guard.  ``observer(k, x)`` is
    called with the state at every grid node, including ``k = 0``.
    """
    validate(system, scheme)
    if system.dim_noise != grid.m:
        raise ValueError(f"system has {system.dim_noise} noises but grid has {grid.m}")
    if not 0 <= coarse_level <= grid.level:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    needs_ito = scheme.kind.needs_ito
    if needs_ito and coarse_level == grid.level and grid.m > 1 and not allow_fine_ito:
        raise InsufficientResolutionError(
            f"{scheme.name} at the fine level {grid.level} needs Levy areas the grid cannot resolve"
        )

    step = stepper(scheme)
    h = grid.step_size(coarse_level)
    sqrt_h = math.sqrt(h)
    K = 2**coarse_level
    x = _broadcast_x0(x0, grid, system.dim_state)
    div_step = np.full(x.shape[:-1], -1, dtype=np.int64)
    bad = divergence_mask(x)
    if bad.any():
        div_step[bad] = 0
        x[bad] = np.nan
    if observer is not None:
        observer(0, x)

    dw_all = coarse_increments(grid, coarse_level)
    with np.errstate(all="ignore"):
        for start in range(0, K, SEGMENT):
            stop = min(K, start + SEGMENT)
            xi_seg = dw_all[..., start:stop, :] / sqrt_h
            ito_seg = double_ito_all(grid, coarse_level, True, start, stop) if needs_ito else None
            for j in range(stop - start):
                k = start + j
                inp = StepInputs(
                    t=grid.t0 + k * h,
                    x=x,
                    h=h,
                    xi=xi_seg[..., j, :],
                    ito=None if ito_seg is None else ito_seg[..., j, :, :],
                )
                x = step(system, inp)
                bad = divergence_mask(x)
                if bad.any():
                    fresh = bad & (div_step < 0)
                    div_step[fresh] = k + 1
                    x = np.where(bad[..., None], np.nan, x)
                if observer is not None:
                    observer(k + 1, x)
    return x, div_step


def _trajectory(times, states, div_step, **kw) -> Trajectory:
    if div_step.ndim == 0:
        step = int(div_step)
        return Trajectory(times, states, step >= 0, step if step >= 0 else None, **kw)
    return Trajectory(times, states, div_step >= 0, div_step, **kw)


def integrate(system: SdeSystem, scheme: SchemeSpec, grid: WienerGrid, coarse_level: int, x0) -> Trajectory:
    """Trajectory of ``2**coarse_level + 1`` states driven by ``grid``."""
    K = 2**coarse_level if 0 <= coarse_level <= grid.level else None
    if K is None:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    batch = grid.increments.shape[:-2]
    states = np.empty((K + 1,) + batch + (system.dim_state,))

    def record(k, x):
        states[k] = x

    _, div_step = propagate(system, scheme, grid, coarse_level, x0, observer=record)
    return _trajectory(grid.times(coarse_level), states, div_step, method=scheme.name)


def reference_scheme(system: SdeSystem) -> tuple[Optional[SchemeSpec], Optional[str]]:
    """Scheme used for the reference solution and an optional warning.

    ``(None, None)`` means the exact solution is used.
    """
    if system.has_exact_solution:
        return None, None
    if system.levy is not None:
        if system.commutative is Commutativity.YES:
            return SchemeSpec(SchemeKind.BALANCED_MILSTEIN_COMMUTATIVE), None
        return SchemeSpec(SchemeKind.BALANCED_MILSTEIN), None
    return (
        SchemeSpec(SchemeKind.BALANCED_EULER),
        f"system {system.label!r} has no Milstein coefficients; reference is balanced Euler "
        "at the fine level, so observed orders above 1/2 are not reliable",
    )


def _exact_states(system, grid, x0, level):
    w = grid.wiener_values()
    stride = 2 ** (grid.level - level)
    w = w[..., ::stride, :]
    times = grid.times(level)
    x0 = _broadcast_x0(x0, grid, system.dim_state)
    s = (times - grid.t0).reshape((-1,) + (1,) * (w.ndim - 1))
    w = np.moveaxis(w, -2, 0)
    return np.asarray(system.exact_solution(s, x0, w))


def _reference_terminal(system, grid, x0):
    spec, _ = reference_scheme(system)
    if spec is None:
        w = coarse_increments(grid, 0)[..., 0, :]
        x0 = _broadcast_x0(x0, grid, system.dim_state)
        xT = np.asarray(system.exact_solution(grid.T - grid.t0, x0, w))
        div = np.where(divergence_mask(xT), 0, -1)
        return xT, div
    return propagate(system, spec, grid, grid.level, x0, allow_fine_ito=True)


def reference_solution(system: SdeSystem, grid: WienerGrid, x0, level: Optional[int] = None) -> Trajectory:
    """Stand-in for the true solution on ``grid`` at ``level`` (default: the fine level).

    Uses the exact pathwise solution when the system has one; otherwise the
    balanced Milstein scheme (commutative form when the noise commutes), or
    balanced Euler with a recorded warning when no Milstein coefficients exist.
    """
    level = grid.level if level is None else level
    spec, warning = reference_scheme(system)
    if spec is None:
        states = _exact_states(system, grid, x0, level)
        bad = divergence_mask(states).any(axis=0)
        div_step = np.where(bad, 0, -1)
        return _trajectory(grid.times(level), states, np.asarray(div_step), method="exact")
    batch = grid.increments.shape[:-2]
    states = np.empty((2**level + 1,) + batch + (system.dim_state,))

    def record(k, x):
        states[k] = x

    _, div_step = propagate(system, spec, grid, level, x0, observer=record, allow_fine_ito=True)
    return _trajectory(
        grid.times(level), states, div_step, method=spec.name, warnings=(warning,) if warning else ()
    )


# ----------------------------------------------------------------------------
# order fitting


def fit_order(h: Sequence[float], err: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log2(err) against log2(h), and its standard error."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.shape != err.shape or h.ndim != 1:
        raise ValueError("h and err must be 1-d sequences of equal length")
    if len(h) < 3:
        raise ValueError("need >= 3 levels to fit an order")
    if np.any(~(h > 0)):
        raise ValueError("step sizes must be positive")
    if np.any(~(err > 0)) or not np.all(np.isfinite(err)):
        raise StudyError("errors must be positive and finite (a level may have fully diverged)")
    x = np.log2(h)
    y = np.log2(err)
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    slope = float(np.dot(xc, y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    dof = len(h) - 2
    stderr = math.sqrt(float(np.dot(resid, resid)) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


# ----------------------------------------------------------------------------
# reports


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class ConvergenceReport:
    problem: str
    scheme: str
    levels: list
    h: list
    rms_error: list
    rms_stderr: list
    diverged_fraction: list
    fitted_order: Optional[float]
    slope_stderr: Optional[float]
    M: int
    seed: int
    fine_level: int
    reference: str
    unstable: bool = False
    warnings: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "params": self.params,
            "scheme": self.scheme,
            "levels": list(self.levels),
            "h": [_clean(v) for v in self.h],
            "rms_error": [_clean(v) for v in self.rms_error],
            "rms_stderr": [_clean(v) for v in self.rms_stderr],
            "diverged_fraction": list(self.diverged_fraction),
            "fitted_order": _clean(self.fitted_order),
            "slope_stderr": _clean(self.slope_stderr),
            "M": self.M,
            "seed": self.seed,
            "fine_level": self.fine_level,
            "reference": self.reference,
            "unstable": self.unstable,
            "warnings": list(self.warnings),
            "version": __version__,
        }

    def rows(self):
        return list(zip(self.levels, self.h, self.rms_error, self.rms_stderr, self.diverged_fraction))

    def to_text(self) -> str:
        lines = [f"{self.problem} / {self.scheme}  (M={self.M}, seed={self.seed}, reference={self.reference})"]
        lines.append(f"{'level':>5} {'h':>12} {'rms_error':>14} {'stderr':>12} {'diverged':>9}")
        for level, h, rms, se, frac in self.rows():
            lines.append(f"{level:>5d} {h:>12.6g} {rms:>14.6e} {se:>12.3e} {frac:>9.4f}")
        if self.fitted_order is None:
            lines.append("fitted order: n/a")
        else:
            lines.append(f"fitted order: {self.fitted_order:.4f} +/- {self.slope_stderr:.4f}")
        if self.unstable:
            lines.append("verdict: UNSTABLE (divergence above 1% at some level)")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


@dataclass
class MomentLevel:
    level: int
    h: float
    times: list
    estimates: dict  # p -> list over time
    stderr: dict
    counts: list
    max_over_time: dict
    diverged_fraction: float

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "h": self.h,
            "times": list(self.times),
            "estimates": {_pkey(p): [_clean(v) for v in vals] for p, vals in self.estimates.items()},
            "stderr": {_pkey(p): [_clean(v) for v in vals] for p, vals in self.stderr.items()},
            "counts": list(self.counts),
            "max_over_time": {_pkey(p): _clean(v) for p, v in self.max_over_time.items()},
            "diverged_fraction": self.diverged_fraction,
        }


def _pkey(p) -> str:
    return repr(float(p))


@dataclass
class MomentReport:
    problem: str
    scheme: str
    p_list: list
    levels: list  # of MomentLevel
    M: int
    seed: int
    warnings: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def level(self, level: int) -> MomentLevel:
        for entry in self.levels:
            if entry.level == level:
                return entry
        raise KeyError(level)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "params": self.params,
            "scheme": self.scheme,
            "p": [float(p) for p in self.p_list],
            "levels": [entry.to_dict() for entry in self.levels],
            "M": self.M,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "version": __version__,
        }

    def to_text(self) -> str:
        lines = [f"{self.problem} / {self.scheme}  (M={self.M}, seed={self.seed})"]
        head = " ".join(f"{'max E|X|^' + format(2 * p, 'g'):>16}" for p in self.p_list)
        lines.append(f"{'level':>5} {'h':>12} {head} {'diverged':>9}")
        for entry in self.levels:
            vals = " ".join(f"{entry.max_over_time[p]:>16.6g}" for p in self.p_list)
            lines.append(f"{entry.level:>5d} {entry.h:>12.6g} {vals} {entry.diverged_fraction:>9.4f}")
        return "\n".join(lines)


# ----------------------------------------------------------------------------
# studies


def _chunks(num_paths: int, chunk_size: int):
    return [range(a, min(num_paths, a + chunk_size)) for a in range(0, num_paths, chunk_size)]


def _initial_states(config: SimConfig, indices, d: int) -> np.ndarray:
    init = config.initial_state
    if callable(init):
        rows = [np.asarray(init(auxiliary_generator(config.seed, i)), dtype=float) for i in indices]
        x0 = np.stack(rows)
    else:
        x0 = np.broadcast_to(np.asarray(init, dtype=float), (len(indices), d))
    if x0.shape != (len(indices), d):
        raise ValueError(f"initial states must have length {d}")
    return np.array(x0)


def _run_chunks(fn, chunks, threads: int):
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _check_levels(config: SimConfig):
    levels = config.coarse_levels
    if len(levels) < 3:
        raise ValueError("need >= 3 levels")
    if max(levels) > config.fine_levels - LEVEL_GAP:
        raise ValueError(
            f"fine level {config.fine_levels} must exceed the largest coarse level "
            f"{max(levels)} by at least {LEVEL_GAP}"
        )


def compare_study(
    system: SdeSystem,
    schemes: Sequence[SchemeSpec],
    config: SimConfig,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> list[ConvergenceReport]:
    """Convergence studies of several schemes on shared Wiener grids and a shared reference."""
    schemes = list(schemes)
    if not schemes:
        raise ValueError("no schemes given")
    _check_levels(config)
    for scheme in schemes:
        validate(system, scheme)
    levels = config.coarse_levels
    ref_spec, ref_warning = reference_scheme(system)

    def work(indices):
        grid = generate_paths(config.seed, indices, system.dim_noise, config.t0, config.T, config.fine_levels)
        x0 = _initial_states(config, indices, system.dim_state)
        ref, ref_div = _reference_terminal(system, grid, x0)
        out = np.empty((len(schemes), len(levels), len(indices)))
        for a, scheme in enumerate(schemes):
            for b, level in enumerate(levels):
                xT, div = propagate(system, scheme, grid, level, x0)
                sq = np.sum((xT - ref) ** 2, axis=-1)
                sq[(div >= 0) | (ref_div >= 0)] = np.nan
                out[a, b] = sq
        return out

    parts = _run_chunks(work, _chunks(config.num_paths, chunk_size), threads)
    sq_all = np.concatenate(parts, axis=-1)

    reports = []
    hs = [config.step_size(level) for level in levels]
    for a, scheme in enumerate(schemes):
        rms, se, frac = [], [], []
        for b in range(len(levels)):
            vals = sq_all[a, b]
            ok = vals[~np.isnan(vals)]
            frac.append(1.0 - len(ok) / config.num_paths)
            if len(ok) == 0:
                rms.append(math.nan)
                se.append(math.nan)
                continue
            mean = math.fsum(ok) / len(ok)
            var = math.fsum((ok - mean) ** 2) / (len(ok) - 1) if len(ok) > 1 else 0.0
            r = math.sqrt(mean)
            rms.append(r)
            se.append(math.sqrt(var / len(ok)) / (2 * r) if r > 0 else 0.0)
        if all(f >= 1.0 for f in frac):
            raise StudyError(
                f"{scheme.name} diverged on every path at every level "
                f"(levels {list(levels)}, M={config.num_paths})"
            )
        unstable = any(f > UNSTABLE_FRACTION for f in frac)
        finite = [(hh, e) for hh, e in zip(hs, rms) if math.isfinite(e) and e > 0]
        warnings = [ref_warning] if ref_warning else []
        order = stderr = None
        if len(finite) >= 3 and not unstable:
            order, stderr = fit_order([p[0] for p in finite], [p[1] for p in finite])
        elif unstable:
            warnings.append("divergence above 1% at some level; no order reported")
        reports.append(
            ConvergenceReport(
                problem=system.label,
                scheme=scheme.name,
                levels=list(levels),
                h=hs,
                rms_error=rms,
                rms_stderr=se,
                diverged_fraction=frac,
                fitted_order=order,
                slope_stderr=stderr,
                M=config.num_paths,
                seed=config.seed,
                fine_level=config.fine_levels,
                reference="exact" if ref_spec is None else ref_spec.name,
                unstable=unstable,
                warnings=warnings,
                params=dict(system.params),
            )
        )
    return reports


def convergence_study(
    system: SdeSystem, scheme: SchemeSpec, config: SimConfig, threads: int = 1, chunk_size: int = CHUNK_SIZE
) -> ConvergenceReport:
    """Mean-square terminal error of ``scheme`` at each coarse level against the
    reference on the same Wiener path, with the fitted log-log order."""
    return compare_study(system, [scheme], config, threads=threads, chunk_size=chunk_size)[0]


def moment_study(
    system: SdeSystem,
    scheme: SchemeSpec,
    config: SimConfig,
    p_list: Sequence[float],
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> MomentReport:
    """Sample moments E|X_k|^{2p} at every node of every coarse level.

    Paths are excluded from a node's estimate once they have diverged; the
    fraction of diverged paths is reported per level.
    """
    p_list = [float(p) for p in p_list]
    if not p_list:
        raise ValueError("p_list is empty")
    if any(p < 1 for p in p_list):
        raise ValueError("moment indices p must be >= 1")
    validate(system, scheme)
    if scheme.kind.needs_ito and system.dim_noise > 1 and max(config.coarse_levels) >= config.fine_levels:
        raise InsufficientResolutionError("general Milstein moments need coarse levels below the fine level")
    levels = config.coarse_levels

    def work(indices):
        grid = generate_paths(config.seed, indices, system.dim_noise, config.t0, config.T, config.fine_levels)
        x0 = _initial_states(config, indices, system.dim_state)
        out = []
        for level in levels:
            n_nodes = 2**level + 1
            sums = np.zeros((len(p_list), 2, n_nodes))
            counts = np.zeros(n_nodes, dtype=np.int64)

            def observe(k, x):
                norm2 = np.sum(x * x, axis=-1)
                ok = ~np.isnan(norm2)
                counts[k] = int(ok.sum())
                v = norm2[ok]
                for a, p in enumerate(p_list):
                    vp = v**p
                    sums[a, 0, k] = vp.sum()
                    sums[a, 1, k] = (vp * vp).sum()

            _, div = propagate(system, scheme, grid, level, x0, observer=observe)
            out.append((sums, counts, int((div >= 0).sum())))
        return out

    parts = _run_chunks(work, _chunks(config.num_paths, chunk_size), threads)
    entries = []
    for b, level in enumerate(levels):
        n_nodes = 2**level + 1
        stacked = np.stack([part[b][0] for part in parts])  # (chunks, p, 2, nodes)
        counts = np.sum([part[b][1] for part in parts], axis=0)
        n_div = sum(part[b][2] for part in parts)
        estimates, stderrs, maxima = {}, {}, {}
        for a, p in enumerate(p_list):
            est, err = [], []
            for k in range(n_nodes):
                n = int(counts[k])
                if n == 0:
                    est.append(math.nan)
                    err.append(math.nan)
                    continue
                s1 = math.fsum(stacked[:, a, 0, k])
                s2 = math.fsum(stacked[:, a, 1, k])
                mean = s1 / n
                var = max(s2 / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
                est.append(mean)
                err.append(math.sqrt(var / n))
            estimates[p] = est
            stderrs[p] = err
            finite = [v for v in est if math.isfinite(v)]
            maxima[p] = max(finite) if finite else math.nan
        entries.append(
            MomentLevel(
                level=level,
                h=config.step_size(level),
                times=[float(t) for t in config.t0 + (config.T - config.t0) * np.arange(n_nodes) / 2**level],
                estimates=estimates,
                stderr=stderrs,
                counts=[int(c) for c in counts],
                max_over_time=maxima,
                diverged_fraction=n_div / config.num_paths,
            )
        )
    return MomentReport(
        problem=system.label,
        scheme=scheme.name,
        p_list=p_list,
        levels=entries,
        M=config.num_paths,
        seed=config.seed,
        params=dict(system.params),
    )
