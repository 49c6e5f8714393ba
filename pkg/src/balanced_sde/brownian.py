"""Fine-grid Wiener paths and the coupled coarse-level quantities derived from
them: increments, normalized variates and double Ito integrals.

Every path is drawn from a Philox counter-based stream keyed on
``(seed, path_index)``; the counter walks the fine grid in (step, component)
order.  Paths are therefore reproducible and independent of the order or the
worker in which they are generated.  Coarse increments are built by pairwise
summation, so the level-l increments are exactly the sums of their two
level-(l+1) children.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .core import InsufficientResolutionError


@dataclass(frozen=True)
class WienerGrid:
    """Fine Wiener increments on ``2**level`` uniform steps of ``[t0, T]``.

    ``increments`` has shape ``(..., 2**level, m)``.  A single path has no
    leading axes; a batch carries one leading axis with ``path_index`` holding
    the matching tuple of indices.
    """

    m: int
    t0: float
    T: float
    level: int
    increments: np.ndarray
    seed: int = 0
    path_index: Union[int, tuple] = 0

    @property
    def n_steps(self) -> int:
        return 2**self.level

    @property
    def h_fine(self) -> float:
        return (self.T - self.t0) / 2**self.level

    def step_size(self, coarse_level: int) -> float:
        return (self.T - self.t0) / 2**coarse_level

    def times(self, coarse_level: int | None = None) -> np.ndarray:
        level = self.level if coarse_level is None else coarse_level
        return self.t0 + (self.T - self.t0) * np.arange(2**level + 1) / 2**level

    def wiener_values(self) -> np.ndarray:
        """W(tau_j) - W(t0) at every fine node, shape ``(..., 2**level + 1, m)``."""
        zero = np.zeros(self.increments.shape[:-2] + (1, self.m))
        return np.concatenate([zero, np.cumsum(self.increments, axis=-2)], axis=-2)


def _key(seed: int, path_index: int) -> int:
    if not 0 <= seed < 2**64 or not 0 <= path_index < 2**64:
        raise ValueError("seed and path_index must be 64-bit unsigned integers")
    return (int(path_index) << 64) | int(seed)


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Generator for the Wiener increments of one path."""
    return np.random.Generator(np.random.Philox(key=_key(seed, path_index)))


def auxiliary_generator(seed: int, path_index: int) -> np.random.Generator:
    """A second stream for the same key, far away from the increment stream
    (used to sample random initial states)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, path_index)).jumped())


def _check_interval(m, t0, T, level):
    if level < 0:
        raise ValueError("level must be >= 0")
    if not T > t0:
        raise ValueError("need T > t0")
    if m < 1:
        raise ValueError("m must be >= 1")


def _draw(seed, path_index, m, h, n):
    z = path_generator(seed, path_index).standard_normal(n * m)
    return z.reshape(n, m) * np.sqrt(h)


def generate_path(seed: int, path_index: int, m: int, t0: float, T: float, level: int) -> WienerGrid:
    """One Wiener path with i.i.d. Normal(0, h_fine) increments."""
    _check_interval(m, t0, T, level)
    n = 2**level
    h = (T - t0) / n
    return WienerGrid(m, float(t0), float(T), level, _draw(seed, path_index, m, h, n), seed, int(path_index))


def generate_paths(seed: int, path_indices: Iterable[int], m: int, t0: float, T: float, level: int) -> WienerGrid:
    """A batch of paths; row ``j`` is bit-identical to ``generate_path(seed, path_indices[j], ...)``."""
    _check_interval(m, t0, T, level)
    indices = tuple(int(i) for i in path_indices)
    n = 2**level
    h = (T - t0) / n
    incs = np.empty((len(indices), n, m))
    for row, idx in enumerate(indices):
        incs[row] = _draw(seed, idx, m, h, n)
    return WienerGrid(m, float(t0), float(T), level, incs, seed, indices)


def from_increments(increments, t0: float = 0.0, T: float = 1.0) -> WienerGrid:
    """Wrap a given array of fine increments (shape ``(..., 2**L, m)``) as a grid."""
    inc = np.asarray(increments, dtype=float)
    n, m = inc.shape[-2:]
    level = int(round(np.log2(n)))
    if 2**level != n:
        raise ValueError(f"number of fine steps must be a power of two, got {n}")
    return WienerGrid(m, float(t0), float(T), level, inc)


def coarse_increments(grid: WienerGrid, coarse_level: int) -> np.ndarray:
    """All increments at ``coarse_level``, shape ``(..., 2**coarse_level, m)``."""
    if not 0 <= coarse_level <= grid.level:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    dw = grid.increments
    for _ in range(grid.level - coarse_level):
        dw = dw[..., 0::2, :] + dw[..., 1::2, :]
    return dw


def coarse_increment(grid: WienerGrid, coarse_level: int, k: int):
    """``(delta_w, xi)`` for coarse step ``k``, with ``xi = delta_w / sqrt(h)``."""
    if not 0 <= coarse_level <= grid.level:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    if not 0 <= k < 2**coarse_level:
        raise IndexError(f"step {k} outside 0..{2**coarse_level - 1}")
    width = 2 ** (grid.level - coarse_level)
    dw = grid.increments[..., k * width:(k + 1) * width, :]
    while dw.shape[-2] > 1:
        dw = dw[..., 0::2, :] + dw[..., 1::2, :]
    dw = dw[..., 0, :]
    return dw, dw / np.sqrt(grid.step_size(coarse_level))


def _ito_blocks(fine: np.ndarray, dw: np.ndarray, h: float) -> np.ndarray:
    # fine: (..., K, n, m) sub-increments, dw: (..., K, m) coarse increments
    zero = np.zeros(fine.shape[:-2] + (1, fine.shape[-1]))
    running = np.concatenate([zero, np.cumsum(fine[..., :-1, :], axis=-2)], axis=-2)
    ito = np.einsum("...ji,...jr->...ir", running, fine)
    diag = 0.5 * (dw * dw - h)
    m = fine.shape[-1]
    ito[..., np.arange(m), np.arange(m)] = diag
    return ito


def double_ito_all(grid: WienerGrid, coarse_level: int, allow_fine: bool = False,
                   start: int = 0, stop: int | None = None) -> np.ndarray:
    """Double Ito integrals I[i, r] for coarse steps ``start..stop-1``.

    Shape ``(..., stop - start, m, m)``.  Off-diagonal entries are left-point
    sums over the fine sub-steps; the diagonal is exact.  At the fine level
    itself the off-diagonal sums are empty (zero); that is only accepted when
    ``allow_fine`` is set or ``m == 1``.
    """
    if not 0 <= coarse_level <= grid.level:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    if coarse_level == grid.level and grid.m > 1 and not allow_fine:
        raise InsufficientResolutionError(
            "off-diagonal double Ito integrals need at least two fine steps per coarse step"
        )
    K = 2**coarse_level
    stop = K if stop is None else stop
    if not 0 <= start <= stop <= K:
        raise IndexError(f"step range {start}..{stop} outside 0..{K}")
    n = 2 ** (grid.level - coarse_level)
    lead = grid.increments.shape[:-2]
    fine = grid.increments[..., start * n:stop * n, :].reshape(lead + (stop - start, n, grid.m))
    dw = fine
    while dw.shape[-2] > 1:
        dw = dw[..., 0::2, :] + dw[..., 1::2, :]
    return _ito_blocks(fine, dw[..., 0, :], grid.step_size(coarse_level))


def double_ito(grid: WienerGrid, coarse_level: int, k: int) -> np.ndarray:
    """The m x m matrix of double Ito integrals over coarse step ``k``."""
    if not 0 <= coarse_level <= grid.level:
        raise IndexError(f"coarse level {coarse_level} outside 0..{grid.level}")
    if not 0 <= k < 2**coarse_level:
        raise IndexError(f"step {k} outside 0..{2**coarse_level - 1}")
    if coarse_level == grid.level and grid.m > 1:
        raise InsufficientResolutionError(
            "off-diagonal double Ito integrals need at least two fine steps per coarse step"
        )
    n = 2 ** (grid.level - coarse_level)
    fine = grid.increments[..., k * n:(k + 1) * n, :]
    dw, _ = coarse_increment(grid, coarse_level, k)
    return _ito_blocks(fine[..., None, :, :], dw[..., None, :], grid.step_size(coarse_level))[..., 0, :, :]


def dump_csv(grid: WienerGrid, path) -> None:
    """Write the fine increments of a single-path grid as (step, component, increment) rows."""
    if grid.increments.ndim != 2:
        raise ValueError("dump_csv takes a single-path grid")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "component", "increment"])
        for j, row in enumerate(grid.increments):
            for i, value in enumerate(row):
                writer.writerow([j, i + 1, repr(float(value))])
