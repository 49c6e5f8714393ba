"""Shared domain types: SDE systems, scheme identifiers, run configuration
and trajectories.

Coefficient callables are evaluated on batches of states.  A state array has
shape ``(..., d)``; leading axes index independent paths.  The conventions are

``drift(t, x)``      -> ``(..., d)``          the drift a(t, x)
``diffusion(t, x)``  -> ``(..., d, m)``       column r is sigma_r(t, x)
``levy(t, x)``       -> ``(..., d, m, m)``    entry ``[..., :, i, r]`` is
                                              Lambda_i sigma_r = (sigma_i . grad) sigma_r
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

#: A state is declared diverged once any component exceeds this in magnitude.
DIVERGENCE_THRESHOLD = 1e150


class CapabilityError(ValueError):
    """A scheme needs something the SDE system does not provide."""


class InsufficientResolutionError(ValueError):
    """The Wiener grid is too coarse for the requested quantity."""


class StudyError(RuntimeError):
    """A study could not produce a meaningful result."""


class Commutativity(enum.Enum):
    YES = "yes"
    NO = "no"
    UNKNOWN = "unknown"


class SchemeKind(enum.Enum):
    BALANCED_EULER = "balanced-euler"
    BALANCED_MILSTEIN = "balanced-milstein"
    BALANCED_MILSTEIN_COMMUTATIVE = "balanced-milstein-commutative"
    FULLY_TAMED_EULER = "fully-tamed-euler"
    TREZHANG_TAMED = "trezhang-tamed"
    SABANIS_TAMED = "sabanis-tamed"
    CLASSICAL_EULER = "classical-euler"
    CLASSICAL_MILSTEIN = "classical-milstein"
    CLASSICAL_MILSTEIN_COMMUTATIVE = "classical-milstein-commutative"

    @property
    def is_milstein(self) -> bool:
        return self in _MILSTEIN_KINDS

    @property
    def is_commutative(self) -> bool:
        return self in (
            SchemeKind.BALANCED_MILSTEIN_COMMUTATIVE,
            SchemeKind.CLASSICAL_MILSTEIN_COMMUTATIVE,
        )

    @property
    def needs_ito(self) -> bool:
        """True for the general Milstein forms, which consume double Ito integrals."""
        return self.is_milstein and not self.is_commutative

    @property
    def is_balanced(self) -> bool:
        return self.value.startswith("balanced")


_MILSTEIN_KINDS = frozenset(
    {
        SchemeKind.BALANCED_MILSTEIN,
        SchemeKind.BALANCED_MILSTEIN_COMMUTATIVE,
        SchemeKind.CLASSICAL_MILSTEIN,
        SchemeKind.CLASSICAL_MILSTEIN_COMMUTATIVE,
    }
)


@dataclass(frozen=True)
class SdeSystem:
    """An Ito SDE  dX = a(t,X) dt + sum_r sigma_r(t,X) dw_r  in R^d driven by m
    Wiener processes.

    ``kappa`` and ``kappa_prime`` are the declared polynomial growth exponents
    of the drift and of the Milstein coefficients; they are metadata only.
    ``exact_solution(s, x0, w)``, when given, evaluates the pathwise solution
    after elapsed time ``s = t - t0`` from the Wiener displacement
    ``w = W(t) - W(t0)`` (shape ``(..., m)``).
    """

    dim_state: int
    dim_noise: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    levy: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    kappa: float = 1.0
    kappa_prime: Optional[float] = None
    commutative: Commutativity = Commutativity.UNKNOWN
    label: str = "sde"
    exact_solution: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("dimensions must be positive")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.kappa_prime is not None and self.kappa_prime < 0:
            raise ValueError("kappa_prime must be >= 0")
        if self.dim_noise == 1:
            # a single noise always commutes
            object.__setattr__(self, "commutative", Commutativity.YES)

    def sigma(self, t, x, r):
        """The r-th diffusion vector sigma_r(t, x), with r counted from 1."""
        if not 1 <= r <= self.dim_noise:
            raise IndexError(f"noise index {r} outside 1..{self.dim_noise}")
        return self.diffusion(t, np.asarray(x, dtype=float))[..., r - 1]

    def levy_coefficient(self, t, x, i, r):
        """Lambda_i sigma_r(t, x), with i and r counted from 1."""
        if self.levy is None:
            raise CapabilityError(f"system {self.label!r} has no Milstein coefficients")
        for idx in (i, r):
            if not 1 <= idx <= self.dim_noise:
                raise IndexError(f"noise index {idx} outside 1..{self.dim_noise}")
        return self.levy(t, np.asarray(x, dtype=float))[..., i - 1, r - 1]

    @property
    def has_exact_solution(self) -> bool:
        return self.exact_solution is not None


@dataclass(frozen=True)
class SchemeSpec:
    """Which stepper to run.

    ``beta`` is only read by ``sabanis-tamed``.  ``rational_drift`` swaps the
    sine taming of the drift in the balanced schemes for a/(1 + h|a|).
    """

    kind: SchemeKind
    beta: float = 0.5
    rational_drift: bool = False

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def name(self) -> str:
        return self.kind.value


def validate(system: SdeSystem, scheme: SchemeSpec) -> None:
    """Raise CapabilityError when ``scheme`` cannot run on ``system``."""
    kind = scheme.kind
    if kind.is_milstein and system.levy is None:
        raise CapabilityError(
            f"{kind.value} needs Milstein coefficients but system {system.label!r} has none"
        )
    if kind.is_commutative and system.commutative is not Commutativity.YES:
        raise CapabilityError(
            f"{kind.value} needs commutative noise; system {system.label!r} has "
            f"commutative={system.commutative.value}"
        )


InitialState = Union[Sequence[float], np.ndarray, Callable[[np.random.Generator], np.ndarray]]


@dataclass(frozen=True)
class SimConfig:
    """Time interval, dyadic levels, sample size and seed of a study.

    ``initial_state`` is either a fixed vector or a callable drawing one state
    from a generator keyed on (seed, path index).
    """

    t0: float
    T: float
    initial_state: InitialState
    fine_levels: int
    coarse_levels: tuple
    num_paths: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "coarse_levels", tuple(sorted(set(int(l) for l in self.coarse_levels))))
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.fine_levels < 1:
            raise ValueError("fine level must be >= 1")
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for level in self.coarse_levels:
            if not 0 <= level <= self.fine_levels:
                raise ValueError(f"coarse level {level} outside 0..{self.fine_levels}")

    def step_size(self, level: int) -> float:
        return (self.T - self.t0) / 2**level


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform grid.

    ``states`` has shape ``(N + 1, ..., d)``; for a batch of paths the middle
    axes index paths and ``diverged``/``divergence_step`` are arrays.  States at
    and after ``divergence_step`` are NaN.  ``divergence_step`` is -1 for paths
    that stayed finite.
    """

    times: np.ndarray
    states: np.ndarray
    diverged: Union[bool, np.ndarray]
    divergence_step: Union[int, None, np.ndarray]
    method: str = ""
    warnings: tuple = ()

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def divergence_mask(x: np.ndarray) -> np.ndarray:
    """Paths whose state is non-finite or beyond the divergence threshold."""
    with np.errstate(invalid="ignore"):
        return ~(np.abs(x) <= DIVERGENCE_THRESHOLD).all(axis=-1)


def check_commutativity(system: SdeSystem, sample_points, tol: float = 1e-12) -> dict:
    """Largest sup-norm defect |Lambda_i sigma_r - Lambda_r sigma_i| over the sample points."""
    if system.levy is None:
        raise CapabilityError(f"system {system.label!r} has no Milstein coefficients")
    points = list(sample_points)
    if not points:
        raise ValueError("no sample points")
    max_defect = 0.0
    for t, x in points:
        lam = np.asarray(system.levy(t, np.asarray(x, dtype=float)), dtype=float)
        defect = lam - np.swapaxes(lam, -1, -2)
        max_defect = max(max_defect, float(np.max(np.abs(defect))))
    return {"commutative": max_defect <= tol, "max_defect": max_defect}
