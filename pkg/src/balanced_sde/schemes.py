"""One-step maps of the balanced (sine-tamed) schemes, the rational tamed
schemes they are compared with, and the untamed Euler/Milstein baselines.

All steppers are pure and broadcast over leading path axes: ``x`` has shape
``(..., d)``, ``xi`` has shape ``(..., m)`` and ``ito`` has shape
``(..., m, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import CapabilityError, Commutativity, SchemeKind, SchemeSpec, SdeSystem


@dataclass(frozen=True)
class StepInputs:
    t: float
    x: np.ndarray
    h: float
    xi: np.ndarray
    ito: Optional[np.ndarray] = None


def sine_map(v):
    """Componentwise sine; the taming map of the balanced schemes."""
    return np.sin(v)


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _drift_increment(system, inp):
    return np.asarray(system.drift(inp.t, inp.x)) * inp.h


def _noise_increment(system, inp, diff=None):
    if diff is None:
        diff = system.diffusion(inp.t, inp.x)
    return np.einsum("...dm,...m->...d", diff, inp.xi) * np.sqrt(inp.h)


def _levy(system):
    if system.levy is None:
        raise CapabilityError(f"system {system.label!r} has no Milstein coefficients")
    return system.levy


def _general_correction(system, inp):
    if inp.ito is None:
        raise CapabilityError("the general Milstein step needs double Ito integrals")
    lam = _levy(system)(inp.t, inp.x)
    return np.einsum("...dir,...ir->...d", lam, inp.ito)


def _commutative_correction(system, inp):
    if system.commutative is not Commutativity.YES:
        raise CapabilityError(
            f"system {system.label!r} is not known to have commutative noise "
            f"(commutative={system.commutative.value})"
        )
    lam = _levy(system)(inp.t, inp.x)
    xi = inp.xi
    weights = xi[..., :, None] * xi[..., None, :] - np.eye(xi.shape[-1])
    return 0.5 * inp.h * np.einsum("...dir,...ir->...d", lam, weights)


def _balanced_drift(system, inp, rational):
    ah = _drift_increment(system, inp)
    if rational:
        return ah / (1.0 + _norm(ah))[..., None]
    return sine_map(ah)


def balanced_euler_step(system: SdeSystem, inp: StepInputs, rational_drift: bool = False):
    """x + sin(a h) + sin(sum_r sigma_r xi_r sqrt(h)); each block moves every
    component by at most 1."""
    return inp.x + _balanced_drift(system, inp, rational_drift) + sine_map(_noise_increment(system, inp))


def balanced_milstein_step(system: SdeSystem, inp: StepInputs, rational_drift: bool = False):
    """Balanced Euler plus sin(sum_{i,r} Lambda_i sigma_r I_{i,r})."""
    correction = _general_correction(system, inp)
    return balanced_euler_step(system, inp, rational_drift) + sine_map(correction)


def balanced_milstein_commutative_step(system: SdeSystem, inp: StepInputs, rational_drift: bool = False):
    """Balanced Milstein for commutative noise; the double integrals are
    replaced by (xi_i xi_r - delta_ir) h / 2."""
    correction = _commutative_correction(system, inp)
    return balanced_euler_step(system, inp, rational_drift) + sine_map(correction)


def fully_tamed_euler_step(system: SdeSystem, inp: StepInputs):
    delta = _drift_increment(system, inp) + _noise_increment(system, inp)
    scale = np.maximum(1.0, inp.h * _norm(delta))
    return inp.x + delta / scale[..., None]


def trezhang_tamed_step(system: SdeSystem, inp: StepInputs):
    a = np.asarray(system.drift(inp.t, inp.x))
    diff = system.diffusion(inp.t, inp.x)
    delta = a * inp.h + _noise_increment(system, inp, diff)
    # sum_r |sigma_r xi_r| = sum_r |sigma_r| |xi_r|
    col_norms = np.sqrt(np.sum(diff * diff, axis=-2))
    denom = 1.0 + inp.h * _norm(a) + np.sum(col_norms * np.abs(inp.xi), axis=-1) * np.sqrt(inp.h)
    return inp.x + delta / denom[..., None]


def sabanis_tamed_step(system: SdeSystem, inp: StepInputs, beta: float = 0.5):
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    a = np.asarray(system.drift(inp.t, inp.x))
    diff = system.diffusion(inp.t, inp.x)
    delta = a * inp.h + _noise_increment(system, inp, diff)
    col_norms = np.sqrt(np.sum(diff * diff, axis=-2))
    hb = inp.h**beta
    denom = 1.0 + _norm(a) * hb + np.sum(col_norms, axis=-1) * hb
    return inp.x + delta / denom[..., None]


def classical_euler_step(system: SdeSystem, inp: StepInputs):
    return inp.x + _drift_increment(system, inp) + _noise_increment(system, inp)


def classical_milstein_step(system: SdeSystem, inp: StepInputs):
    correction = _general_correction(system, inp)
    return classical_euler_step(system, inp) + correction


def classical_milstein_commutative_step(system: SdeSystem, inp: StepInputs):
    correction = _commutative_correction(system, inp)
    return classical_euler_step(system, inp) + correction


_STEPPERS = {
    SchemeKind.BALANCED_EULER: balanced_euler_step,
    SchemeKind.BALANCED_MILSTEIN: balanced_milstein_step,
    SchemeKind.BALANCED_MILSTEIN_COMMUTATIVE: balanced_milstein_commutative_step,
    SchemeKind.FULLY_TAMED_EULER: fully_tamed_euler_step,
    SchemeKind.TREZHANG_TAMED: trezhang_tamed_step,
    SchemeKind.SABANIS_TAMED: sabanis_tamed_step,
    SchemeKind.CLASSICAL_EULER: classical_euler_step,
    SchemeKind.CLASSICAL_MILSTEIN: classical_milstein_step,
    SchemeKind.CLASSICAL_MILSTEIN_COMMUTATIVE: classical_milstein_commutative_step,
}


def stepper(scheme: SchemeSpec) -> Callable[[SdeSystem, StepInputs], np.ndarray]:
    """The one-step map for ``scheme`` with its parameters bound."""
    fn = _STEPPERS[scheme.kind]
    if scheme.kind is SchemeKind.SABANIS_TAMED:
        return lambda system, inp: fn(system, inp, scheme.beta)
    if scheme.kind.is_balanced and scheme.rational_drift:
        return lambda system, inp: fn(system, inp, True)
    return fn


def increment_bound(scheme: SchemeSpec) -> Optional[float]:
    """Sup-norm bound on one step's increment, for the balanced schemes."""
    if scheme.kind is SchemeKind.BALANCED_EULER:
        return 2.0
    if scheme.kind in (SchemeKind.BALANCED_MILSTEIN, SchemeKind.BALANCED_MILSTEIN_COMMUTATIVE):
        return 3.0
    return None
