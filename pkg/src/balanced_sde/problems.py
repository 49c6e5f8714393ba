"""Built-in test problems.

Each constructor returns an immutable :class:`SdeSystem` with vectorized
coefficients.  ``PROBLEMS`` maps the command-line names to constructors and
their default parameters.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import Commutativity, SdeSystem


def _as_state(x):
    return np.asarray(x, dtype=float)


def make_ginzburg_landau(sigma0: float = 0.5) -> SdeSystem:
    """dX = (X - X^3) dt + sigma0 dW; additive noise, cubic drift (kappa = 3)."""
    if sigma0 < 0:
        raise ValueError("sigma0 must be >= 0")

    def drift(t, x):
        x = _as_state(x)
        return x - x**3

    def diffusion(t, x):
        x = _as_state(x)
        return np.full(x.shape + (1,), float(sigma0))

    def levy(t, x):
        x = _as_state(x)
        return np.zeros(x.shape + (1, 1))

    return SdeSystem(
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        # cubic drift: |a(x) - a(y)|^2 <= 9 (1 + x^4 + y^4) |x - y|^2, i.e. 2 kappa - 2 = 4
        kappa=3.0,
        kappa_prime=0.0,
        commutative=Commutativity.YES,
        label="ginzburg-landau",
        params={"sigma0": float(sigma0), "c1": 1.0, "p0": None, "additive": True},
    )


def three_halves_p0_bound(lam: float, mu: float) -> float:
    """Largest moment index p0 for which the 3/2 model satisfies the monotone condition."""
    return lam / mu**2 + 0.5


def make_three_halves(lam: float = 4.0, theta: float = 1.0, mu: float = 1.0) -> SdeSystem:
    """The 3/2 stochastic volatility model dX = lam X (theta - X) dt + mu |X|^{3/2} dW.

    A bounded second moment of the balanced Euler scheme wants 2 p0 >= 9
    (kappa = 2); a warning is issued when the parameters leave less headroom.
    The rational tamed schemes ask for 2 p0 > 15 (``trezhang-tamed``) and
    2 p0 >= 8 (``sabanis-tamed``); those are recorded in ``params`` but not enforced.
    """
    if lam <= 0 or theta <= 0 or mu <= 0:
        raise ValueError("lam, theta and mu must be positive")
    two_p0 = 2.0 * three_halves_p0_bound(lam, mu)
    if two_p0 < 9.0:
        warnings.warn(
            f"3/2 model with lam={lam}, mu={mu} has 2*p0 <= {two_p0:g} < 9; "
            "second moments of the balanced Euler scheme may be unbounded",
            stacklevel=2,
        )

    def drift(t, x):
        x = _as_state(x)
        return lam * x * (theta - x)

    def diffusion(t, x):
        x = _as_state(x)
        return (mu * np.abs(x) ** 1.5)[..., None]

    def levy(t, x):
        # continuous extension through x = 0
        x = _as_state(x)
        return (1.5 * mu**2 * x * np.abs(x))[..., None, None]

    return SdeSystem(
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        kappa=2.0,
        kappa_prime=2.0,
        commutative=Commutativity.YES,
        label="three-halves",
        params={
            "lam": float(lam),
            "theta": float(theta),
            "mu": float(mu),
            "two_p0_max": two_p0,
            # monotone condition on x, y > 0 with p0 = 1 holds when 9 mu^2 / 8 <= lam
            "c1": float(lam * theta),
            "p0": 1.0,
            "two_p0_required": {"balanced-euler": 9.0, "trezhang-tamed": 15.0, "sabanis-tamed": 8.0},
        },
    )


def make_gbm(mu: float = 0.05, b: float = 0.2) -> SdeSystem:
    """Geometric Brownian motion dX = mu X dt + b X dW, with its exact solution."""

    def drift(t, x):
        return mu * _as_state(x)

    def diffusion(t, x):
        return (b * _as_state(x))[..., None]

    def levy(t, x):
        return (b * b * _as_state(x))[..., None, None]

    def exact(s, x0, w):
        return _as_state(x0) * np.exp((mu - 0.5 * b * b) * s + b * np.asarray(w)[..., :1])

    return SdeSystem(
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        kappa=1.0,
        kappa_prime=1.0,
        commutative=Commutativity.YES,
        label="gbm",
        exact_solution=exact,
        params={"mu": float(mu), "b": float(b), "c1": float(mu + 1.5 * b * b), "p0": 2.0},
    )


def make_noncommutative_2d(damping: float = 1.0, b: float = 0.2) -> SdeSystem:
    """Planar system with two non-commuting linear noises.

    a(x) = x - damping |x|^2 x (kappa = 3),  sigma_1(x) = b (x2, x1),  sigma_2(x) = b (x1, -x2).

    Milstein coefficients Lambda_i sigma_r = D(sigma_r) sigma_i:
        Lambda_1 sigma_1 = Lambda_2 sigma_2 = b^2 (x1, x2)
        Lambda_1 sigma_2 = b^2 (x2, -x1)
        Lambda_2 sigma_1 = b^2 (-x2, x1)
    so the commutator defect is 2 b^2 (x2, -x1).
    """
    if damping <= 0:
        raise ValueError("damping must be positive")

    def drift(t, x):
        x = _as_state(x)
        return x - damping * np.sum(x * x, axis=-1, keepdims=True) * x

    def diffusion(t, x):
        x = _as_state(x)
        x1, x2 = x[..., 0], x[..., 1]
        s1 = np.stack([x2, x1], axis=-1)
        s2 = np.stack([x1, -x2], axis=-1)
        return b * np.stack([s1, s2], axis=-1)

    def levy(t, x):
        x = _as_state(x)
        x1, x2 = x[..., 0], x[..., 1]
        same = np.stack([x1, x2], axis=-1)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = same
        out[..., 1, 1] = same
        out[..., 0, 1] = np.stack([x2, -x1], axis=-1)
        out[..., 1, 0] = np.stack([-x2, x1], axis=-1)
        return b * b * out

    return SdeSystem(
        dim_state=2,
        dim_noise=2,
        drift=drift,
        diffusion=diffusion,
        levy=levy,
        kappa=3.0,
        kappa_prime=1.0,
        commutative=Commutativity.NO,
        label="noncommutative-2d",
        params={"damping": float(damping), "b": float(b), "c1": float(1.0 + 3.0 * b * b), "p0": 2.0},
    )


PROBLEMS = {
    "ginzburg-landau": (make_ginzburg_landau, {"sigma0": 0.5}, [1.0]),
    "three-halves": (make_three_halves, {"lam": 4.0, "theta": 1.0, "mu": 1.0}, [1.0]),
    "gbm": (make_gbm, {"mu": 0.05, "b": 0.2}, [1.0]),
    "noncommutative-2d": (make_noncommutative_2d, {"damping": 1.0, "b": 0.2}, [1.0, 1.0]),
}


def make_problem(name: str, **params) -> SdeSystem:
    """Build a named problem; unknown parameter names raise TypeError."""
    try:
        ctor, defaults, _ = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None
    unknown = set(params) - set(defaults)
    if unknown:
        raise TypeError(f"problem {name!r} has no parameter(s) {sorted(unknown)}; valid: {sorted(defaults)}")
    return ctor(**{**defaults, **params})


def default_initial_state(name: str) -> list:
    return list(PROBLEMS[name][2])
