import itertools

import numpy as np
import pytest

from balanced_sde.core import (
    CapabilityError,
    Commutativity,
    SchemeKind,
    SchemeSpec,
    SimConfig,
    Trajectory,
    check_commutativity,
    divergence_mask,
    validate,
)
from balanced_sde.problems import PROBLEMS, make_noncommutative_2d, make_problem

from conftest import constant_system


def test_single_noise_always_commutes():
    s = make_problem("three-halves")
    rng = np.random.default_rng(1)
    pts = [(0.0, rng.normal(size=1) * 5) for _ in range(50)]
    rep = check_commutativity(s, pts)
    assert rep == {"commutative": True, "max_defect": 0.0}


def test_diagonal_noise_commutes():
    b = 0.7

    def levy(t, x):
        # sigma_r = b x_r e_r  ->  Lambda_i sigma_r = delta_ir b^2 x_r e_r
        x = np.asarray(x)
        out = np.zeros(x.shape + (3, 3))
        for r in range(3):
            out[..., r, r, r] = b * b * x[..., r]
        return out

    s = constant_system(np.zeros(3), np.zeros((3, 3)))
    s = s.__class__(3, 3, s.drift, s.diffusion, levy, commutative=Commutativity.UNKNOWN)
    rng = np.random.default_rng(2)
    rep = check_commutativity(s, [(0.0, rng.normal(size=3)) for _ in range(20)])
    assert rep["commutative"] and rep["max_defect"] == 0.0


def test_noncommutative_defect_fixture():
    # Lambda_1 sigma_2 - Lambda_2 sigma_1 = 2 b^2 (x2, -x1); at (1, 1), b = 0.2: sup norm 0.08
    s = make_noncommutative_2d(damping=1.0, b=0.2)
    rep = check_commutativity(s, [(0.0, [1.0, 1.0])])
    assert rep["commutative"] is False
    assert rep["max_defect"] == pytest.approx(0.08, rel=1e-14)


def test_check_commutativity_needs_levy():
    s = constant_system([0.0], [[1.0]])
    with pytest.raises(CapabilityError):
        check_commutativity(s, [(0.0, [1.0])])
    with pytest.raises(ValueError):
        check_commutativity(make_problem("gbm"), [])


def test_capability_checks_are_total():
    systems = [make_problem(name) for name in PROBLEMS]
    systems.append(constant_system([0.0, 0.0], np.eye(2), label="no-levy"))
    for system, kind in itertools.product(systems, SchemeKind):
        spec = SchemeSpec(kind)
        try:
            validate(system, spec)
        except CapabilityError:
            assert kind.is_milstein
            assert system.levy is None or (kind.is_commutative and system.commutative is not Commutativity.YES)
        else:
            if kind.is_milstein:
                assert system.levy is not None
            if kind.is_commutative:
                assert system.commutative is Commutativity.YES


def test_scheme_spec_from_name_and_beta_range():
    assert SchemeSpec("sabanis-tamed", beta=0.25).kind is SchemeKind.SABANIS_TAMED
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            SchemeSpec(SchemeKind.SABANIS_TAMED, beta=bad)
    assert SchemeSpec(SchemeKind.SABANIS_TAMED, beta=1.0).beta == 1.0


def test_sim_config_validation():
    cfg = SimConfig(0.0, 1.0, [1.0], 6, [4, 2, 3, 2], 10, 7)
    assert cfg.coarse_levels == (2, 3, 4)
    assert cfg.step_size(3) == 0.125
    with pytest.raises(ValueError):
        SimConfig(1.0, 1.0, [1.0], 6, [2], 10, 7)
    with pytest.raises(ValueError):
        SimConfig(0.0, 1.0, [1.0], 6, [7], 10, 7)
    with pytest.raises(ValueError):
        SimConfig(0.0, 1.0, [1.0], 6, [2], 0, 7)
    with pytest.raises(ValueError):
        SimConfig(0.0, 1.0, [1.0], 6, [2], 1, 2**64)


def test_trajectory_length_check():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(3), np.zeros((2, 1)), False, None)


def test_divergence_mask():
    x = np.array([[1.0, 2.0], [np.nan, 0.0], [1e151, 0.0], [-np.inf, 1.0], [1e150, -1e150]])
    assert divergence_mask(x).tolist() == [False, True, True, True, False]
