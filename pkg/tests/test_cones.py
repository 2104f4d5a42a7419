import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallingballs.checks import l1_sequence_bound
from fallingballs.cocycle import TangentVec, collision_monodromy, event_coefficients, monodromies, qform_xieta
from fallingballs.cones import (
    ConePosition,
    GainFactor,
    L1_basis,
    L2_basis,
    closure_vectors,
    cone_position,
    cumulative_cocycles,
    first_passage,
    from_V,
    gain_matrix,
    l2_gain,
    lagrangian_entry,
    lambda_estimate,
    lagrangian_entry_times,
    lyapunov_spectrum,
    orbit_lambda,
    pair_windows,
    q_monotone_defect,
    q_monotone_defects,
    q_trace,
    qr_exponents,
    restrict,
    sigma,
    sigma_from_factor,
    sigma_oracle,
    sigma_trace,
    unboundedness_trace,
)
from fallingballs.dynamics import EventKind, random_orbit, random_state
from fallingballs.errors import NoSegments, NotFound, NotMonotone, SubspaceViolation

from conftest import SMALL, WIDE

F, B12, B23 = EventKind.FLOOR, EventKind.BALL12, EventKind.BALL23


def head(log, a, b=None):
    """Sub-log of events a..b-1 starting from the state before event a."""
    b = len(log) if b is None else b
    arr = {f: getattr(log, f)[a:b] for f in ("t", "kind", "q", "p", "v_pre", "margin")}
    return dataclasses.replace(log, initial=log.state(a - 1), **arr)


def test_cone_position_examples():
    assert cone_position(TangentVec([0, 1, 0], [0, 1, 0])) is ConePosition.INTERIOR
    assert cone_position(TangentVec([0, 1, 0], [0, -1, 0])) is ConePosition.EXTERIOR
    assert cone_position(TangentVec([0, 1, 0], [0, 0, 0])) is ConePosition.BOUNDARY
    assert cone_position(TangentVec([1, 0, 0], [0, 0, 0])) is ConePosition.INVALID
    assert cone_position(np.zeros(6)) is ConePosition.BOUNDARY


def test_q_monotone_defect_basic(wide_log):
    assert q_monotone_defect(np.eye(6)) == 0.0
    D = collision_monodromy(wide_log.event(0), WIDE)
    assert q_monotone_defect(D) >= -1e-12
    mats = monodromies(wide_log.kind, wide_log.v_pre, WIDE)
    d = q_monotone_defects(mats)
    assert d.min() >= -1e-12
    np.testing.assert_allclose(d[:20], [q_monotone_defect(M) for M in mats[:20]], atol=1e-14)


def test_subspace_violation():
    M = np.eye(6)
    M[0, 1] = 1.0
    with pytest.raises(SubspaceViolation):
        restrict(M)
    with pytest.raises(SubspaceViolation):
        q_monotone_defects(M[None])


def test_sigma_examples():
    assert sigma(np.eye(6)) == 1.0
    assert sigma(np.diag([1, 2, 2, 1, 2, 2])) == pytest.approx(2.0, rel=1e-12)
    # a single floor collision has a kernel inside the closed cone
    F1 = collision_monodromy(F, SMALL, v_pre=(-1.0, 0, 0))
    assert sigma(F1) == 1.0
    with pytest.raises(NotMonotone):
        sigma(np.diag([1, 0.5, 0.5, 1, 0.5, 0.5]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 60))
def test_sigma_matches_oracle(seed, n):
    log = random_orbit(WIDE, n, seed)
    D = cumulative_cocycles(log)[-1]
    if np.linalg.norm(D, 2) > 1e4:
        return
    s = sigma(D)
    o = sigma_oracle(D, n_samples=20_000, rng=seed)
    assert o >= s - 1e-6 * s
    assert o == pytest.approx(s, rel=1e-6)


def test_gain_factor_matches_gain_matrix(wide_log):
    n = 40
    mats = monodromies(wide_log.kind[:n], wide_log.v_pre[:n], WIDE)
    coefs = event_coefficients(wide_log.kind[:n], wide_log.v_pre[:n], WIDE)
    acc = GainFactor()
    for k, c, M in zip(wide_log.kind[:n], coefs, mats):
        acc.push(k, c, M)
        G = gain_matrix(acc.D)
        np.testing.assert_allclose(acc.gain(), G, atol=1e-9 * max(1.0, np.abs(G).max()))
    assert sigma_from_factor(acc.R) == pytest.approx(sigma(acc.D), rel=1e-6)
    assert sigma_from_factor(np.zeros((4, 4))) == 1.0


def test_sigma_supermultiplicative(wide_log):
    D = cumulative_cocycles(wide_log, 0, 30)
    A, B = D[11], np.linalg.solve(D[11].T, D[29].T).T  # D29 = B @ D11
    assert sigma(D[29]) >= sigma(A) * sigma(B) * (1 - 1e-8)


def test_sigma_trace_nondecreasing_and_first_passage():
    for seed in range(5):
        tr = sigma_trace(random_orbit(WIDE, 3000, seed), cap=10.0)
        assert tr[0] >= 1.0
        assert np.all(np.diff(tr) >= -1e-9 * tr[1:])
        n = first_passage(tr)
        assert n is not None and tr[n - 1] > 3.0 and np.all(tr[: n - 1] <= 3.0)
    assert first_passage([1.0, 2.0]) is None


def test_lagrangian_entry_basics():
    assert not lagrangian_entry(np.eye(6), 1)
    assert not lagrangian_entry(np.eye(6), 2)
    F1 = collision_monodromy(F, SMALL, v_pre=(-1.0, 0, 0))
    assert not lagrangian_entry(F1, 1)  # delta xi_3 is not yet coupled


def test_entry_times_without_floor_raise(wide_log):
    fl = np.flatnonzero(wide_log.kind == F)
    first_gap = next(k for k in range(len(fl) - 1) if fl[k + 1] - fl[k] > 2)
    sub = head(wide_log, fl[first_gap] + 1, fl[first_gap + 1])
    assert not np.any(sub.kind == F)
    with pytest.raises(NotFound):
        lagrangian_entry_times(sub)


@pytest.mark.parametrize("seed", range(20))
def test_l1_entry_follows_floor_12_floor(seed):
    log = random_orbit(WIDE, 2000, seed)
    e = lagrangian_entry_times(log)
    assert e.k1 == l1_sequence_bound(log.kind)
    assert e.ball_bound is not None and e.k2 <= e.ball_bound


def test_l1_sequence_bound():
    assert l1_sequence_bound([F, B23, B12, B23, F]) == 5
    assert l1_sequence_bound([B12, F, F, B12, F]) == 5
    assert l1_sequence_bound([F, B23, F]) is None


def test_q_trace_l1_is_zero_before_floor(wide_log):
    k = int(np.flatnonzero(wide_log.kind == F)[0])
    for v in L1_basis():
        tr = q_trace(wide_log, v, n_max=k)
        np.testing.assert_array_equal(tr.values, 0.0)


def test_q_traces_grow(wide_log):
    for v in closure_vectors(20, rng=3):
        assert cone_position(v) in (ConePosition.INTERIOR, ConePosition.BOUNDARY)
        tr = q_trace(wide_log, v, stop_above=1e3)
        assert tr.is_nondecreasing()
        assert tr.crossing(1e3) is not None
    rows = list(tr.rows())
    assert rows[0][2] == "" and rows[1][2] in ("FLOOR", "BALL12", "BALL23")


def test_closure_vectors_start_with_bases():
    V = closure_vectors(10, rng=0)
    np.testing.assert_array_equal(V[:2], L1_basis())
    np.testing.assert_array_equal(V[2:4], L2_basis())
    np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0)
    assert closure_vectors(10, rng=0).tolist() == V.tolist()


def test_unboundedness_trace_rejects_exterior():
    x = random_state(WIDE, 10.0, 0)
    with pytest.raises(ValueError):
        unboundedness_trace(x, from_V([1, 0, -1, 0]), 10, WIDE)
    tr = unboundedness_trace(x, from_V([0, 0, 1, 0]), 500, WIDE)
    assert tr.values[-1] > 0


def test_pair_windows():
    assert pair_windows(np.array([F, B12, F, B23, B12, B12, F])) == [(1, 3), (3, 4)]
    assert pair_windows(np.array([F, F])) == []


def test_lambda_positive():
    orbits = [random_orbit(WIDE, 2000, s) for s in range(10)]
    est = lambda_estimate(orbits)
    assert est.value > 0 and np.all(est.per_orbit > 0)
    assert est.n_windows == sum(orbit_lambda(o)[1] for o in orbits)
    assert l2_gain(np.eye(6)) == 0.0


def test_lambda_no_windows(wide_log):
    fl = np.flatnonzero(wide_log.kind == F)
    with pytest.raises(NoSegments):
        orbit_lambda(head(wide_log, fl[0], fl[0] + 1))
    with pytest.raises(NoSegments):
        lambda_estimate([])


def test_lyapunov_spectrum_structure():
    log = random_orbit(WIDE, 20_000, 2)
    s = lyapunov_spectrum(log)
    lam = s.per_event
    assert lam[0] > 0.05
    np.testing.assert_allclose(lam + lam[::-1], 0.0, atol=0.03)
    assert np.abs(lam[2:4]).max() < 0.03
    assert s.to_dict()["n_events"] == 20_000
    with pytest.raises(NoSegments):
        qr_exponents([])


def test_qform_consistency_on_v():
    u = np.array([1.0, 2.0, 3.0, 4.0])
    assert qform_xieta(from_V(u)) == pytest.approx(u[:2] @ u[2:])
