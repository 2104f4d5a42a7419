import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallingballs.dynamics import (
    EventKind,
    MassTriple,
    PhaseState,
    Side,
    apply_collision,
    free_flight,
    hamiltonian,
    next_event,
    partition_faces,
    partition_index,
    poincare_map,
    random_orbit,
    simulate,
    time_reverse,
)
from fallingballs.errors import (
    ContactViolation,
    NonApproaching,
    OrderingViolation,
    SingularEncounter,
    Unlabeled,
)

from conftest import SMALL, WIDE, mass_triples, shell_states, state


# --- masses ---------------------------------------------------------------


def test_mass_ordering_enforced():
    with pytest.raises(OrderingViolation):
        MassTriple(1.0, 2.0, 3.0)
    with pytest.raises(OrderingViolation):
        MassTriple(2.0, 2.0, 1.0)
    MassTriple.allow_equal(2.0, 2.0, 1.0)


@given(mass_triples())
def test_mass_derived_quantities(m):
    assert 0 < m.gamma1 < 1 and 0 < m.gamma2 < 1
    assert m.M1 > m.M2 > m.M3 > 0
    assert m.M1 == pytest.approx(m.m1 + m.m2 + m.m3)


# --- hamiltonian and flight --------------------------------------------------


def test_hamiltonian_examples():
    assert hamiltonian(PhaseState([0, 1, 2], [0, 0, 0]), SMALL) == 4.0
    assert hamiltonian(PhaseState([0, 0, 0], [4, 2, 1]), SMALL) == 3.5


def test_free_flight_examples():
    x = PhaseState([0, 1, 2], [4, 2, 1])
    y = free_flight(x, 1.0, SMALL)
    np.testing.assert_allclose(y.q, [0.5, 1.5, 2.5])
    np.testing.assert_allclose(y.p, [0, 0, 0], atol=1e-15)
    z = free_flight(x, 0.0, SMALL)
    np.testing.assert_array_equal(z.q, x.q)
    np.testing.assert_array_equal(z.p, x.p)
    w = free_flight(PhaseState([1, 2, 3], [0, 0, 0]), 1.0, SMALL)
    np.testing.assert_allclose(w.q, [0.5, 1.5, 2.5])
    np.testing.assert_allclose(w.p, -SMALL.array)


def test_free_flight_leaving_cone_reported():
    with pytest.raises(OrderingViolation):
        free_flight(PhaseState([0.1, 1, 2], [-4, 0, 0]), 1.0, SMALL)


@given(shell_states())
def test_flight_conserves_energy(ms):
    m, x = ms
    _, dt = next_event(x, m)
    y = free_flight(x, 0.5 * dt, m, tol=1e-9)
    assert hamiltonian(y, m) == pytest.approx(hamiltonian(x, m), rel=1e-12, abs=1e-12)


# --- events ----------------------------------------------------------------------


def test_next_event_floor():
    ev, dt = next_event(state([0, 5, 10], [1, 1, 1], SMALL), SMALL)
    assert ev.kind is EventKind.FLOOR and dt == pytest.approx(2.0)


def test_next_event_ball12():
    ev, dt = next_event(state([1, 2, 10], [2, 0, 0], SMALL), SMALL)
    assert ev.kind is EventKind.BALL12 and dt == pytest.approx(0.5)
    assert ev.v_pre == pytest.approx((1.5, -0.5, -0.5))


def test_next_event_coincident_is_near_singular():
    ev, dt = next_event(state([0, 2, 10], [1, 0, 0], SMALL), SMALL)
    assert dt == pytest.approx(2.0)
    assert ev.margin == 0.0 and ev.near_singular


def test_apply_floor_reverses_momentum():
    x = PhaseState([0, 1, 2], [-3, 1, 2], side=Side.PRE)
    y = apply_collision(EventKind.FLOOR, x, SMALL)
    np.testing.assert_array_equal(y.p, [3, 1, 2])
    assert y.side is Side.POST


def test_equal_masses_swap_velocities():
    m = MassTriple.allow_equal(2.0, 2.0, 1.0)
    x = state([1, 1, 3], [1.5, -0.5, 0], m, Side.PRE)
    y = apply_collision(EventKind.BALL12, x, m)
    np.testing.assert_allclose(y.p / m.array, [-0.5, 1.5, 0])


def test_apply_collision_errors():
    with pytest.raises(ContactViolation):
        apply_collision(EventKind.BALL12, state([1, 2, 3], [1, 0, 0], SMALL), SMALL)
    with pytest.raises(NonApproaching):
        apply_collision(EventKind.BALL12, state([1, 1, 3], [0, 1, 0], SMALL), SMALL)
    with pytest.raises(NonApproaching):
        apply_collision(EventKind.FLOOR, state([0, 1, 3], [1, 0, 0], SMALL), SMALL)


@given(mass_triples(), st.floats(-5, 5), st.floats(0.01, 5), st.sampled_from([EventKind.BALL12, EventKind.BALL23]))
def test_ball_collision_conserves_pair_momentum_and_energy(m, v, dv, kind):
    i = int(kind) - 1
    vel = np.zeros(3)
    vel[i], vel[i + 1] = v + dv, v
    q = np.array([1.0, 2.0, 3.0])
    q[i + 1] = q[i]
    if i == 0:
        q[2] = 3.0
    x = state(q, vel, m, Side.PRE)
    y = apply_collision(kind, x, m)
    pair = slice(i, i + 2)
    assert y.p[pair].sum() == pytest.approx(x.p[pair].sum(), abs=1e-12 * (1 + abs(x.p).max()))
    ke = lambda s: float(np.sum(s.p[pair] ** 2 / (2 * m.array[pair])))
    assert ke(y) == pytest.approx(ke(x), rel=1e-12, abs=1e-12)


def test_single_ball_bounce_period():
    x = state([0, 100, 200], [1, 0, 0], SMALL)
    y, e1 = poincare_map(x, SMALL)
    z, e2 = poincare_map(y, SMALL)
    assert e1.kind is e2.kind is EventKind.FLOOR
    assert e1.time == pytest.approx(2.0) and e2.time - e1.time == pytest.approx(2.0)


def test_singular_state_branches():
    x = state([0, 2, 10], [1, 0, 0], SMALL)
    with pytest.raises(SingularEncounter) as info:
        poincare_map(x, SMALL)
    branches = info.value.branches
    assert len(branches) == 2
    (e_a, s_a), (e_b, s_b) = branches
    assert {e_a.kind, e_b.kind} == {EventKind.FLOOR, EventKind.BALL12}
    assert not np.allclose(s_a.p, s_b.p)


@given(shell_states())
@settings(max_examples=50)
def test_poincare_map_conserves_energy(ms):
    m, x = ms
    try:
        y, _ = poincare_map(x, m)
    except SingularEncounter:
        return
    assert hamiltonian(y, m) == pytest.approx(hamiltonian(x, m), rel=1e-12)


# --- labels and reversal -------------------------------------------------------


def test_partition_labels():
    assert partition_index(state([0, 1, 2], [1, 0, 0], SMALL), SMALL) == 1
    assert partition_index(state([1, 1, 2], [0, 1, 0], SMALL), SMALL) == 2
    with pytest.raises(Unlabeled):
        partition_index(state([0.5, 1, 2], [0, 0, 0], SMALL), SMALL)


@given(shell_states())
def test_time_reverse_involution(ms):
    m, x = ms
    y = time_reverse(time_reverse(x))
    np.testing.assert_array_equal(y.p, x.p)
    assert hamiltonian(time_reverse(x), m) == hamiltonian(x, m)


def test_time_reverse_post_floor_is_pre_floor():
    x = state([0, 1, 2], [1, 0, 0], SMALL)
    assert partition_faces(x, SMALL) == (1,)
    assert partition_faces(time_reverse(x), SMALL) == (1,)
    assert time_reverse(x).side is Side.PRE


# --- orbits ---------------------------------------------------------------------------


def test_orbit_invariants(wide_log):
    log = wide_log
    assert np.all(np.diff(log.t) > 0)
    q = log.q
    assert np.all(q[:, 0] >= -1e-10) and np.all(np.diff(q, axis=1) >= -1e-10)
    assert log.alternation_violations() == 0
    rel = np.abs(log.energies() - log.energy) / log.energy
    assert rel.max() < 1e-10
    assert np.all(log.margin >= 0)


def test_orbit_segments_alternate(wide_log):
    for a, b in wide_log.segments():
        k = wide_log.kind[a + 1 : b]
        assert np.all(k[1:] != k[:-1])


def test_every_kind_recurs(wide_log):
    # empirical window: largest gap between consecutive events of each kind
    for kind in EventKind:
        idx = np.flatnonzero(wide_log.kind == kind)
        assert len(idx) > 10
        assert np.diff(idx).max() < 200


def test_simulate_matches_poincare_map():
    # step by step from the logged state: chaos rules out one long comparison
    x = state([0, 0.7, 1.9], [2.0, 0.3, -0.4], WIDE)
    log = simulate(x, WIDE, 300)
    for k in range(len(log)):
        y, ev = poincare_map(log.state(k - 1), WIDE)
        assert int(ev.kind) == int(log.kind[k])
        assert ev.time == pytest.approx(log.t[k], rel=1e-13)
        np.testing.assert_allclose(y.q, log.q[k], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(y.p, log.p[k], rtol=1e-12, atol=1e-12)


def test_random_orbit_is_deterministic():
    a = random_orbit(WIDE, 200, seed=3)
    b = random_orbit(WIDE, 200, seed=3)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.t, b.t)


def test_orbit_csv_and_manifest(tmp_path):
    log = random_orbit(SMALL, 20, seed=1)
    log.to_csv(tmp_path / "o.csv")
    log.write_manifest(tmp_path / "o.json", seed=1)
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert len(lines) == 21 and lines[0].startswith("t,kind")
    assert '"n_events": 20' in (tmp_path / "o.json").read_text()


def test_simulate_singular_raises_with_partial():
    x = state([0, 2, 10], [1, 0, 0], SMALL)
    y = free_flight(x, 0.0, SMALL)
    with pytest.raises(SingularEncounter) as info:
        simulate(y, SMALL, 5)
    assert info.value.partial is not None and len(info.value.partial) == 0
    log = simulate(y, SMALL, 5, on_singular="continue")
    assert len(log) == 5 and log.margin[0] == 0.0
    assert math.isfinite(log.energy)
