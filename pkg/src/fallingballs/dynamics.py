"""Event-driven dynamics of three point balls falling on a floor.

Units have unit gravitational acceleration, so between collisions

    q_i(t) = q_i - t**2/2 + t p_i/m_i,    p_i(t) = p_i - t m_i.

Ball-ball gaps are affine in t (the quadratic terms cancel) and the floor
impact solves a quadratic, so every event time is computed in closed form.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    AmbiguousLabel,
    ContactViolation,
    FallingBallsError,
    InternalInconsistency,
    NonApproaching,
    OrderingViolation,
    SingularEncounter,
    Unlabeled,
)

DEFAULT_EPS_SING = 1e-12
DEFAULT_ENERGY = 10.0
CONTACT_TOL = 1e-9


class EventKind(enum.IntEnum):
    FLOOR = 0
    BALL12 = 1
    BALL23 = 2

    @property
    def face(self) -> int:
        """Index i of the section M_i^+ entered by this collision."""
        return int(self) + 1

    @property
    def label(self) -> str:
        return ("(0,1)", "(1,2)", "(2,3)")[int(self)]


class Side(enum.Enum):
    POST = "post-collision"
    PRE = "pre-collision"
    FLIGHT = "in-flight"


@dataclass(frozen=True)
class MassTriple:
    """Three ball masses, bottom to top, with derived collision data."""

    m1: float
    m2: float
    m3: float
    diagnostic: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        m = (float(self.m1), float(self.m2), float(self.m3))
        if min(m) <= 0 or not all(map(math.isfinite, m)):
            raise OrderingViolation(f"masses must be positive and finite, got {m}")
        if self.diagnostic:
            if not (m[0] >= m[1] >= m[2]):
                raise OrderingViolation(f"masses must satisfy m1 >= m2 >= m3, got {m}")
        elif not (m[0] > m[1] > m[2]):
            raise OrderingViolation(f"masses must satisfy m1 > m2 > m3, got {m}")
        object.__setattr__(self, "m1", m[0])
        object.__setattr__(self, "m2", m[1])
        object.__setattr__(self, "m3", m[2])

    @classmethod
    def allow_equal(cls, m1, m2, m3) -> "MassTriple":
        """Diagnostic constructor admitting m_i = m_{i+1} (gamma_i = 0)."""
        return cls(m1, m2, m3, diagnostic=True)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3])

    @property
    def gamma1(self) -> float:
        return (self.m1 - self.m2) / (self.m1 + self.m2)

    @property
    def gamma2(self) -> float:
        return (self.m2 - self.m3) / (self.m2 + self.m3)

    @property
    def gammas(self) -> tuple[float, float]:
        return self.gamma1, self.gamma2

    @property
    def M1(self) -> float:
        return self.m1 + self.m2 + self.m3

    @property
    def M2(self) -> float:
        return self.m2 + self.m3

    @property
    def M3(self) -> float:
        return self.m3

    def to_dict(self) -> dict:
        return {"m1": self.m1, "m2": self.m2, "m3": self.m3}


@dataclass(frozen=True, eq=False)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0
    side: Side = Side.POST

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(3)
        p = np.array(self.p, dtype=float).reshape(3)
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))

    def velocities(self, masses: MassTriple) -> np.ndarray:
        return self.p / masses.array

    def replace(self, **kw) -> "PhaseState":
        d = {"q": self.q, "p": self.p, "t": self.t, "side": self.side}
        d.update(kw)
        return PhaseState(**d)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    def __repr__(self):
        return f"PhaseState(q={self.q.tolist()}, p={self.p.tolist()}, t={self.t}, side={self.side.name})"


@dataclass(frozen=True)
class CollisionEvent:
    kind: EventKind
    time: float
    v_pre: tuple[float, float, float]
    margin: float
    near_singular: bool = False
    degenerate: bool = False
    runner_up: EventKind | None = None


def hamiltonian(state: PhaseState, masses: MassTriple) -> float:
    m = masses.array
    return float(np.sum(state.p**2 / (2 * m) + m * state.q))


def check_ordering(q, tol: float = 1e-10) -> None:
    q1, q2, q3 = q
    if q1 < -tol or q2 - q1 < -tol or q3 - q2 < -tol:
        raise OrderingViolation(f"positions left the configuration cone: {list(q)}")


def free_flight(state: PhaseState, dt: float, masses: MassTriple, tol: float = 1e-10) -> PhaseState:
    m = masses.array
    q = state.q - 0.5 * dt * dt + dt * state.p / m
    p = state.p - dt * m
    check_ordering(q, tol)
    side = state.side if dt == 0 else Side.FLIGHT
    return PhaseState(q, p, state.t + dt, side)


def _floor_time(q1: float, v1: float) -> float:
    # stable positive root of -t^2/2 + v1 t + q1 = 0
    disc = v1 * v1 + 2.0 * q1
    if disc < 0.0:
        return math.nan
    s = math.sqrt(disc)
    if v1 >= 0.0:
        return v1 + s
    return 2.0 * q1 / (s - v1) if s - v1 > 0.0 else 0.0


def candidate_times(q: Sequence[float], v: Sequence[float]) -> list[tuple[float, EventKind]]:
    """All future collision candidates ``(dt, kind)``, sorted by time."""
    q1, q2, q3 = q
    v1, v2, v3 = v
    out = []
    tf = _floor_time(q1, v1)
    if not math.isnan(tf):
        out.append((tf, EventKind.FLOOR))
    if v1 > v2:
        out.append(((q2 - q1) / (v1 - v2), EventKind.BALL12))
    if v2 > v3:
        out.append(((q3 - q2) / (v2 - v3), EventKind.BALL23))
    out.sort(key=lambda c: c[0])
    return out


def next_event(
    state: PhaseState, masses: MassTriple, eps_sing: float = DEFAULT_EPS_SING
) -> tuple[CollisionEvent, float]:
    """Soonest collision reachable from ``state`` and the flight time to it."""
    v = state.p / masses.array
    cands = candidate_times(state.q, v)
    if not cands:
        raise InternalInconsistency(f"no collision candidate from {state!r}")
    if cands[0][1] is not EventKind.FLOOR and not any(k is EventKind.FLOOR for _, k in cands):
        # q1 > 0 always gives a real floor root; missing it means bad input
        if state.q[0] > 0:
            raise InternalInconsistency("floor root missing for q1 > 0")
    dt, kind = cands[0]
    if dt < 0.0:
        # only reachable from states slightly outside the cone
        dt = 0.0
    margin = cands[1][0] - dt if len(cands) > 1 else math.inf
    margin = max(margin, 0.0)
    v_pre = tuple(float(x) for x in v - dt)
    degenerate = kind is EventKind.FLOOR and v_pre[0] == 0.0
    if degenerate:
        v_pre = (-0.0, v_pre[1], v_pre[2])
    ev = CollisionEvent(
        kind=kind,
        time=state.t + dt,
        v_pre=v_pre,
        margin=margin,
        near_singular=margin < eps_sing,
        degenerate=degenerate,
        runner_up=cands[1][1] if len(cands) > 1 else None,
    )
    return ev, dt


def collide_velocities(kind: EventKind, v: Sequence[float], masses: MassTriple) -> np.ndarray:
    v1, v2, v3 = v
    if kind is EventKind.FLOOR:
        return np.array([-v1, v2, v3])
    if kind is EventKind.BALL12:
        g = masses.gamma1
        return np.array([g * v1 + (1 - g) * v2, (1 + g) * v1 - g * v2, v3])
    g = masses.gamma2
    return np.array([v1, g * v2 + (1 - g) * v3, (1 + g) * v2 - g * v3])


def apply_collision(
    event: CollisionEvent | EventKind,
    state: PhaseState,
    masses: MassTriple,
    tol: float = CONTACT_TOL,
) -> PhaseState:
    """Collision law for the given kind; contact coordinates are re-snapped."""
    kind = event.kind if isinstance(event, CollisionEvent) else EventKind(event)
    q = np.array(state.q)
    v = state.p / masses.array
    scale = max(1.0, float(np.max(np.abs(q))))
    if kind is EventKind.FLOOR:
        if abs(q[0]) > tol * scale:
            raise ContactViolation(f"floor collision at q1={q[0]}")
        if v[0] > 0.0:
            raise NonApproaching(f"floor collision needs v1 <= 0, got {v[0]}")
        q[0] = 0.0
    else:
        i = int(kind) - 1
        if abs(q[i + 1] - q[i]) > tol * scale:
            raise ContactViolation(f"{kind.name} collision with gap {q[i + 1] - q[i]}")
        if v[i] < v[i + 1]:
            raise NonApproaching(f"{kind.name} needs v{i + 1} >= v{i + 2}, got {v[i]} < {v[i + 1]}")
        c = 0.5 * (q[i] + q[i + 1])
        q[i] = q[i + 1] = c
    v_new = collide_velocities(kind, v, masses)
    return PhaseState(q, v_new * masses.array, state.t, Side.POST)


def poincare_map(
    state: PhaseState, masses: MassTriple, eps_sing: float = DEFAULT_EPS_SING
) -> tuple[PhaseState, CollisionEvent]:
    """Flow to the next collision and apply it (T = Phi o phi^tau)."""
    ev, dt = next_event(state, masses, eps_sing)
    pre = free_flight(state, dt, masses, tol=1e-9)
    if ev.near_singular:
        cands = candidate_times(state.q, state.p / masses.array)[:2]
        branches = []
        for dt_b, kind in cands:
            # a branch exists only if its candidate is reachable without
            # crossing another event, which holds for small margins
            try:
                pre_b = free_flight(state, max(dt_b, 0.0), masses, tol=1e-9)
                v_pre = tuple(float(x) for x in pre_b.p / masses.array)
                ev_b = CollisionEvent(kind, state.t + dt_b, v_pre, ev.margin, True, ev.degenerate)
                branches.append((ev_b, apply_collision(kind, pre_b.replace(side=Side.PRE), masses, tol=1e-7)))
            except FallingBallsError:
                continue
        names = "/".join(k.name for _, k in cands)
        raise SingularEncounter(
            f"collision candidates {names} separated by {ev.margin:.3e} < {eps_sing:.1e}",
            branches,
        )
    post = apply_collision(ev, pre.replace(side=Side.PRE), masses)
    return post, ev


def partition_faces(state: PhaseState, masses: MassTriple, tol: float = 1e-10) -> tuple[int, ...]:
    """Faces i for which the state lies in M_i^+ (or M_i^- for pre-collision states)."""
    q = state.q
    v = state.p / masses.array
    pre = state.side is Side.PRE
    faces = []
    if abs(q[0]) <= tol:
        if (v[0] < 0) if pre else (v[0] >= 0):
            faces.append(1)
    for i in (1, 2):
        if abs(q[i] - q[i - 1]) <= tol:
            if (v[i - 1] > v[i]) if pre else (v[i - 1] <= v[i]):
                faces.append(i + 1)
    return tuple(faces)


def partition_index(state: PhaseState, masses: MassTriple, tol: float = 1e-10) -> int:
    """Index i of the partition element M_i^{+/-} containing the state."""
    faces = partition_faces(state, masses, tol)
    if not faces:
        raise Unlabeled(f"state is not on any collision face: {state!r}")
    if len(faces) > 1:
        raise AmbiguousLabel(f"state lies on faces {faces}")
    return faces[0]


def pair_label(face: int, other_kind: EventKind | int) -> tuple[int, int]:
    """Label (i, j) of M_{i,j}^{+/-}: current face and the face of the adjacent collision."""
    return (face, EventKind(other_kind).face)


def time_reverse(state: PhaseState) -> PhaseState:
    side = {Side.POST: Side.PRE, Side.PRE: Side.POST, Side.FLIGHT: Side.FLIGHT}[state.side]
    return PhaseState(state.q, -state.p, -state.t if state.t else 0.0, side)


def random_state(
    masses: MassTriple, energy: float = DEFAULT_ENERGY, rng: np.random.Generator | int | None = None
) -> PhaseState:
    """Post-floor-collision state drawn at random on the energy shell."""
    rng = np.random.default_rng(rng)
    m = masses.array
    pot = energy * rng.uniform(0.05, 0.95)
    # ordered heights with q1 = 0 and m2 q2 + m3 q3 = pot
    a, b = np.sort(rng.uniform(0.0, 1.0, 2))
    q2 = a
    q3 = b if b > a else a
    scale = pot / (m[1] * q2 + m[2] * q3) if (m[1] * q2 + m[2] * q3) > 0 else 0.0
    q = np.array([0.0, q2 * scale, q3 * scale])
    w = rng.normal(size=3)
    w *= math.sqrt(2.0 * (energy - float(m @ q))) / np.linalg.norm(w)
    w[0] = abs(w[0])
    return PhaseState(q, w * np.sqrt(m), 0.0, Side.POST)


@dataclass
class OrbitLog:
    """Post-collision states of an orbit, one row per event.

    Row k holds the event that produced the state: its kind, impact time, the
    pre-collision velocities and the margin to the runner-up candidate, plus
    the snapped post-collision positions and momenta.
    """

    masses: MassTriple
    initial: PhaseState
    t: np.ndarray
    kind: np.ndarray
    q: np.ndarray
    p: np.ndarray
    v_pre: np.ndarray
    margin: np.ndarray
    eps_sing: float = DEFAULT_EPS_SING

    def __len__(self) -> int:
        return len(self.t)

    @property
    def energy(self) -> float:
        return hamiltonian(self.initial, self.masses)

    def energies(self) -> np.ndarray:
        m = self.masses.array
        return np.sum(self.p**2 / (2 * m) + m * self.q, axis=1)

    def state(self, k: int) -> PhaseState:
        """State after event k; ``k = -1`` refers to the initial state."""
        if k < 0:
            return self.initial
        return PhaseState(self.q[k], self.p[k], self.t[k], Side.POST)

    def event(self, k: int) -> CollisionEvent:
        return CollisionEvent(
            kind=EventKind(int(self.kind[k])),
            time=float(self.t[k]),
            v_pre=tuple(float(x) for x in self.v_pre[k]),
            margin=float(self.margin[k]),
            near_singular=bool(self.margin[k] < self.eps_sing),
        )

    def events(self) -> Iterator[CollisionEvent]:
        for k in range(len(self)):
            yield self.event(k)

    def pair_labels(self) -> list[tuple[int, int]]:
        """Forward labels M_{i,j}^+ for every logged state except the last."""
        faces = self.kind.astype(int) + 1
        return [(int(faces[k]), int(faces[k + 1])) for k in range(len(self) - 1)]

    def floor_indices(self) -> np.ndarray:
        return np.flatnonzero(self.kind == EventKind.FLOOR)

    def segments(self) -> Iterator[tuple[int, int]]:
        """Index pairs (a, b) of consecutive floor events; interior events are a+1..b-1."""
        fl = self.floor_indices()
        for a, b in zip(fl[:-1], fl[1:]):
            yield int(a), int(b)

    def alternation_violations(self) -> int:
        """Count repeated ball-ball kinds inside a floor-to-floor segment."""
        k = self.kind
        same = (k[1:] == k[:-1]) & (k[1:] != EventKind.FLOOR)
        return int(np.count_nonzero(same))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "kind", "q1", "q2", "q3", "p1", "p2", "p3", "margin"])
            for k in range(len(self)):
                w.writerow(
                    [repr(float(self.t[k])), EventKind(int(self.kind[k])).name]
                    + [repr(float(x)) for x in self.q[k]]
                    + [repr(float(x)) for x in self.p[k]]
                    + [repr(float(self.margin[k]))]
                )

    def manifest(self, seed=None, **extra) -> dict:
        d = {
            "masses": self.masses.to_dict(),
            "energy": self.energy,
            "seed": seed,
            "eps_sing": self.eps_sing,
            "n_events": len(self),
        }
        d.update(extra)
        return d

    def write_manifest(self, path, seed=None, **extra) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(seed, **extra), fh, indent=2, sort_keys=True)


def simulate(
    state: PhaseState,
    masses: MassTriple,
    n_events: int,
    eps_sing: float = DEFAULT_EPS_SING,
    on_singular: str = "raise",
) -> OrbitLog:
    """Iterate the Poincare map ``n_events`` times and log every collision.

    This is the bulk path: the same closed-form event times and collision laws
    as :func:`poincare_map`, inlined on plain floats. ``on_singular`` is
    ``"raise"`` (default) or ``"continue"`` (take the branch whose computed
    time is smaller and only record the margin).
    """
    if on_singular not in ("raise", "continue"):
        raise ValueError(f"on_singular must be 'raise' or 'continue', not {on_singular!r}")
    m = masses.array
    m1, m2, m3 = (float(x) for x in m)
    g1, g2 = masses.gamma1, masses.gamma2
    q1, q2, q3 = (float(x) for x in state.q)
    v1, v2, v3 = (float(x) for x in state.p / m)
    t = state.t
    n = int(n_events)
    T = np.empty(n)
    K = np.empty(n, dtype=np.int8)
    Q = np.empty((n, 3))
    V = np.empty((n, 3))
    VP = np.empty((n, 3))
    MG = np.empty(n)
    sqrt = math.sqrt
    inf = math.inf
    for k in range(n):
        disc = v1 * v1 + 2.0 * q1
        if disc < 0.0:
            raise InternalInconsistency(f"negative floor discriminant at event {k}")
        s = sqrt(disc)
        if v1 >= 0.0:
            best = v1 + s
        else:
            best = 2.0 * q1 / (s - v1) if s - v1 > 0.0 else 0.0
        kind = 0
        second = inf
        if v1 > v2:
            tb = (q2 - q1) / (v1 - v2)
            if tb < best:
                second = best
                best = tb
                kind = 1
            else:
                second = tb
        if v2 > v3:
            tb = (q3 - q2) / (v2 - v3)
            if tb < best:
                second = best
                best = tb
                kind = 2
            elif tb < second:
                second = tb
        if best < 0.0:
            best = 0.0
        margin = second - best
        if margin < eps_sing and on_singular == "raise":
            log = _make_log(masses, state, T[:k], K[:k], Q[:k], V[:k], VP[:k], MG[:k], eps_sing)
            cur = PhaseState((q1, q2, q3), (m1 * v1, m2 * v2, m3 * v3), t, Side.POST)
            try:
                poincare_map(cur, masses, eps_sing)
            except SingularEncounter as exc:
                exc.partial = log
                raise
            raise SingularEncounter(f"margin {margin:.3e} at event {k}", partial=log)
        dt = best
        h = 0.5 * dt * dt
        q1 += v1 * dt - h
        q2 += v2 * dt - h
        q3 += v3 * dt - h
        v1 -= dt
        v2 -= dt
        v3 -= dt
        t += dt
        VP[k, 0] = v1
        VP[k, 1] = v2
        VP[k, 2] = v3
        if kind == 0:
            q1 = 0.0
            v1 = -v1
        elif kind == 1:
            c = 0.5 * (q1 + q2)
            q1 = q2 = c
            a = g1 * v1 + (1.0 - g1) * v2
            v2 = (1.0 + g1) * v1 - g1 * v2
            v1 = a
        else:
            c = 0.5 * (q2 + q3)
            q2 = q3 = c
            a = g2 * v2 + (1.0 - g2) * v3
            v3 = (1.0 + g2) * v2 - g2 * v3
            v2 = a
        T[k] = t
        K[k] = kind
        Q[k, 0] = q1
        Q[k, 1] = q2
        Q[k, 2] = q3
        V[k, 0] = v1
        V[k, 1] = v2
        V[k, 2] = v3
        MG[k] = margin
    return _make_log(masses, state, T, K, Q, V, VP, MG, eps_sing)


def _make_log(masses, state, T, K, Q, V, VP, MG, eps_sing) -> OrbitLog:
    return OrbitLog(
        masses=masses,
        initial=state,
        t=T,
        kind=K,
        q=Q,
        p=V * masses.array,
        v_pre=VP,
        margin=MG,
        eps_sing=eps_sing,
    )


def random_orbit(
    masses: MassTriple,
    n_events: int,
    seed: int,
    energy: float = DEFAULT_ENERGY,
    burn_in: int = 0,
    eps_sing: float = DEFAULT_EPS_SING,
) -> OrbitLog:
    """Seeded orbit from :func:`random_state`, optionally after a discarded burn-in."""
    x = random_state(masses, energy, seed)
    if burn_in:
        pre = simulate(x, masses, burn_in, eps_sing)
        x = pre.state(len(pre) - 1)
    return simulate(x, masses, n_events, eps_sing)
