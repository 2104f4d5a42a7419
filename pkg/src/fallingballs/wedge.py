"""Particle falling in a wedge: the scaled picture of the three-ball system.

With x_i = sqrt(m_i) q_i and w_i = p_i / sqrt(m_i) the configuration cone
becomes the simple wedge spanned by the unit generators h1, h2, h3, every
collision becomes a mirror reflection of w, and gravity pulls along -h1.
Reflecting the simple wedge in its two faces through h1 gives a dihedral
atlas of six copies; when the masses satisfy the wide relation the copies
close up around h1 into a wide wedge whose cross-section is an equilateral
triangle.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EventKind, MassTriple, OrbitLog, PhaseState, Side, next_event
from .errors import (
    MassRelationViolated,
    NotIndependent,
    NotUnit,
    OrderingViolation,
    WrongFace,
)

RELATION_TOL = 1e-10


@dataclass(frozen=True)
class WedgeState:
    x: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def energy(self, masses: MassTriple) -> float:
        return float(0.5 * self.w @ self.w + np.sqrt(masses.array) @ self.x)


def to_wedge(state: PhaseState, masses: MassTriple) -> WedgeState:
    s = np.sqrt(masses.array)
    return WedgeState(state.q * s, state.p / s, state.t)


def from_wedge(ws: WedgeState, masses: MassTriple, side: Side = Side.POST) -> PhaseState:
    s = np.sqrt(masses.array)
    return PhaseState(ws.x / s, ws.w * s, ws.t, side)


# --- generators, angles, simplicity -------------------------------------------


class Face(enum.Enum):
    """Faces of the simple wedge, named by the generators they contain."""

    H1H3 = "S(h1,h3)"  # q1 = q2
    H1H2 = "S(h1,h2)"  # q2 = q3
    H2H3 = "S(h2,h3)"  # q1 = 0

    @property
    def kind(self) -> EventKind:
        return FACE_TO_KIND[self]


FACE_TO_KIND = {Face.H1H3: EventKind.BALL12, Face.H1H2: EventKind.BALL23, Face.H2H3: EventKind.FLOOR}
KIND_TO_FACE = {v: k for k, v in FACE_TO_KIND.items()}


@dataclass(frozen=True)
class GeneratorFrame:
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    masses: MassTriple

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.h1, self.h2, self.h3])

    def normal(self, face: Face) -> np.ndarray:
        """Unit normal of a face, pointing into the wedge."""
        return face_normals(self.masses)[face]

    def to_json(self, unfolded: bool = True) -> str:
        d = {
            "masses": self.masses.to_dict(),
            "h1": self.h1.tolist(),
            "h2": self.h2.tolist(),
            "h3": self.h3.tolist(),
            "angles": {"alpha1": self.alpha1, "alpha2": self.alpha2, "beta1": self.beta1, "beta2": self.beta2},
            "mass_relation_residual": mass_relation_residual(self.masses),
        }
        if unfolded:
            try:
                atlas = unfold(self.masses)
            except MassRelationViolated:
                d["unfolded"] = None
            else:
                d["unfolded"] = {
                    "reflections": [g.tolist() for g in atlas.group],
                    "wide_generators": atlas.wide_generators.tolist(),
                    "outer_normals": atlas.outer_normals.tolist(),
                }
        return json.dumps(d, indent=2)


def generators(masses: MassTriple) -> GeneratorFrame:
    s = np.sqrt(masses.array)
    h1 = s / math.sqrt(masses.M1)
    h2 = np.array([0.0, s[1], s[2]]) / math.sqrt(masses.M2)
    h3 = np.array([0.0, 0.0, 1.0])
    a1, a2, b1, b2 = wedge_angles(masses)
    return GeneratorFrame(h1, h2, h3, a1, a2, b1, b2, masses)


def face_normals(masses: MassTriple) -> dict:
    s = np.sqrt(masses.array)
    n12 = np.array([-1.0 / s[0], 1.0 / s[1], 0.0])
    n23 = np.array([0.0, -1.0 / s[1], 1.0 / s[2]])
    return {
        Face.H1H3: n12 / np.linalg.norm(n12),
        Face.H1H2: n23 / np.linalg.norm(n23),
        Face.H2H3: np.array([1.0, 0.0, 0.0]),
    }


def wedge_angles(masses: MassTriple) -> tuple[float, float, float, float]:
    """(alpha1, alpha2, beta1, beta2) from cos^2 alpha_i = M_{i+1}/M_i and tan^2 beta_i = m_i/m_{i+1}."""
    m = masses.array
    Ms = (masses.M1, masses.M2, masses.M3)
    alpha = [math.atan2(math.sqrt(m[i]), math.sqrt(Ms[i + 1])) for i in (0, 1)]
    beta = [math.atan2(math.sqrt(m[i]), math.sqrt(m[i + 1])) for i in (0, 1)]
    return alpha[0], alpha[1], beta[0], beta[1]


def angle_relation_residual(masses: MassTriple) -> float:
    """|tan beta1 - tan alpha1 / sin alpha2| + |beta2 - alpha2|."""
    a1, a2, b1, b2 = wedge_angles(masses)
    return abs(math.tan(b1) - math.tan(a1) / math.sin(a2)) + abs(b2 - a2)


def _check_frame(e, tol: float) -> np.ndarray:
    E = np.asarray(e, dtype=float)
    if np.any(np.abs(np.linalg.norm(E, axis=1) - 1.0) > tol):
        raise NotUnit("generators must have unit length")
    if abs(np.linalg.det(E)) <= tol:
        raise NotIndependent("generators are linearly dependent")
    return E


def is_simple(e1, e2, e3, tol: float = 1e-12) -> bool:
    """<e_i, e_{i+1}> > 0 and <e1, e3> = <e1, e2><e2, e3>."""
    E = _check_frame([e1, e2, e3], tol)
    g = E @ E.T
    return bool(g[0, 1] > tol and g[1, 2] > tol and abs(g[0, 2] - g[0, 1] * g[1, 2]) <= tol)


def is_wide(g1, g2, g3, tol: float = 1e-12) -> bool:
    """All pairwise inner products strictly negative."""
    E = _check_frame([g1, g2, g3], 1e-9)
    g = E @ E.T
    return bool(g[0, 1] < -tol and g[0, 2] < -tol and g[1, 2] < -tol)


# --- the wide-mass relation ----------------------------------------------------


def wide_m2(m1: float, m3: float) -> float:
    """Positive root of m2^2 + (m1 + m3) m2 - 3 m1 m3 = 0."""
    s = m1 + m3
    disc = math.sqrt(s * s + 12.0 * m1 * m3)
    # cancellation-free form of (-s + disc) / 2
    return 6.0 * m1 * m3 / (s + disc)


def solve_wide_m2(m1: float, m3: float) -> float:
    m2 = wide_m2(m1, m3)
    if not (m1 > m2 > m3 > 0):
        raise OrderingViolation(f"solved m2 = {m2!r} does not satisfy m1 > m2 > m3 for m1={m1}, m3={m3}")
    return m2


def wide_masses(m1: float = 4.0, m3: float = 1.0) -> MassTriple:
    return MassTriple(m1, solve_wide_m2(m1, m3), m3)


def mass_relation_residual(masses: MassTriple) -> float:
    m1, m2, m3 = masses.array
    return abs(2.0 * math.sqrt(m1 * m3) - math.sqrt((m1 + m2) * (m2 + m3)))


def subspace_angle(masses: MassTriple) -> float:
    """Angle between the planes S(h1,h2) and S(h1,h3), from their normals."""
    n = face_normals(masses)
    c = abs(float(n[Face.H1H2] @ n[Face.H1H3]))
    return math.acos(min(c, 1.0))


# --- unfolding -----------------------------------------------------------------


def reflection(n: np.ndarray) -> np.ndarray:
    n = n / np.linalg.norm(n)
    return np.eye(3) - 2.0 * np.outer(n, n)


@dataclass(frozen=True)
class Atlas:
    """Six simple-wedge copies around h1.

    ``group[s]`` maps the fundamental wedge onto sector s; ``across[s][face]``
    is the sector on the other side of the given internal face of sector s.
    """

    masses: MassTriple
    group: tuple
    across: tuple
    wide_generators: np.ndarray
    outer_normals: np.ndarray

    def sector_of(self, x: np.ndarray, tol: float = 1e-12) -> int:
        n = face_normals(self.masses)
        best, score = 0, -math.inf
        for s, g in enumerate(self.group):
            y = g.T @ x
            m = min(n[Face.H1H3] @ y, n[Face.H1H2] @ y)
            if m >= -tol * max(1.0, np.linalg.norm(x)):
                return s
            if m > score:
                best, score = s, m
        return best

    def fold(self, ws: WedgeState, s: int) -> WedgeState:
        g = self.group[s]
        return WedgeState(g.T @ ws.x, g.T @ ws.w, ws.t)

    def unfold_state(self, ws: WedgeState, s: int) -> WedgeState:
        g = self.group[s]
        return WedgeState(g @ ws.x, g @ ws.w, ws.t)

    def order_of_rotation(self) -> int:
        n = face_normals(self.masses)
        rot = reflection(n[Face.H1H3]) @ reflection(n[Face.H1H2])
        P = np.eye(3)
        for k in range(1, 13):
            P = rot @ P
            if np.allclose(P, np.eye(3), atol=1e-9):
                return k
        return 0


def _find(group, g, tol=1e-9) -> int:
    for i, h in enumerate(group):
        if np.allclose(h, g, atol=tol):
            return i
    return -1


def unfold(masses: MassTriple, tol: float = RELATION_TOL) -> Atlas:
    """Dihedral atlas generated by the reflections in S(h1,h3) and S(h1,h2)."""
    res = mass_relation_residual(masses)
    if res > tol:
        raise MassRelationViolated(f"wide-mass relation residual {res:.3e} exceeds {tol:.1e}")
    n = face_normals(masses)
    R = {Face.H1H3: reflection(n[Face.H1H3]), Face.H1H2: reflection(n[Face.H1H2])}
    group = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        nxt = []
        for g in frontier:
            for r in R.values():
                h = g @ r
                if _find(group, h) < 0:
                    group.append(h)
                    nxt.append(h)
        frontier = nxt
        if len(group) > 6:
            raise MassRelationViolated("reflection group is not of order 6")
    across = tuple({f: _find(group, g @ R[f]) for f in R} for g in group)
    gens = rotated_frame(masses)
    rot = rotation(masses)
    normals = np.array([n[Face.H2H3], rot @ n[Face.H2H3], rot @ rot @ n[Face.H2H3]])
    return Atlas(masses, tuple(group), across, gens, normals)


def rotation(masses: MassTriple) -> np.ndarray:
    """Composition of the reflections in S(h1,h3) and S(h1,h2); fixes h1."""
    n = face_normals(masses)
    return reflection(n[Face.H1H3]) @ reflection(n[Face.H1H2])


def rotated_frame(masses: MassTriple) -> np.ndarray:
    """Rows h3, rho h3, rho^2 h3: the candidate wide generators.

    Defined for any masses so that the wideness of a near-relation frame
    can be reported even when the copies do not close up.
    """
    rot = rotation(masses)
    h3 = np.array([0.0, 0.0, 1.0])
    return np.array([h3, rot @ h3, rot @ rot @ h3])


def wide_wedge_defect(masses: MassTriple) -> float:
    """How far six reflected copies are from closing up around h1 (radians).

    Six copies of dihedral angle theta cover 6 theta; zero defect means they
    tile the full turn with neither overlap nor gap.
    """
    n = face_normals(masses)
    theta = math.pi - math.acos(float(np.clip(n[Face.H1H3] @ n[Face.H1H2], -1, 1)))
    return 6.0 * theta - 2.0 * math.pi


# --- triangle projection -------------------------------------------------------


def triangle_basis(masses: MassTriple) -> np.ndarray:
    """Orthonormal basis (rows) of the plane orthogonal to h1.

    First vector along the normal of S(h1,h2), second from Gram-Schmidt on
    the normal of S(h1,h3).
    """
    n = face_normals(masses)
    a = n[Face.H1H2] / np.linalg.norm(n[Face.H1H2])
    b = n[Face.H1H3] - (n[Face.H1H3] @ a) * a
    return np.vstack([a, b / np.linalg.norm(b)])


def project_triangle(x, masses: MassTriple) -> np.ndarray:
    """2D coordinates of the projection along h1; works on (..., 3) arrays."""
    return np.asarray(x, dtype=float) @ triangle_basis(masses).T


def collinearity_residual(points: np.ndarray) -> float:
    """Smallest singular value of the centred point cloud, relative to its spread."""
    P = np.asarray(points, dtype=float)
    P = P - P.mean(axis=0)
    s = np.linalg.svd(P, compute_uv=False)
    return float(s[-1] / max(s[0], 1e-300))


def projected_flight(state: PhaseState, masses: MassTriple, times) -> np.ndarray:
    """Triangle projection of the free-flight parabola at the given times."""
    ws = to_wedge(state, masses)
    c2 = np.sqrt(masses.array)
    t = np.asarray(times, dtype=float)[:, None]
    x = ws.x + t * ws.w - 0.5 * t * t * c2
    return project_triangle(x, masses)


def triangle_side_angles(masses: MassTriple) -> np.ndarray:
    """Pairwise angles (degrees) between in-plane normals of the three outer sides.

    The sides are the floor face and its images under the rotation that
    composes the two internal reflections; they are 120 degrees apart
    exactly when the six copies close up.
    """
    n = face_normals(masses)
    rot = rotation(masses)
    B = triangle_basis(masses)
    sides = [n[Face.H2H3]]
    for _ in range(2):
        sides.append(rot @ sides[-1])
    u = np.array([B @ s for s in sides])
    u /= np.linalg.norm(u, axis=1)[:, None]
    ang = []
    for i, j in ((0, 1), (1, 2), (0, 2)):
        ang.append(math.degrees(math.acos(float(np.clip(u[i] @ u[j], -1, 1)))))
    return np.array(ang)


def triangle_defect(masses: MassTriple) -> float:
    """max |side-normal angle - 120 degrees|."""
    return float(np.max(np.abs(triangle_side_angles(masses) - 120.0)))


def triangle_vertices(masses: MassTriple, d: float = 1.0) -> np.ndarray:
    """Cross-section of the wide wedge at sqrt(m).x = d, projected to 2D."""
    atlas = unfold(masses)
    c2 = np.sqrt(masses.array)
    pts = [g * (d / (c2 @ g)) for g in atlas.wide_generators]
    return project_triangle(np.array(pts), masses)


# --- grazing -------------------------------------------------------------------


def velocity_difference(ws: WedgeState, face: Face, masses: MassTriple) -> float:
    s = np.sqrt(masses.array)
    v = ws.w / s
    if face is Face.H1H3:
        return float(v[0] - v[1])
    if face is Face.H1H2:
        return float(v[1] - v[2])
    raise WrongFace("grazing is defined for the faces through h1 only")


def _next_face(ws: WedgeState, masses: MassTriple) -> tuple[Face, float]:
    ev, dt = next_event(from_wedge(ws, masses), masses)
    return KIND_TO_FACE[ev.kind], dt


def grazing_test(ws: WedgeState, face: Face, masses: MassTriple, tol: float = 1e-12) -> bool:
    """Velocity difference across ``face`` within tol of zero.

    A zero difference means the trajectory slides along the face and never
    strikes it, so the face check only applies to nonzero differences.
    """
    dv = velocity_difference(ws, face, masses)
    if abs(dv) > tol:
        nxt, _ = _next_face(ws, masses)
        if nxt is not face:
            raise WrongFace(f"next collision is on {nxt.value}, not {face.value}")
    return abs(dv) <= tol


def grazing_statements(ws: WedgeState, face: Face, masses: MassTriple, t1: float, tol: float = 1e-12, n_probe: int = 64):
    """The three equivalent statements, each evaluated directly.

    1. the velocity at t1 lies in the face (impact angle ~ 0),
    2. the velocity difference across the face is zero at t0,
    3. the flight segment on [t0, t1] stays in the face.
    """
    n = face_normals(masses)[face]
    c2 = np.sqrt(masses.array)
    w1 = ws.w - t1 * c2
    s1 = abs(n @ w1) <= tol * max(1.0, np.linalg.norm(w1))
    s2 = abs(velocity_difference(ws, face, masses)) <= tol
    t = np.linspace(0.0, t1, n_probe)[:, None]
    x = ws.x + t * ws.w - 0.5 * t * t * c2
    s3 = float(np.max(np.abs(x @ n))) <= tol * max(1.0, np.linalg.norm(ws.x))
    return bool(s1), bool(s2), bool(s3)


def impact_angle(ws: WedgeState, face: Face, masses: MassTriple) -> float:
    """Angle between the velocity and the face at the next collision on it."""
    nxt, dt = _next_face(ws, masses)
    if nxt is not face:
        raise WrongFace(f"next collision is on {nxt.value}, not {face.value}")
    n = face_normals(masses)[face]
    w1 = ws.w - dt * np.sqrt(masses.array)
    return math.asin(min(1.0, abs(n @ w1) / np.linalg.norm(w1)))


# --- independent wide-wedge event engine --------------------------------------


@dataclass(frozen=True)
class WideEvent:
    kind: EventKind
    dt: float
    sector_before: int
    sector_after: int


class WideWedge:
    """A particle under gravity -c2 in the unfolded wide wedge.

    Only the three outer planes reflect; the six internal rays through h1
    are crossed freely and the sector index changes. Crossing a ray that is
    an image of S(h1,h3) corresponds to a (1,2) collision, an image of
    S(h1,h2) to a (2,3) collision, and an outer reflection to a floor
    collision.
    """

    def __init__(self, masses: MassTriple, atlas: Atlas | None = None):
        self.masses = masses
        self.atlas = atlas or unfold(masses)
        self.c2 = np.sqrt(masses.array)
        n = face_normals(masses)
        self.inner = [{f: g @ n[f] for f in (Face.H1H3, Face.H1H2)} for g in self.atlas.group]
        self.outer = [g @ n[Face.H2H3] for g in self.atlas.group]

    def step(self, ws: WedgeState, s: int) -> tuple[WedgeState, int, WideEvent]:
        x, w = ws.x, ws.w
        cands = []
        for face, N in self.inner[s].items():
            nw = N @ w
            if nw < 0.0:
                cands.append((max(-(N @ x) / nw, 0.0), face))
        E = self.outer[s]
        a = E @ self.c2
        b = E @ w
        c0 = max(E @ x, 0.0)
        disc = math.sqrt(b * b + 2.0 * a * c0)
        tf = (b + disc) / a if b >= 0 else 2.0 * c0 / (disc - b) if disc - b > 0 else 0.0
        cands.append((tf, Face.H2H3))
        dt, face = min(cands, key=lambda c: c[0])
        x1 = x + dt * w - 0.5 * dt * dt * self.c2
        w1 = w - dt * self.c2
        if face is Face.H2H3:
            x1 = x1 - (E @ x1) * E  # snap onto the outer plane
            w1 = w1 - 2.0 * (E @ w1) * E
            s1 = s
        else:
            N = self.inner[s][face]
            x1 = x1 - (N @ x1) * N
            s1 = self.atlas.across[s][face]
        return WedgeState(x1, w1, ws.t + dt), s1, WideEvent(face.kind, dt, s, s1)

    def run(self, ws: WedgeState, n_events: int, s: int = 0):
        states, sectors, kinds = [], [], []
        for _ in range(n_events):
            ws, s, ev = self.step(ws, s)
            states.append(ws)
            sectors.append(s)
            kinds.append(int(ev.kind))
        return states, np.array(sectors), np.array(kinds, dtype=np.int8)


@dataclass
class ConjugacyReport:
    n_events: int
    kind_mismatches: int
    sector_mismatches: int
    max_position_error: float
    max_velocity_error: float
    max_time_error: float
    shadow_length: int  # events the unsynchronised run matched before drifting

    @property
    def exact(self) -> bool:
        return self.kind_mismatches == 0 and self.sector_mismatches == 0

    def within(self, tol: float) -> bool:
        return self.exact and self.max_position_error <= tol


def conjugacy_check(log: OrbitLog, tol: float = 1e-9) -> ConjugacyReport:
    """Compare the unfolded three-ball orbit with the wide-wedge engine.

    For each event the engine starts from the unfolded state before it,
    runs to its own next event, and the outcome (kind, sector, x, w, t) is
    compared with the unfolded state after it. Chaotic amplification of
    roundoff rules out one free run over thousands of events, so the step
    is resynchronised each time; the free run's agreement length is
    reported separately as ``shadow_length``.
    """
    m = log.masses
    eng = WideWedge(m)
    states, sectors = unfold_orbit(log, eng.atlas)
    prev_state = [to_wedge(log.initial, m)] + states[:-1]
    prev_sector = [0] + list(sectors[:-1])
    km = sm = 0
    ex = ew = et = 0.0
    for k in range(len(log)):
        ws, s, e = eng.step(prev_state[k], prev_sector[k])
        if int(e.kind) != int(log.kind[k]):
            km += 1
            continue
        sm += int(s != sectors[k])
        ex = max(ex, float(np.max(np.abs(ws.x - states[k].x))))
        ew = max(ew, float(np.max(np.abs(ws.w - states[k].w))))
        et = max(et, abs(ws.t - states[k].t))
    run, run_s, kinds = eng.run(to_wedge(log.initial, m), len(log))
    shadow = 0
    for k in range(len(log)):
        if kinds[k] != log.kind[k] or run_s[k] != sectors[k] or np.max(np.abs(run[k].x - states[k].x)) > tol:
            break
        shadow += 1
    return ConjugacyReport(len(log), km, sm, ex, ew, et, shadow)


def face_dictionary_check(log: OrbitLog, tol: float = 1e-9) -> int:
    """Events whose wedge contact face disagrees with the logged collision kind.

    The post-collision configuration must lie on the matching face and, for
    non-triple configurations, off the others.
    """
    m = log.masses
    n = face_normals(m)
    x = log.q * np.sqrt(m.array)
    gaps = np.column_stack([x @ n[KIND_TO_FACE[k]] for k in EventKind])
    bad = 0
    for k in range(len(log)):
        g = gaps[k]
        own = int(log.kind[k])
        scale = max(1.0, float(np.linalg.norm(x[k])))
        if abs(g[own]) > tol * scale:
            bad += 1
        elif int(np.argmin(np.abs(g))) != own and np.min(np.delete(np.abs(g), own)) > tol * scale:
            bad += 1
    return bad


def unfold_orbit(log: OrbitLog, atlas: Atlas | None = None):
    """Wide-wedge picture of a logged orbit: folded FB states plus sector tracking.

    A ball-ball collision becomes a pass-through into the neighbouring
    sector, a floor collision a reflection in the sector's outer face.
    Returns (wide states after each event, sector after each event); the
    initial state sits in sector 0.
    """
    m = log.masses
    atlas = atlas or unfold(m)
    face_of = {EventKind.BALL12: Face.H1H3, EventKind.BALL23: Face.H1H2}
    s = 0
    states, sectors = [], []
    for k in range(len(log)):
        kind = EventKind(int(log.kind[k]))
        if kind is not EventKind.FLOOR:
            # g_new = g_old R, so g_new applied to the reflected FB velocity
            # is g_old applied to the incoming one: the particle passes through
            s = atlas.across[s][face_of[kind]]
        states.append(atlas.unfold_state(to_wedge(log.state(k), m), s))
        sectors.append(s)
    return states, np.array(sectors)


def polylines(log: OrbitLog, samples_per_flight: int = 8):
    """Rows (segment id, sector id, u, v) tracing the projected orbit in the wide wedge.

    Segment ids count floor collisions, so each polyline runs from one
    floor bounce to the next.
    """
    m = log.masses
    atlas = unfold(m)
    c2 = np.sqrt(m.array)
    states, sectors = unfold_orbit(log, atlas)
    start = [to_wedge(log.initial, m)] + states[:-1]
    s_prev = np.concatenate([[0], sectors[:-1]])
    rows = []
    seg = 0
    for k in range(len(log)):
        ws = start[k]
        dt = log.t[k] - ws.t
        t = np.linspace(0.0, dt, samples_per_flight)[:, None]
        pts = project_triangle(ws.x + t * ws.w - 0.5 * t * t * c2, m)
        for u, v in pts:
            rows.append((seg, int(s_prev[k]), float(u), float(v)))
        if log.kind[k] == EventKind.FLOOR:
            seg += 1
    return rows


def write_polylines(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["segment", "sector", "u", "v"])
        for r in rows:
            wr.writerow([r[0], r[1], repr(r[2]), repr(r[3])])


# --- segment classification ----------------------------------------------------


class SegmentCase(enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    SINGLE_BALL12 = "SingleBall12"
    SINGLE_BALL23 = "SingleBall23"
    FLOOR_ONLY = "FloorOnly"
    OTHER = "Other"


_CASES = {
    (1, 2): SegmentCase.I,
    (1, 2, 1): SegmentCase.II,
    (2, 1): SegmentCase.III,
    (2, 1, 2): SegmentCase.IV,
    (1,): SegmentCase.SINGLE_BALL12,
    (2,): SegmentCase.SINGLE_BALL23,
    (): SegmentCase.FLOOR_ONLY,
}


def classify_segment(interior) -> SegmentCase:
    """Case label of the ball-ball events strictly between two floor collisions."""
    key = tuple(int(k) for k in interior)
    return _CASES.get(key, SegmentCase.OTHER)


def alternates(interior) -> bool:
    k = [int(x) for x in interior]
    return all(a != b for a, b in zip(k, k[1:]))


def census(log: OrbitLog, n_segments: int | None = None) -> tuple[dict, int]:
    """Counts of each case over the floor-to-floor segments of a log.

    Returns (counts by label, number of segments violating alternation).
    """
    counts = {c.value: 0 for c in SegmentCase}
    bad = 0
    for i, (a, b) in enumerate(log.segments()):
        if n_segments is not None and i >= n_segments:
            break
        seg = log.kind[a + 1 : b]
        counts[classify_segment(seg).value] += 1
        bad += not alternates(seg)
    return counts, bad


@dataclass(frozen=True)
class GrazingRecord:
    face: Face
    eps: float
    statements: tuple
    impact_angle: float
    contact_gap: float


def grazing_family(
    masses: MassTriple, face: Face, eps_values, height: float = 2.0, lead: float = 0.05, rng=0
) -> list[GrazingRecord]:
    """Post-collision states whose velocity difference across ``face`` is eps.

    For eps > 0 the pair starts a gap eps * lead apart and strikes the face
    after time ``lead``; for eps = 0 the pair starts in contact and slides
    along the face until the next event. Each record holds the three
    statements evaluated independently, the impact angle (nan when nothing
    strikes the face) and the largest contact gap seen over the flight.
    """
    if face is Face.H2H3:
        raise WrongFace("grazing is defined for the faces through h1 only")
    gen = np.random.default_rng(rng)
    i = 0 if face is Face.H1H3 else 1
    out = []
    base_v = np.sort(gen.uniform(-1.0, 1.0, 3))
    for eps in eps_values:
        v = base_v.copy()
        q = np.array([height, height + 0.5, height + 1.0])
        # pair (i, i+1) approaches at relative speed eps, meeting after lead
        v[i + 1] = v[i] - eps
        q[i + 1] = q[i] + eps * lead
        other = 2 if i == 0 else 0
        # keep the third ball well clear of the pair
        v[other] = v[i] + (1.0 if other == 2 else -1.0)
        state = PhaseState(q, v * masses.array, 0.0, Side.POST)
        ws = to_wedge(state, masses)
        n = face_normals(masses)[face]
        ev, t1 = next_event(state, masses)
        if eps > 0 and KIND_TO_FACE[ev.kind] is not face:
            raise WrongFace(f"family member eps={eps} reaches {ev.kind.name} first")
        st = grazing_statements(ws, face, masses, t1)
        ang = impact_angle(ws, face, masses) if eps > 0 else float("nan")
        t = np.linspace(0.0, t1, 64)[:, None]
        x = ws.x + t * ws.w - 0.5 * t * t * np.sqrt(masses.array)
        out.append(GrazingRecord(face, float(eps), st, ang, float(np.max(np.abs(x @ n)))))
    return out


def grazing_agreement(records) -> bool:
    """All three statements agree on every record."""
    return all(len(set(r.statements)) == 1 for r in records)
