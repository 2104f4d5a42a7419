"""Characteristic lines and the proper-alignment sign on the triple-collision set.

The samples live on S_{1,2}^-: all three balls in contact at height h and
separating, v1 <= v2 <= v3. From there the next event is a floor collision.
"""

from __future__ import annotations

import collections
import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .cocycle import OMEGA, fd_jacobian_T, qform_qp
from .dynamics import (
    DEFAULT_ENERGY,
    DEFAULT_EPS_SING,
    EventKind,
    MassTriple,
    PhaseState,
    Side,
    next_event,
    partition_faces,
    poincare_map,
)
from .errors import DegenerateConstraints, NextEventNotFloor, NotFound, NotMonotone, SingularEncounter


class MomClass(enum.IntEnum):
    """Sign pattern of the velocities just before the floor collision."""

    MOM1 = 1  # v1 < 0 <= v2 <= v3
    MOM2 = 2  # v1 < v2 <= 0 <= v3
    MOM3 = 3  # all velocities <= 0


@dataclass(frozen=True)
class SingularSample:
    base: PhaseState
    vchar: np.ndarray  # (dq, dp), dq = 0
    q_value: float
    mom: MomClass

    @property
    def properly_aligned(self) -> bool:
        return self.q_value >= 0.0


def triple_contact_state(h: float, v, masses: MassTriple, t: float = 0.0) -> PhaseState:
    v = np.asarray(v, dtype=float)
    return PhaseState(np.full(3, float(h)), v * masses.array, t, Side.POST)


def sample_triple_collision_set(
    masses: MassTriple, energy: float = DEFAULT_ENERGY, seed: int = 0, n: int = 1000
) -> list[PhaseState]:
    """Triple-contact states with ordered velocities on the energy shell.

    The common height h is uniform on [0, energy/M1), then the scaled
    velocity w = sqrt(m) v is uniform on the sphere of the remaining kinetic
    energy and rejected unless v1 <= v2 <= v3.
    """
    if energy <= 0:
        raise ValueError("energy must be positive")
    rng = np.random.default_rng(seed)
    m = masses.array
    h_max = energy / masses.M1
    out_h, out_v = [], []
    while sum(len(x) for x in out_h) < n:
        k = 4 * (n - sum(len(x) for x in out_h)) + 16
        h = rng.uniform(0.0, h_max, k)
        w = rng.normal(size=(k, 3))
        w /= np.linalg.norm(w, axis=1)[:, None]
        w *= np.sqrt(2.0 * (energy - masses.M1 * h))[:, None]
        v = w / np.sqrt(m)
        ok = (v[:, 0] <= v[:, 1]) & (v[:, 1] <= v[:, 2]) & (h > 0)
        out_h.append(h[ok])
        out_v.append(v[ok])
    h = np.concatenate(out_h)[:n]
    v = np.concatenate(out_v)[:n]
    return [triple_contact_state(hh, vv, masses) for hh, vv in zip(h, v)]


def _constraint_rows(base: PhaseState, masses: MassTriple) -> np.ndarray:
    return np.vstack([np.ones(3), base.p / masses.array])


def characteristic_line(base: PhaseState, masses: MassTriple, tol: float = 1e-12) -> np.ndarray:
    """Unit vector (dq = 0, dp) with sum dp = 0 and sum p dp / m = 0.

    Sign convention: the first nonzero dp component is positive.
    """
    A = _constraint_rows(base, masses)
    d = np.cross(A[0], A[1])
    scale = np.linalg.norm(A[0]) * np.linalg.norm(A[1])
    if scale == 0.0 or np.linalg.norm(d) <= tol * scale:
        raise DegenerateConstraints("constraint rows are parallel; null space is not a line")
    d /= np.linalg.norm(d)
    nz = np.flatnonzero(np.abs(d) > tol)
    if d[nz[0]] < 0:
        d = -d
    return np.concatenate([np.zeros(3), d])


def constraint_residuals(base: PhaseState, vchar: np.ndarray, masses: MassTriple) -> np.ndarray:
    return _constraint_rows(base, masses) @ vchar[3:]


def contact_tangent_basis(base: PhaseState, masses: MassTriple) -> np.ndarray:
    """Rows span the tangent space of {q1 = q2 = q3} ∩ {H = const} at ``base``."""
    m = masses.array
    grad_h = np.concatenate([m, base.p / m])
    rows = np.vstack([[1, -1, 0, 0, 0, 0], [0, 1, -1, 0, 0, 0], grad_h])
    return linalg.null_space(rows).T


def omega_annihilation(base: PhaseState, vchar: np.ndarray, masses: MassTriple) -> float:
    """max |omega(vchar, w)| over the tangent basis of the contact set."""
    W = contact_tangent_basis(base, masses)
    return float(np.max(np.abs(W @ OMEGA.T @ vchar)))


def alignment_q(base: PhaseState, vchar: np.ndarray, masses: MassTriple) -> tuple[float, bool]:
    """Q of the characteristic line: sum p (dp)^2 / m^2, and whether it is >= 0."""
    q = float(np.sum(base.p * vchar[3:] ** 2 / masses.array**2))
    return q, q >= 0.0


def floor_time(base: PhaseState, masses: MassTriple) -> float:
    """Flight time to the next event, which must be a floor collision."""
    ev, dt = next_event(base, masses)
    if ev.kind is not EventKind.FLOOR:
        raise NextEventNotFloor(f"next event is {ev.kind.name}")
    return dt


def mom_class(base: PhaseState, masses: MassTriple) -> MomClass:
    """Mom class from the velocity signs at the floor instant t1."""
    v = base.p / masses.array - floor_time(base, masses)
    if v[1] >= 0:
        return MomClass.MOM1
    if v[2] >= 0:
        return MomClass.MOM2
    return MomClass.MOM3


def mom_class_at_t0(base: PhaseState, masses: MassTriple) -> MomClass:
    """Same classification by comparing the initial velocities with t1 - t0."""
    tau = floor_time(base, masses)
    v = base.p / masses.array
    if tau <= v[1]:
        return MomClass.MOM1
    if tau <= v[2]:
        return MomClass.MOM2
    return MomClass.MOM3


def make_sample(base: PhaseState, masses: MassTriple) -> SingularSample:
    if partition_faces(base, masses) != (2, 3):
        raise ValueError("base is not a separating triple-contact state")
    vchar = characteristic_line(base, masses)
    q, _ = alignment_q(base, vchar, masses)
    return SingularSample(base, vchar, q, mom_class(base, masses))


@dataclass
class IterationResult:
    n_nonneg: int | None
    n_pos: int | None
    q_values: np.ndarray
    flags: list = field(default_factory=list)


def alignment_iteration(
    base: PhaseState,
    masses: MassTriple,
    N: int = 200,
    step: float = 1e-6,
    vchar: np.ndarray | None = None,
    eps_sing: float = DEFAULT_EPS_SING,
    mono_tol: float = 1e-6,
) -> IterationResult:
    """Transport the characteristic line with finite-difference Jacobians.

    Returns the first n with Q >= 0 and the first with Q > 0. Raises
    NotFound if Q stays negative for N steps, NotMonotone if the transported
    Q decreases by more than ``mono_tol`` (relative), and SingularEncounter
    (with the partial result attached) on a near-singular event.
    """
    v = characteristic_line(base, masses) if vchar is None else np.array(vchar, dtype=float)
    x = base
    qs = [qform_qp(x, v[:3], v[3:], masses)]
    flags = []
    n_nonneg = 0 if qs[0] >= 0 else None
    n_pos = 0 if qs[0] > 0 else None
    n = 0
    while n_pos is None and n < N:
        try:
            J = fd_jacobian_T(x, masses, step, eps_sing)
            x, _ = poincare_map(x, masses, eps_sing)
        except SingularEncounter as exc:
            exc.partial = IterationResult(n_nonneg, n_pos, np.array(qs), ["singular"])
            raise
        v = J @ v
        n += 1
        q = qform_qp(x, v[:3], v[3:], masses)
        scale = np.linalg.norm(v[:3]) * np.linalg.norm(v[3:]) + np.sum(np.abs(x.p) * v[3:] ** 2 / masses.array**2)
        if q < qs[-1] - mono_tol * max(scale, 1e-300):
            flags.append(f"decrease at n={n}")
            raise NotMonotone(f"transported Q fell from {qs[-1]:.6e} to {q:.6e} at step {n}")
        qs.append(q)
        if n_nonneg is None and q >= 0:
            n_nonneg = n
        if q > 0:
            n_pos = n
    if n_nonneg is None:
        raise NotFound(f"characteristic line stayed outside the closed cone for {N} steps", n_max=N)
    return IterationResult(n_nonneg, n_pos, np.array(qs), flags)


SCAN_FIELDS = ["h", "p1", "p2", "p3", "Q", "mom", "n_cross_nonneg", "n_cross_pos", "flags"]


def alignment_scan(
    masses: MassTriple,
    energy: float = DEFAULT_ENERGY,
    seed: int = 0,
    n: int = 10_000,
    iterate: int = 1000,
    N: int = 200,
    step: float = 1e-6,
    eps_sing: float = DEFAULT_EPS_SING,
):
    """Sample the triple-collision set, classify, and iterate misaligned lines.

    The first ``iterate`` samples with Q < 0 are transported forward; others
    get empty crossing columns. Returns (rows, crossing histogram).
    """
    rows = []
    hist = collections.Counter()
    left = iterate
    for base in sample_triple_collision_set(masses, energy, seed, n):
        s = make_sample(base, masses)
        n0 = n1 = None
        flag = ""
        if not s.properly_aligned and left > 0:
            left -= 1
            try:
                r = alignment_iteration(base, masses, N, step, s.vchar, eps_sing)
                n0, n1 = r.n_nonneg, r.n_pos
                hist[n0] += 1
            except SingularEncounter:
                flag = "singular"
            except NotMonotone:
                flag = "not_monotone"
            except NotFound:
                flag = "not_found"
        elif s.properly_aligned:
            n0 = 0
            n1 = 0 if s.q_value > 0 else None
        rows.append((float(base.q[0]), *map(float, base.p), s.q_value, s.mom.name, n0, n1, flag))
    return rows, dict(sorted(hist.items()))


def write_scan_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_FIELDS)
        for r in rows:
            w.writerow([repr(r[0]), repr(r[1]), repr(r[2]), repr(r[3]), repr(r[4]), r[5],
                        "" if r[6] is None else r[6], "" if r[7] is None else r[7], r[8]])
