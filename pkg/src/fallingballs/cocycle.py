"""Tangent cocycle of the collision map.

Tangent vectors are 6-vectors ``(dxi, deta)`` with ``dxi`` first. In these
coordinates the flow derivative is the identity, so the derivative of the
Poincare map is the derivative of the collision map alone:

    floor      [[I, 0], [B, I]]          B = diag(1, beta, 0)
    balls 1-2  [[M1, U1], [0, M1.T]]     U1 = diag(0, -alpha1, 0)
    balls 2-3  [[M2, U2], [0, M2.T]]     U2 = diag(0, 0, -alpha2)

with beta = -2/(m1 v1^-) and
alpha_i = 2 m_i m_{i+1} (m_i - m_{i+1}) (v_i^- - v_{i+1}^-) / (m_i + m_{i+1})^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import (
    DEFAULT_EPS_SING,
    CollisionEvent,
    EventKind,
    MassTriple,
    PhaseState,
    next_event,
)
from .errors import SignViolation, SingularEncounter

OMEGA = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])
FLOW_VECTOR = np.array([0.0, 0.0, 0.0, -1.0, 0.0, 0.0])


@dataclass(frozen=True)
class TangentVec:
    dxi: np.ndarray
    deta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dxi", np.asarray(self.dxi, dtype=float).reshape(3))
        object.__setattr__(self, "deta", np.asarray(self.deta, dtype=float).reshape(3))

    @classmethod
    def from_array(cls, v) -> "TangentVec":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dxi, self.deta])


@dataclass(frozen=True)
class HVTangent:
    dh: np.ndarray
    dv: np.ndarray


def beta_coefficient(v1_pre: float, masses: MassTriple) -> float:
    return -2.0 / (masses.m1 * v1_pre)


def alpha_coefficient(i: int, vi_pre: float, vj_pre: float, masses: MassTriple) -> float:
    m = masses.array
    a, b = m[i - 1], m[i]
    return 2.0 * a * b * (a - b) * (vi_pre - vj_pre) / (a + b) ** 2


def alpha_bound(masses: MassTriple, energy: float) -> float:
    """Energy bound 4 sqrt(2 c m1^3) / (m3^2 sqrt(m3)) on both alpha coefficients."""
    m1, m3 = masses.m1, masses.m3
    return 4.0 * math.sqrt(2.0 * energy * m1**3) / (m3**2 * math.sqrt(m3))


def _m_blocks(masses: MassTriple) -> tuple[np.ndarray, np.ndarray]:
    g1, g2 = masses.gammas
    M1 = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 1.0 + g1], [0.0, 0.0, 1.0]])
    M2 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0 - g2, -1.0]])
    return M1, M2


def ball_block(i: int, masses: MassTriple) -> np.ndarray:
    """The 3x3 block M_i acting on dxi at a collision of balls i and i+1."""
    return _m_blocks(masses)[i - 1]


def coefficient(kind: EventKind, v_pre: Sequence[float], masses: MassTriple) -> float:
    """beta for a floor event, alpha_i for a ball event; must be positive."""
    kind = EventKind(kind)
    if kind is EventKind.FLOOR:
        if not v_pre[0] < 0.0:
            raise SignViolation(f"floor event needs v1^- < 0, got {v_pre[0]}")
        c = beta_coefficient(v_pre[0], masses)
    else:
        i = int(kind)
        c = alpha_coefficient(i, v_pre[i - 1], v_pre[i], masses)
    if not c > 0.0:
        raise SignViolation(f"{kind.name} coefficient must be positive, got {c}")
    return c


def collision_monodromy(
    event: CollisionEvent | EventKind, masses: MassTriple, v_pre: Sequence[float] | None = None
) -> np.ndarray:
    """6x6 derivative of one collision map in (xi, eta) coordinates."""
    if isinstance(event, CollisionEvent):
        kind, v_pre = event.kind, event.v_pre
    else:
        kind = EventKind(event)
    c = coefficient(kind, v_pre, masses)
    D = np.eye(6)
    if kind is EventKind.FLOOR:
        D[3, 0] = 1.0
        D[4, 1] = c
        return D
    M = ball_block(int(kind), masses)
    D[:3, :3] = M
    D[3:, 3:] = M.T
    j = int(kind)  # alpha sits on the diagonal entry of ball i+1
    D[j, 3 + j] = -c
    return D


def monodromies(kinds: np.ndarray, v_pre: np.ndarray, masses: MassTriple) -> np.ndarray:
    """Vectorised :func:`collision_monodromy` over an orbit, shape (n, 6, 6)."""
    kinds = np.asarray(kinds).astype(int)
    v_pre = np.asarray(v_pre, dtype=float)
    n = len(kinds)
    coef = event_coefficients(kinds, v_pre, masses)
    if np.any(~(coef > 0)):
        bad = int(np.flatnonzero(~(coef > 0))[0])
        raise SignViolation(f"non-positive coefficient {coef[bad]} at event {bad}")
    M1, M2 = _m_blocks(masses)
    out = np.broadcast_to(np.eye(6), (n, 6, 6)).copy()
    fl = kinds == 0
    out[fl, 3, 0] = 1.0
    out[fl, 4, 1] = coef[fl]
    for j, M in ((1, M1), (2, M2)):
        sel = kinds == j
        out[sel, :3, :3] = M
        out[sel, 3:, 3:] = M.T
        out[sel, j, 3 + j] = -coef[sel]
    return out


def event_coefficients(kinds: np.ndarray, v_pre: np.ndarray, masses: MassTriple) -> np.ndarray:
    """beta / alpha_1 / alpha_2 for every logged event."""
    kinds = np.asarray(kinds).astype(int)
    v_pre = np.asarray(v_pre, dtype=float)
    m = masses.array
    coef = np.empty(len(kinds))
    fl = kinds == 0
    with np.errstate(divide="ignore"):
        coef[fl] = -2.0 / (m[0] * v_pre[fl, 0])
    for j in (1, 2):
        sel = kinds == j
        a, b = m[j - 1], m[j]
        coef[sel] = 2 * a * b * (a - b) * (v_pre[sel, j - 1] - v_pre[sel, j]) / (a + b) ** 2
    return coef


def cocycle_product(events: Iterable[CollisionEvent], masses: MassTriple) -> np.ndarray:
    """d_x T^n: later factors multiply from the left."""
    D = np.eye(6)
    for ev in events:
        D = collision_monodromy(ev, masses) @ D
    return D


def orbit_cocycle(log, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Cumulative cocycle over logged events ``start .. stop-1``."""
    stop = len(log) if stop is None else stop
    mats = monodromies(log.kind[start:stop], log.v_pre[start:stop], log.masses)
    D = np.eye(6)
    for M in mats:
        D = M @ D
    return D


def qform_xieta(v) -> float:
    a = v.as_array() if isinstance(v, TangentVec) else np.asarray(v, dtype=float)
    return float(a[:3] @ a[3:])


def qform_qp(state: PhaseState, dq, dp, masses: MassTriple) -> float:
    """Q(dq, dp) = sum dq_i dp_i + p_i dp_i^2 / m_i^2 at the base state."""
    dq = np.asarray(dq, dtype=float)
    dp = np.asarray(dp, dtype=float)
    m = masses.array
    return float(np.sum(dq * dp + state.p * dp**2 / m**2))


def push_to_hv(state: PhaseState, dq, dp, masses: MassTriple) -> HVTangent:
    """Derivative of (q, p) -> (h, v) with h_i = p_i^2/(2 m_i) + m_i q_i, v_i = p_i/m_i."""
    m = masses.array
    dq = np.asarray(dq, dtype=float)
    dp = np.asarray(dp, dtype=float)
    v = state.p / m
    return HVTangent(m * dq + v * dp, dp / m)


def cw_norm(dxi, masses: MassTriple) -> float:
    """Mass-weighted difference norm on dxi, with the convention dxi_4 = 0.

    ||dxi||^2 = sum_{i=1..3} (dxi_{i+1} - dxi_i)^2 / m_i.  Restricted to the
    cone subspace (dxi_1 = 0) this is exactly invariant under both ball blocks
    M_1 and M_2; the two-term sum (i = 1, 2 only) is invariant under M_1 alone.
    """
    x = np.append(np.asarray(dxi, dtype=float), 0.0)
    d = np.diff(x)
    return float(math.sqrt(np.sum(d**2 / masses.array)))


def cw_norm_two_term(dxi, masses: MassTriple) -> float:
    x = np.asarray(dxi, dtype=float)
    d = np.diff(x)
    return float(math.sqrt(np.sum(d**2 / masses.array[:2])))


def symplectic_defect(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M.T @ OMEGA @ M - OMEGA)))


def monodromy_to_json(M) -> str:
    return json.dumps(np.asarray(M, dtype=float).tolist())


def monodromy_from_json(text: str) -> np.ndarray:
    M = np.array(json.loads(text), dtype=float)
    if M.shape != (6, 6):
        raise ValueError(f"expected a 6x6 matrix, got shape {M.shape}")
    return M


# --- finite-difference Jacobian of T in physical coordinates -----------------


def _event_time(kind: EventKind, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # smooth continuation of the closed-form root for the given face
    if kind is EventKind.FLOOR:
        q1, v1 = q[:, 0], v[:, 0]
        s = np.sqrt(v1 * v1 + 2.0 * q1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(v1 >= 0.0, v1 + s, 2.0 * q1 / (s - v1))
    i = int(kind) - 1
    return (q[:, i + 1] - q[:, i]) / (v[:, i] - v[:, i + 1])


def aligned_map(y: np.ndarray, kind: EventKind, tau: float, masses: MassTriple) -> np.ndarray:
    """Flow rows of ``y = (q, p)`` to their own impact on face ``kind``, collide,
    then fly for the residual time ``tau - t_own`` (possibly negative).

    Every image carries the same time stamp as the unperturbed image, which
    makes the map a smooth symplectic extension of T off the section.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m = masses.array
    q, v = y[:, :3], y[:, 3:] / m
    t_own = _event_time(kind, q, v)[:, None]
    q = q + v * t_own - 0.5 * t_own**2
    v = v - t_own
    v = _collide_rows(kind, v, masses)
    r = tau - t_own
    q = q + v * r - 0.5 * r**2
    v = v - r
    return np.hstack([q, v * m])


def _collide_rows(kind: EventKind, v: np.ndarray, masses: MassTriple) -> np.ndarray:
    out = v.copy()
    if kind is EventKind.FLOOR:
        out[:, 0] = -v[:, 0]
        return out
    i = int(kind) - 1
    g = masses.gammas[i]
    out[:, i] = g * v[:, i] + (1 - g) * v[:, i + 1]
    out[:, i + 1] = (1 + g) * v[:, i] - g * v[:, i + 1]
    return out


def fd_jacobian_T(
    state: PhaseState,
    masses: MassTriple,
    step: float = 1e-6,
    eps_sing: float = DEFAULT_EPS_SING,
    richardson: bool = True,
) -> np.ndarray:
    """Central-difference Jacobian of the Poincare map in (q, p) coordinates.

    Probes are pushed through :func:`aligned_map` for the base state's next
    collision face, so the result is the derivative of the time-aligned
    extension of T: it maps the flow direction at x to the flow direction at
    Tx and is symplectic. Probes are never re-routed to a different face, so
    near a singularity this is the one-sided derivative on the branch the base
    orbit takes (the same branch the analytic cocycle follows). Only a base
    state closer than ``eps_sing`` to a singularity raises
    :class:`SingularEncounter`.
    """
    ev, tau = next_event(state, masses, eps_sing)
    if ev.near_singular:
        raise SingularEncounter(f"base state is {ev.margin:.2e} from a singularity")
    x = state.as_vector()

    def central(h):
        probes = np.vstack([x + h * np.eye(6), x - h * np.eye(6)])
        img = aligned_map(probes, ev.kind, tau, masses)
        return (img[:6] - img[6:]).T / (2 * h)

    J = central(step)
    if richardson:
        J = (4.0 * central(step / 2) - J) / 3.0
    return J
