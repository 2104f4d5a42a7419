"""Cone-field certificates for the tangent cocycle.

Everything lives on the 4-dimensional subspace V = {dxi_1 = deta_1 = 0},
coordinates ``(dxi_2, dxi_3, deta_2, deta_3)``. On V the form
Q = <dxi, deta> has the symmetric matrix ``J = [[0, I], [I, 0]] / 2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
from scipy import linalg, optimize

from .cocycle import TangentVec, event_coefficients, monodromies, qform_xieta
from .dynamics import EventKind, MassTriple, OrbitLog, PhaseState, simulate
from .errors import NoSegments, NotFound, NotMonotone, SubspaceViolation

V_INDEX = np.array([1, 2, 4, 5])
J_V = 0.5 * np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
SUFFICIENT_EXPANSION = 3.0
ENTRY_RTOL = 64 * np.finfo(float).eps


class ConePosition(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"
    INVALID = "invalid"


def _as_array(v) -> np.ndarray:
    return v.as_array() if isinstance(v, TangentVec) else np.asarray(v, dtype=float)


def cone_position(v, tol: float = 1e-12) -> ConePosition:
    a = _as_array(v)
    scale = max(1.0, float(a @ a))
    if abs(a[0]) > tol * math.sqrt(scale) or abs(a[3]) > tol * math.sqrt(scale):
        return ConePosition.INVALID
    q = qform_xieta(a)
    if q > tol * scale:
        return ConePosition.INTERIOR
    if q < -tol * scale:
        return ConePosition.EXTERIOR
    return ConePosition.BOUNDARY


def to_V(v) -> np.ndarray:
    return _as_array(v)[V_INDEX]


def from_V(u) -> np.ndarray:
    out = np.zeros(6)
    out[V_INDEX] = u
    return out


def L1_basis() -> np.ndarray:
    """Rows span L1 ∩ V (deta = 0)."""
    return np.array([from_V([1, 0, 0, 0]), from_V([0, 1, 0, 0])])


def L2_basis() -> np.ndarray:
    """Rows span L2 ∩ V (dxi = 0)."""
    return np.array([from_V([0, 0, 1, 0]), from_V([0, 0, 0, 1])])


def restrict(M, tol: float = 1e-12) -> np.ndarray:
    """Restriction of a 6x6 matrix to V, checking that V is invariant."""
    M = np.asarray(M, dtype=float)
    leak = M[np.ix_([0, 3], V_INDEX)]
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(leak)) > tol * scale:
        raise SubspaceViolation(f"matrix maps V outside V (leak {np.max(np.abs(leak)):.3e})")
    return M[np.ix_(V_INDEX, V_INDEX)]


def gain_matrix(M) -> np.ndarray:
    """Symmetric matrix of v -> Q(Mv) - Q(v) on V."""
    A = restrict(M)
    G = A.T @ J_V @ A - J_V
    return 0.5 * (G + G.T)


def q_monotone_defect(M) -> float:
    """Smallest eigenvalue of the Q-gain form on V; >= 0 means Q-monotone."""
    return float(np.linalg.eigvalsh(gain_matrix(M))[0])


def q_monotone_defects(mats: np.ndarray) -> np.ndarray:
    """Batched :func:`q_monotone_defect` for an array of shape (n, 6, 6)."""
    mats = np.asarray(mats, dtype=float)
    leak = np.abs(mats[:, [0, 3]][:, :, V_INDEX]).max(axis=(1, 2))
    scale = np.maximum(1.0, np.abs(mats).max(axis=(1, 2)))
    if np.any(leak > 1e-12 * scale):
        raise SubspaceViolation("a matrix maps V outside V")
    A = mats[:, V_INDEX][:, :, V_INDEX]
    G = np.swapaxes(A, 1, 2) @ J_V @ A - J_V
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    return np.linalg.eigvalsh(G)[:, 0]


# --- least expansion coefficient ---------------------------------------------


def sigma(M, tol: float = 1e-9) -> float:
    """Least expansion coefficient inf_{Q(v)>0} sqrt(Q(Mv)/Q(v)).

    Write the ratio as 1 + G(v)/Q(v) with G the Q-gain form. If G is
    positive definite the ratio blows up at the cone boundary, so the infimum
    is attained inside the cone at a stationary point, i.e. at a real
    eigenvector of the pencil (G, J) with Q > 0. If G is singular and its
    kernel meets the closed cone, the ratio tends to 1 there and sigma = 1.
    """
    G = gain_matrix(M)
    g, E = np.linalg.eigh(G)
    # roundoff level of forming A^T J A
    noise = 64 * np.finfo(float).eps * np.linalg.norm(restrict(M), 2) ** 2
    if g[0] >= -max(noise, tol):
        ker = E[:, g <= noise]
        if ker.shape[1] and np.linalg.eigvalsh(ker.T @ J_V @ ker)[-1] >= -tol:
            return 1.0
    else:
        # G indefinite: monotone on the cone only if G >= 0 on its boundary
        _check_copositive(G, tol)
    w, vecs = linalg.eig(G, J_V)
    best = math.inf
    keep = np.isfinite(w) & (np.abs(w.imag) <= tol * np.maximum(1.0, np.abs(w)))
    w, vecs = w[keep].real, vecs[:, keep]
    # group repeated eigenvalues: a Q > 0 direction may exist only in the span
    for lam in np.unique(np.round(w, 9)):
        grp = vecs[:, np.abs(w - lam) <= 1e-8 * max(1.0, abs(lam))]
        B = linalg.orth(np.hstack([grp.real, grp.imag]))
        if B.shape[1] and np.linalg.eigvalsh(B.T @ J_V @ B)[-1] > tol:
            best = min(best, float(lam))
    if not math.isfinite(best):
        return 1.0
    if best < -tol:
        raise NotMonotone(f"expansion ratio {1 + best:.6e} < 1 inside the cone")
    return math.sqrt(1.0 + max(best, 0.0))


def _check_copositive(G: np.ndarray, tol: float, n: int = 4096) -> None:
    """Raise NotMonotone if G < 0 somewhere on the cone boundary Q = 0."""
    rng = np.random.default_rng(0)
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(n, 2))
    # (a, b) with a.b = 0 spans the boundary of the cone on V
    b -= (np.sum(a * b, axis=1) / np.sum(a * a, axis=1))[:, None] * a
    U = np.hstack([a, b])
    U /= np.linalg.norm(U, axis=1)[:, None]
    vals = np.einsum("ij,jk,ik->i", U, G, U)
    if vals.min() < -tol * max(1.0, np.abs(G).max()):
        raise NotMonotone(f"Q-gain form is negative ({vals.min():.3e}) on the cone boundary")


def _excess(u: np.ndarray, G: np.ndarray) -> tuple[float, np.ndarray]:
    """G(u)/Q(u) and its gradient on the open cone (+inf outside, with a roundoff margin)."""
    Ju = J_V @ u
    qv = u @ Ju
    if qv <= 1e-13 * (u @ u):
        return math.inf, np.zeros_like(u)
    Gu = G @ u
    f = (u @ Gu) / qv
    return f, 2.0 * (Gu - f * Ju) / qv


def sigma_oracle(
    M, n_samples: int = 100_000, rng: np.random.Generator | int | None = 0, n_polish: int = 4, tol: float = 1e-9
) -> float:
    """Randomised estimate of sigma independent of the eigen-solver.

    Draws ``n_samples`` vectors of V inside the cone, evaluates the expansion
    ratio directly, then polishes the best ``n_polish`` samples by a local
    quasi-Newton minimisation of the same ratio (the quotient is scale
    invariant, so the search runs in unnormalised coordinates).
    """
    rng = np.random.default_rng(rng)
    G = gain_matrix(M)
    U = rng.normal(size=(n_samples, 4))
    qv = np.einsum("ij,jk,ik->i", U, J_V, U)
    U[qv < 0, 2:] *= -1.0  # flips the sign of Q
    qv = np.abs(qv)
    keep = qv > 1e-12
    U, qv = U[keep], qv[keep]
    r = np.einsum("ij,jk,ik->i", U, G, U) / qv
    if np.any(r < -tol):
        raise NotMonotone(f"sampled expansion ratio {1 + r.min()} < 1")
    values = [r.min()]
    for i in np.argsort(r)[:n_polish]:
        u0 = U[i] / np.linalg.norm(U[i])
        res = optimize.minimize(_excess, u0, args=(G,), jac=True, method="BFGS", options={"gtol": 1e-14})
        if math.isfinite(res.fun):
            values.append(res.fun)
    return math.sqrt(1.0 + max(min(values), 0.0))


def cumulative_cocycles(log: OrbitLog, start: int = 0, stop: int | None = None) -> np.ndarray:
    """d T^n for n = 1 .. (stop - start), starting at logged state ``start - 1``."""
    stop = len(log) if stop is None else stop
    mats = monodromies(log.kind[start:stop], log.v_pre[start:stop], log.masses)
    out = np.empty_like(mats)
    D = np.eye(6)
    for k, M in enumerate(mats):
        D = M @ D
        out[k] = D
    return out


J_V_INV = 2.0 * np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
# row of the full tangent vector whose square each event kind adds to Q
_GAIN_ROW = {EventKind.FLOOR: 1, EventKind.BALL12: 4, EventKind.BALL23: 5}


def sigma_from_factor(R: np.ndarray, resolve: float = 1e-8) -> float:
    """sigma for a Q-gain form given as G = R^T R on V.

    Eigenvectors of the pencil (G, J) with eigenvalue mu != 0 correspond to
    eigenvectors y of the symmetric matrix S = R J^{-1} R^T, with
    Q(v) = mu |y|^2. So the admissible stationary values are the positive
    eigenvalues of S, and sigma^2 = 1 + the smallest. S has two positive
    eigenvalues when G is definite; one of them collapses to zero exactly
    when the kernel of G meets the closed cone, and then sigma = 1.
    Eigenvalues below ``resolve`` count as zero.
    """
    R = np.asarray(R, dtype=float)
    S = R @ J_V_INV @ R.T
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    # float64 resolves eigenvalues only down to about eps * |S|; redo the
    # 4x4 problem in extended precision from the exact entries of R when
    # the small ones are near that level
    if np.finfo(float).eps * np.abs(w).max() > 1e-12 * max(np.abs(w).min(), resolve):
        digits = 30 + int(math.log10(np.abs(w).max() / max(np.abs(w).min(), resolve)))
        with mpmath.workdps(digits):
            Rm = mpmath.matrix(R.tolist())
            ev = mpmath.eigsy(Rm * mpmath.matrix(J_V_INV.tolist()) * Rm.T, eigvals_only=True)
            w = np.sort(np.array([float(x) for x in ev]))
    pos = w[w > resolve]
    if pos.size < 2:
        return 1.0
    return math.sqrt(1.0 + pos[0])


class GainFactor:
    """Running triangular factor R with R^T R = Q-gain form of d_xT^n on V.

    Each event adds g * (c . v)^2 with g its beta/alpha coefficient and c a
    row of the current cumulative cocycle, so the gain of a long product is
    a sum of positive rank-one terms and never suffers from the cancellation
    in D^T J D - J.
    """

    def __init__(self):
        self.R = np.zeros((4, 4))
        self.D = np.eye(6)

    def push(self, kind: int, coef: float, M: np.ndarray) -> None:
        row = math.sqrt(coef) * self.D[_GAIN_ROW[EventKind(int(kind))], V_INDEX]
        self.R = np.linalg.qr(np.vstack([self.R, row]), mode="r")
        self.D = M @ self.D

    def sigma(self) -> float:
        return sigma_from_factor(self.R)

    def gain(self) -> np.ndarray:
        return self.R.T @ self.R


def sigma_trace(log: OrbitLog, n_max: int | None = None, cap: float = 100.0) -> np.ndarray:
    """sigma(d_x T^n) for n = 1, 2, ... until ``n_max`` events or sigma > cap."""
    n_max = len(log) if n_max is None else min(n_max, len(log))
    kinds = log.kind[:n_max]
    mats = monodromies(kinds, log.v_pre[:n_max], log.masses)
    coefs = event_coefficients(kinds, log.v_pre[:n_max], log.masses)
    acc = GainFactor()
    out = []
    for k, c, M in zip(kinds, coefs, mats):
        acc.push(k, c, M)
        out.append(acc.sigma())
        if out[-1] > cap:
            break
    return np.array(out)


def first_passage(trace: Sequence[float], level: float = SUFFICIENT_EXPANSION) -> int | None:
    """Smallest n (1-based) with sigma_n > level, or None."""
    idx = np.flatnonzero(np.asarray(trace) > level)
    return int(idx[0]) + 1 if idx.size else None


# --- eventual strict monotonicity from the Lagrangian subspaces ----------------


def _restricted_gain(D: np.ndarray, basis: np.ndarray) -> np.ndarray:
    img = basis @ D.T  # rows are D b
    G = img[:, :3] @ img[:, 3:].T
    return 0.5 * (G + G.T)


def lagrangian_entry(D: np.ndarray, which: int, rtol: float = ENTRY_RTOL) -> bool:
    """True if Q(D v) > 0 for every nonzero v of L1 ∩ V (which=1) or L2 ∩ V (which=2).

    The smallest eigenvalue of the induced 2x2 form must beat a roundoff
    floor ``rtol * |D_xi| * |D_eta|`` on the image, so cancellation noise
    cannot fake an entry.
    """
    basis = L1_basis() if which == 1 else L2_basis()
    img = basis @ D.T
    floor = rtol * np.linalg.norm(img[:, :3]) * np.linalg.norm(img[:, 3:])
    w = np.linalg.eigvalsh(_restricted_gain(D, basis))
    return bool(w[0] > floor)


@dataclass(frozen=True)
class EntryTimes:
    k1: int
    k2: int
    floor_bound: int | None
    ball_bound: int | None


def lagrangian_entry_times(log: OrbitLog, rtol: float = ENTRY_RTOL) -> EntryTimes:
    """First n at which L1 ∩ V resp. L2 ∩ V is mapped into the open cone.

    Also reports the step count of the third floor collision and the step
    count by which both ball-ball kinds have occurred (``None`` if not in log).
    """
    mats = monodromies(log.kind, log.v_pre, log.masses)
    D = np.eye(6)
    k1 = k2 = None
    for n, M in enumerate(mats, start=1):
        D = M @ D
        D /= np.abs(D).max()  # entry is scale invariant
        if k1 is None and lagrangian_entry(D, 1, rtol):
            k1 = n
        if k2 is None and lagrangian_entry(D, 2, rtol):
            k2 = n
        if k1 is not None and k2 is not None:
            break
    fl = np.flatnonzero(log.kind == EventKind.FLOOR)
    floor_bound = int(fl[2]) + 1 if len(fl) >= 3 else None
    seen = [np.flatnonzero(log.kind == k) for k in (EventKind.BALL12, EventKind.BALL23)]
    ball_bound = int(max(s[0] for s in seen)) + 1 if all(len(s) for s in seen) else None
    if k1 is None:
        raise NotFound("L1 never entered the open cone", n_max=len(log))
    if k2 is None:
        raise NotFound("L2 never entered the open cone", n_max=len(log))
    return EntryTimes(k1, k2, floor_bound, ball_bound)


# --- Lyapunov spectrum -------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSpectrum:
    per_event: np.ndarray
    per_time: np.ndarray
    n_events: int
    elapsed: float

    def to_dict(self) -> dict:
        return {
            "per_event": self.per_event.tolist(),
            "per_time": self.per_time.tolist(),
            "n_events": self.n_events,
            "elapsed_time": self.elapsed,
        }


def qr_exponents(mats) -> np.ndarray:
    """Lyapunov exponents per factor of a matrix product, by repeated QR."""
    Qm = None
    S = None
    n = 0
    for M in mats:
        if Qm is None:
            Qm = np.eye(M.shape[0])
            S = np.zeros(M.shape[0])
        Qm, R = np.linalg.qr(M @ Qm)
        d = np.diag(R)
        S += np.log(np.abs(d))
        Qm = Qm * np.sign(d)
        n += 1
    if not n:
        raise NoSegments("no matrices supplied")
    return np.sort(S / n)[::-1]


def lyapunov_spectrum(log: OrbitLog, masses: MassTriple | None = None) -> LyapunovSpectrum:
    masses = masses or log.masses
    mats = monodromies(log.kind, log.v_pre, masses)
    lam = qr_exponents(mats)
    elapsed = float(log.t[-1] - log.initial.t)
    return LyapunovSpectrum(lam, lam * len(log) / elapsed, len(log), elapsed)


def fd_lyapunov_spectrum(log: OrbitLog, step: float = 1e-6) -> LyapunovSpectrum:
    """Same spectrum from finite-difference Jacobians in (q, p) coordinates."""
    from .cocycle import fd_jacobian_T

    def jacobians():
        for k in range(len(log)):
            yield fd_jacobian_T(log.state(k - 1), log.masses, step, log.eps_sing)

    lam = qr_exponents(jacobians())
    elapsed = float(log.t[-1] - log.initial.t)
    return LyapunovSpectrum(lam, lam * len(log) / elapsed, len(log), elapsed)


# --- strict unboundedness ------------------------------------------------------


@dataclass
class QTrace:
    values: np.ndarray  # Q_0 .. Q_N
    kinds: np.ndarray  # kind of event n (1-based), length N

    def is_nondecreasing(self, rtol: float = 1e-9) -> bool:
        q = self.values
        slack = rtol * np.maximum(1.0, np.abs(q[:-1]))
        return bool(np.all(np.diff(q) >= -slack))

    def crossing(self, threshold: float) -> int | None:
        idx = np.flatnonzero(self.values > threshold)
        return int(idx[0]) if idx.size else None

    def rows(self):
        yield 0, float(self.values[0]), ""
        for n in range(1, len(self.values)):
            yield n, float(self.values[n]), EventKind(int(self.kinds[n - 1])).name


def q_trace(log: OrbitLog, v, n_max: int | None = None, stop_above: float | None = None) -> QTrace:
    """Q(d_x T^n v) along a logged orbit."""
    n_max = len(log) if n_max is None else min(n_max, len(log))
    mats = monodromies(log.kind[:n_max], log.v_pre[:n_max], log.masses)
    x = _as_array(v).copy()
    vals = [qform_xieta(x)]
    for M in mats:
        x = M @ x
        vals.append(qform_xieta(x))
        if stop_above is not None and vals[-1] > stop_above:
            break
    return QTrace(np.array(vals), log.kind[: len(vals) - 1].copy())


def unboundedness_trace(
    x: PhaseState, v, N: int, masses: MassTriple, stop_above: float | None = None, eps_sing: float = 1e-12
) -> QTrace:
    """Simulate N events from ``x`` and return the Q-trace of ``v``.

    A singular encounter propagates with the partial trace attached.
    """
    from .errors import SingularEncounter

    pos = cone_position(v)
    if pos in (ConePosition.INVALID, ConePosition.EXTERIOR):
        raise ValueError(f"vector must lie in the closed cone, got {pos.value}")
    try:
        log = simulate(x, masses, N, eps_sing)
    except SingularEncounter as exc:
        if exc.partial is not None and len(exc.partial):
            exc.partial = q_trace(exc.partial, v, stop_above=stop_above)
        raise
    return q_trace(log, v, stop_above=stop_above)


def closure_vectors(n: int, rng: np.random.Generator | int | None = 0) -> np.ndarray:
    """Menu of closed-cone unit vectors: the L1/L2 bases, then alternately a
    random vector of L1 or L2 (boundary) and two random interior vectors."""
    rng = np.random.default_rng(rng)
    out = list(L1_basis()) + list(L2_basis())
    while len(out) < n:
        u = rng.normal(size=4)
        if len(out) % 3 == 0:
            u[2:] = 0.0 if rng.random() < 0.5 else u[2:]
            u[:2] = 0.0 if np.any(u[2:]) else u[:2]
        elif u[:2] @ u[2:] < 0:
            u[2:] *= -1.0
        out.append(from_V(u / np.linalg.norm(u)))
    return np.array(out[:n])


# --- uniform gain estimate on designated collision windows -------------------


@dataclass
class LambdaEstimate:
    value: float
    per_orbit: np.ndarray
    n_windows: int
    window_counts: dict = field(default_factory=dict)


def l2_gain(D: np.ndarray) -> float:
    """min over unit (0, deta) in L2 ∩ V of Q(D (0, deta))."""
    return float(np.linalg.eigvalsh(_restricted_gain(D, L2_basis()))[0])


def pair_windows(kinds: np.ndarray) -> list[tuple[int, int]]:
    """Event index ranges [a, b] running from a ball-ball collision to the next
    ball-ball collision of the other kind with only floor collisions between."""
    balls = np.flatnonzero(kinds != EventKind.FLOOR)
    out = []
    for a, b in zip(balls[:-1], balls[1:]):
        if kinds[a] != kinds[b]:
            out.append((int(a), int(b)))
    return out


def orbit_lambda(log: OrbitLog) -> tuple[float, int, dict]:
    """Smallest guaranteed L2 gain over the orbit's designated collision windows.

    Every floor-to-floor segment with two or three ball-ball collisions
    (cases I-IV) designates the best of its consecutive ball-ball pairs.
    Only when the orbit has no such segment (at most one ball-ball collision
    between floor visits) do the cross-floor windows
    (1,2)->(0,1)^k->(2,3) and (2,3)->(0,1)^k->(1,2) take over, the best of
    each overlapping pair of them being designated.
    """
    kinds = log.kind
    mats = monodromies(kinds, log.v_pre, log.masses)
    windows = pair_windows(kinds)
    if not windows:
        raise NoSegments("orbit has no ball-ball pair windows")

    def gain(a, b):
        D = np.eye(6)
        for M in mats[a : b + 1]:
            D = M @ D
        return l2_gain(D)

    fl = np.flatnonzero(kinds == EventKind.FLOOR)
    seg_of = np.searchsorted(fl, np.arange(len(kinds)), side="right")
    inside: dict = {}
    cross = []
    for a, b in windows:
        if seg_of[a] == seg_of[b]:
            # a segment is complete only if floors bound it on both sides
            if 0 < seg_of[a] < len(fl):
                inside.setdefault(int(seg_of[a]), []).append((a, b))
        else:
            cross.append((a, b))
    if inside:
        values = [max(gain(a, b) for a, b in ws) for ws in inside.values()]
        return float(min(values)), len(values), {"segment": len(values), "cross_floor": 0}
    values = [max(gain(*w1), gain(*w2)) for w1, w2 in zip(cross[:-1], cross[1:]) if w1[1] == w2[0]]
    if not values:
        raise NoSegments("no complete collision windows")
    return float(min(values)), len(values), {"segment": 0, "cross_floor": len(values)}


def lambda_estimate(orbits: Sequence[OrbitLog]) -> LambdaEstimate:
    per = []
    n = 0
    counts = {"segment": 0, "cross_floor": 0}
    for log in orbits:
        lam, k, c = orbit_lambda(log)
        per.append(lam)
        n += k
        for key in counts:
            counts[key] += c[key]
    if not per:
        raise NoSegments("empty ensemble")
    per = np.array(per)
    return LambdaEstimate(float(per.min()), per, n, counts)
