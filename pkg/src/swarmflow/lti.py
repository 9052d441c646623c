"""Dense linear-systems numerics for a fixed pair (A, B).

Everything here is a pure function of its inputs. Time windows only enter
through their length because the dynamics are time invariant, so the
operator routines take a window length ``h = r - t`` and broadcast over
arrays of lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import GramianSingularError, NumericError, ShapeError, UncontrollableError

DELTA_MIN = 1e-3
RANK_RTOL = 1e-10

# Higham (2005) backward-error bounds on the 1-norm for each Pade degree.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ),
}


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Dynamics ``dz/dt = A z + B u`` with ``A`` of shape (d, d), ``B`` (d, m)."""

    A: np.ndarray
    B: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ShapeError(f"A must be square d x d with d >= 1, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise ShapeError(f"B must be {A.shape[0]} x m with m >= 1, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise NumericError("system matrices contain non-finite entries")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @cached_property
    def BBt(self) -> np.ndarray:
        return self.B @ self.B.T

    @cached_property
    def controllable(self) -> bool:
        return check_controllability(self)

    def require_controllable(self) -> "LtiSystem":
        if not self.controllable:
            raise UncontrollableError(
                f"pair (A, B) of system '{self.name}' is not controllable: "
                f"Kalman matrix rank < {self.d}"
            )
        return self

    @classmethod
    def identity_channel(cls, d: int = 2) -> "LtiSystem":
        """Drift-free single integrator, A = 0 and B = I."""
        return cls(np.zeros((d, d)), np.eye(d), name="identity-channel")

    @classmethod
    def double_integrator(cls, axes: int = 1) -> "LtiSystem":
        """Position/velocity pairs driven through the acceleration channel.

        State ordering is ``(x_1..x_k, v_1..v_k)`` for ``k = axes``.
        """
        k = axes
        A = np.zeros((2 * k, 2 * k))
        A[:k, k:] = np.eye(k)
        B = np.zeros((2 * k, k))
        B[k:, :] = np.eye(k)
        return cls(A, B, name="double-integrator")

    @classmethod
    def rotation2d(cls, omega: float = math.pi / 2) -> "LtiSystem":
        A = np.array([[0.0, -omega], [omega, 0.0]])
        return cls(A, np.eye(2), name=f"rotation2d({omega:g})")

    @classmethod
    def rotation3d(cls, omega_z: float = math.pi / 2, omega_x: float = 0.0) -> "LtiSystem":
        """Rotational drift about the z axis (rate ``omega_z``) plus the x axis."""
        Jz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        Jx = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        return cls(omega_z * Jz + omega_x * Jx, np.eye(3),
                   name=f"rotation3d({omega_z:g},{omega_x:g})")


@dataclass(frozen=True)
class TimeWindow:
    t: float
    r: float
    min_gap: float = DELTA_MIN

    def __post_init__(self):
        if not (0.0 <= self.t < self.r <= 1.0):
            raise ValueError(f"window must satisfy 0 <= t < r <= 1, got [{self.t}, {self.r}]")
        # tiny slack so uniform grids with gap exactly min_gap are accepted
        if self.r - self.t < self.min_gap * (1 - 1e-12):
            raise ValueError(
                f"window length {self.r - self.t:.3g} below minimum gap {self.min_gap:.3g}"
            )

    @property
    def length(self) -> float:
        return self.r - self.t


def kalman_matrix(sys: LtiSystem) -> np.ndarray:
    blocks = [sys.B]
    for _ in range(sys.d - 1):
        blocks.append(sys.A @ blocks[-1])
    return np.hstack(blocks)


def check_controllability(sys: LtiSystem) -> bool:
    """Kalman rank test with a scale-invariant singular value threshold."""
    sv = np.linalg.svd(kalman_matrix(sys), compute_uv=False)
    if sv[0] == 0.0:
        return False
    return int(np.sum(sv > RANK_RTOL * sv[0])) == sys.d


def _pade_uv(X: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE_COEFFS[degree]
    ident = np.broadcast_to(np.eye(X.shape[-1]), X.shape)
    X2 = X @ X
    if degree == 13:
        X4 = X2 @ X2
        X6 = X4 @ X2
        U = X @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
                 + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident)
        V = (X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
             + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident)
        return U, V
    powers = [ident, X2]
    for _ in range(degree // 2 - 1):
        powers.append(powers[-1] @ X2)
    U_inner = sum(b[2 * k + 1] * P for k, P in enumerate(powers))
    V = sum(b[2 * k] * P for k, P in enumerate(powers))
    return X @ U_inner, V


def expm(M, s=1.0) -> np.ndarray:
    """Matrix exponential ``exp(M s)`` by scaling and squaring with Pade.

    ``M`` may be a single square matrix or a stack ``(..., n, n)``; ``s``
    broadcasts against the leading axes, so ``expm(M, lengths)`` with a
    vector of lengths returns one exponential per length.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ShapeError(f"expm needs square matrices, got shape {M.shape}")
    s = np.asarray(s, dtype=float)
    X = M * s[..., None, None]
    if not np.all(np.isfinite(X)):
        raise NumericError("expm input contains non-finite entries")

    norms = np.abs(X).sum(axis=-2).max(axis=-1)
    top = float(np.max(norms)) if norms.size else 0.0
    for degree in (3, 5, 7, 9):
        if top <= _THETA[degree]:
            U, V = _pade_uv(X, degree)
            return np.linalg.solve(V - U, V + U)

    with np.errstate(divide="ignore"):
        squarings = np.ceil(np.log2(norms / _THETA[13]))
    squarings = np.maximum(squarings, 0).astype(int)
    X = X / np.ldexp(1.0, squarings)[..., None, None]
    U, V = _pade_uv(X, 13)
    R = np.linalg.solve(V - U, V + U)
    for k in range(int(squarings.max())):
        active = (squarings > k)[..., None, None]
        R = np.where(active, R @ R, R)
    if not np.all(np.isfinite(R)):
        raise NumericError("expm overflowed")
    return R


def transition_and_gramian(sys: LtiSystem, h) -> tuple[np.ndarray, np.ndarray]:
    """``Phi = exp(A h)`` and ``W(0, h)`` for each window length in ``h``.

    Van Loan block exponential: exponentiating ``[[-A, BB^T], [0, A^T]] h``
    gives ``exp(A^T h)`` in the lower-right block ``F22`` and
    ``W = F22^T F12`` from the upper-right block.
    """
    d = sys.d
    C = np.zeros((2 * d, 2 * d))
    C[:d, :d] = -sys.A
    C[:d, d:] = sys.BBt
    C[d:, d:] = sys.A.T
    E = expm(C, h)
    phi = np.swapaxes(E[..., d:, d:], -1, -2)
    W = phi @ E[..., :d, d:]
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return phi, W


def gramian_rate(sys: LtiSystem, phi: np.ndarray) -> np.ndarray:
    """``Phi B B^T Phi^T``: the Gramian's rate of change in the window length."""
    return phi @ sys.BBt @ np.swapaxes(phi, -1, -2)


def cholesky(W: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor(s) of Gramian(s), raising on failure."""
    try:
        return np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        min_eig = float(np.min(np.linalg.eigvalsh(W)))
        raise GramianSingularError("Gramian is not positive definite", min_eig) from None


def cholesky_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L L^T x = rhs`` for vectors ``rhs`` of shape (..., d)."""
    y = np.linalg.solve(L, rhs[..., None])
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]


@dataclass(frozen=True, eq=False)
class WindowOperators:
    phi: np.ndarray
    gramian: np.ndarray
    window: TimeWindow
    chol: np.ndarray = field(repr=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``W^{-1} rhs`` via the cached Cholesky factor; rhs may be (n, d)."""
        return cholesky_solve(self.chol, np.asarray(rhs, dtype=float))


def window_operators(sys: LtiSystem, w: TimeWindow) -> WindowOperators:
    sys.require_controllable()
    phi, W = transition_and_gramian(sys, w.length)
    return WindowOperators(phi=phi, gramian=W, window=w, chol=cholesky(W))


class WindowOperatorCache:
    """Memo of window operators keyed by window length rounded to 1e-9."""

    def __init__(self, sys: LtiSystem, quantum: float = 1e-9):
        self.sys = sys.require_controllable()
        self.quantum = quantum
        self._store: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def get(self, w: TimeWindow) -> WindowOperators:
        key = round(w.length / self.quantum)
        if key not in self._store:
            phi, W = transition_and_gramian(self.sys, w.length)
            self._store[key] = (phi, W, cholesky(W))
        phi, W, L = self._store[key]
        return WindowOperators(phi=phi, gramian=W, window=w, chol=L)

    def __len__(self) -> int:
        return len(self._store)


def gramian_quadrature(sys: LtiSystem, w: TimeWindow, nodes: int = 32) -> np.ndarray:
    """Gauss-Legendre approximation of the Gramian integral over ``w``.

    Test oracle only: the transition matrices come from ``scipy.linalg.expm``
    so this path shares no code with :func:`transition_and_gramian`.
    """
    if nodes < 8:
        raise ValueError("quadrature needs at least 8 nodes")
    x, wts = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (w.r - w.t)
    taus = w.t + half * (x + 1.0)
    W = np.zeros((sys.d, sys.d))
    for tau, wt in zip(taus, wts):
        PB = scipy.linalg.expm(sys.A * (w.r - tau)) @ sys.B
        W += wt * (PB @ PB.T)
    return half * W
