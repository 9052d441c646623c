"""Finite-horizon minimum-energy steering.

For a window ``[t, r]`` the least-energy transfer from ``z_t`` to ``z_r`` is
``u(tau) = B^T Phi(r, tau)^T c`` with the interval coefficient
``c = W(t, r)^{-1} (z_r - Phi(r, t) z_t)``, and the state reached is
``Phi(r, t) z_t + W(t, r) c``.

State arguments are either single vectors ``(d,)`` or stacks ``(n, d)``;
times broadcast against the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lti import (
    LtiSystem,
    TimeWindow,
    WindowOperators,
    cholesky,
    cholesky_solve,
    expm,
    gramian_rate,
    transition_and_gramian,
)


def apply(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product broadcasting over stacks of both."""
    return (M @ v[..., None])[..., 0]


@dataclass(frozen=True, eq=False)
class SteeringCoefficient:
    c: np.ndarray
    window: TimeWindow
    anchor_state: np.ndarray


@dataclass(frozen=True, eq=False)
class BridgeSample:
    z0: np.ndarray
    z1: np.ndarray
    window: TimeWindow
    z_t: np.ndarray
    z_r: np.ndarray
    bridge_action: np.ndarray


def exact_coefficient(sys: LtiSystem, ops: WindowOperators, z_t, z_r) -> SteeringCoefficient:
    z_t = np.asarray(z_t, dtype=float)
    c = ops.solve(np.asarray(z_r, dtype=float) - apply(ops.phi, z_t))
    return SteeringCoefficient(c=c, window=ops.window, anchor_state=z_t)


def control_at(sys: LtiSystem, coeff: SteeringCoefficient, tau: float) -> np.ndarray:
    w = coeff.window
    if not (w.t <= tau <= w.r):
        raise ValueError(f"tau={tau} outside window [{w.t}, {w.r}]")
    phi = expm(sys.A, w.r - tau)
    return apply(sys.B.T @ phi.T, np.asarray(coeff.c, dtype=float))


def endpoint_update(ops: WindowOperators, z_t, c) -> np.ndarray:
    return apply(ops.phi, np.asarray(z_t, dtype=float)) + apply(ops.gramian, np.asarray(c, dtype=float))


@lru_cache(maxsize=64)
def horizon_operators(sys: LtiSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``Phi(1, 0)``, ``W(0, 1)`` and its Cholesky factor for the unit horizon."""
    sys.require_controllable()
    phi, W = transition_and_gramian(sys, 1.0)
    return phi, W, cholesky(W)


class Bridge:
    """Minimum-energy path over [0, 1] joining ``z0`` to ``z1``.

    ``z0`` and ``z1`` may be stacks of paired endpoints; evaluation times
    then broadcast per pair.
    """

    def __init__(self, sys: LtiSystem, z0, z1):
        self.sys = sys
        self.z0 = np.asarray(z0, dtype=float)
        self.z1 = np.asarray(z1, dtype=float)
        phi1, _, L1 = horizon_operators(sys)
        # W(0,1)^{-1} (z1 - Phi(1,0) z0), shared by the state and the action
        self.costate = cholesky_solve(L1, self.z1 - apply(phi1, self.z0))

    def _parts(self, tau):
        tau = np.asarray(tau, dtype=float)
        phi_t, W_t = transition_and_gramian(self.sys, tau)
        phi_rest, _ = transition_and_gramian(self.sys, 1.0 - tau)
        return phi_t, W_t, phi_rest

    def state(self, tau) -> np.ndarray:
        phi_t, W_t, phi_rest = self._parts(tau)
        pull = apply(np.swapaxes(phi_rest, -1, -2), self.costate)
        return apply(phi_t, self.z0) + apply(W_t, pull)

    def action(self, tau) -> np.ndarray:
        """Input-channel part ``B v`` of the bridge velocity."""
        _, _, phi_rest = self._parts(tau)
        return apply(self.sys.BBt, apply(np.swapaxes(phi_rest, -1, -2), self.costate))

    def velocity(self, tau) -> np.ndarray:
        return apply(self.sys.A, self.state(tau)) + self.action(tau)


def bridge_state(sys: LtiSystem, z0, z1, tau) -> np.ndarray:
    return Bridge(sys, z0, z1).state(tau)


def bridge_action(sys: LtiSystem, z0, z1, t) -> np.ndarray:
    return Bridge(sys, z0, z1).action(t)


def make_bridge_sample(sys: LtiSystem, z0, z1, w: TimeWindow) -> BridgeSample:
    br = Bridge(sys, z0, z1)
    return BridgeSample(
        z0=br.z0, z1=br.z1, window=w,
        z_t=br.state(w.t), z_r=br.state(w.r), bridge_action=br.action(w.t),
    )


@dataclass(frozen=True, eq=False)
class BridgeBatch:
    """Struct-of-arrays batch of bridge samples plus the window operators.

    ``phi`` and ``gramian`` hold ``Phi(r, t)`` and ``W(t, r)`` per sample.
    """

    z0: np.ndarray
    z1: np.ndarray
    t: np.ndarray
    r: np.ndarray
    z_t: np.ndarray
    z_r: np.ndarray
    action: np.ndarray
    phi: np.ndarray
    gramian: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> BridgeSample:
        return BridgeSample(
            z0=self.z0[i], z1=self.z1[i],
            window=TimeWindow(float(self.t[i]), float(self.r[i]), min_gap=0.0),
            z_t=self.z_t[i], z_r=self.z_r[i], bridge_action=self.action[i],
        )


def make_bridge_batch(sys: LtiSystem, z0, z1, t, r) -> BridgeBatch:
    """Vectorized bridge sampling with one batched exponential call.

    Only the window lengths ``t, r, 1-t, 1-r, r-t`` are needed.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    z1 = np.atleast_2d(np.asarray(z1, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float).reshape(-1)
    n = len(t)
    phi1, _, L1 = horizon_operators(sys)
    costate = cholesky_solve(L1, z1 - apply(phi1, z0))

    phi, W = transition_and_gramian(sys, np.concatenate([t, r, 1.0 - t, 1.0 - r, r - t]))
    phi_t, phi_r, rest_t, rest_r, phi_win = np.split(phi, 5)
    W_t, W_r, _, _, W_win = np.split(W, 5)

    pull_t = apply(np.swapaxes(rest_t, -1, -2), costate)
    pull_r = apply(np.swapaxes(rest_r, -1, -2), costate)
    return BridgeBatch(
        z0=z0, z1=z1, t=t, r=r,
        z_t=apply(phi_t, z0) + apply(W_t, pull_t),
        z_r=apply(phi_r, z0) + apply(W_r, pull_r),
        action=apply(sys.BBt, pull_t),
        phi=phi_win, gramian=W_win,
    )


def additivity_residual(sys: LtiSystem, z_t, z_s, z_r, t: float, s: float, r: float) -> float:
    """Mismatch of the two-window decomposition of ``W(t,r) c(z_t,t,r)``."""
    if not t < s < r:
        raise ValueError("need t < s < r")
    z_t, z_s, z_r = (np.asarray(z, dtype=float) for z in (z_t, z_s, z_r))
    phi_tr, W_tr = transition_and_gramian(sys, r - t)
    phi_ts, W_ts = transition_and_gramian(sys, s - t)
    phi_sr, W_sr = transition_and_gramian(sys, r - s)
    c_tr = cholesky_solve(cholesky(W_tr), z_r - phi_tr @ z_t)
    c_sr = cholesky_solve(cholesky(W_sr), z_r - phi_sr @ z_s)
    if s - t > 0 and np.linalg.norm(W_ts) > 0:
        c_ts = cholesky_solve(cholesky(W_ts), z_s - phi_ts @ z_t)
        first = phi_sr @ (W_ts @ c_ts)
    else:
        first = np.zeros_like(z_t)
    return float(np.linalg.norm(W_tr @ c_tr - first - W_sr @ c_sr))


class ExactCoefficientField:
    """Closed-form coefficient field for fixed endpoint pair(s).

    ``forward(z, t, r)`` steers ``z`` at time ``t`` onto the pair's bridge
    at time ``r``. The directional derivative is analytic:
    ``dW/dh = Phi B B^T Phi^T`` and ``dPhi/dh = A Phi`` with ``h = r - t``.
    """

    def __init__(self, sys: LtiSystem, z0, z1):
        self.sys = sys
        self.bridge = Bridge(sys, z0, z1)
        self.d = sys.d

    def forward(self, z, t, r) -> np.ndarray:
        return self.jvp(z, t, r, np.zeros_like(np.asarray(z, dtype=float)), 0.0, 0.0)[0]

    def jvp(self, z, t, r, dz, dt=1.0, dr=0.0):
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        phi, W = transition_and_gramian(self.sys, r - t)
        L = cholesky(W)
        c = cholesky_solve(L, self.bridge.state(r) - apply(phi, z))
        dh = np.asarray(dr - np.asarray(dt, dtype=float), dtype=float)[..., None]
        dr_ = np.asarray(dr, dtype=float)[..., None]
        rhs = (-apply(gramian_rate(self.sys, phi), c) * dh
               - apply(self.sys.A @ phi, z) * dh
               - apply(phi, np.asarray(dz, dtype=float))
               + self.bridge.velocity(r) * dr_)
        return c, cholesky_solve(L, rhs)
