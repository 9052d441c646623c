"""Executable checks of the steering identities against independent oracles."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lti import (
    LtiSystem,
    TimeWindow,
    check_controllability,
    gramian_quadrature,
    gramian_rate,
    transition_and_gramian,
    window_operators,
)
from .steering import Bridge, additivity_residual, exact_coefficient


@dataclass
class CheckReport:
    name: str
    max_residual: float
    tolerance: float
    passed: bool
    trials: int
    details: dict = field(default_factory=dict)

    @classmethod
    def of(cls, name, max_residual, tolerance, trials, **details) -> "CheckReport":
        max_residual = float(max_residual)
        return cls(name, max_residual, float(tolerance), bool(max_residual <= tolerance),
                   int(trials), details)

    def to_dict(self) -> dict:
        return asdict(self)


def _is_free(sys: LtiSystem) -> bool:
    return sys.m == sys.d and not np.any(sys.A) and np.array_equal(sys.B, np.eye(sys.d))


FREE_COEFF_TOL = 1e-12


def check_drift_free_reduction(sys_free: LtiSystem | None = None, trials: int = 100, seed: int = 0,
                 tolerance: float = 1.0) -> CheckReport:
    """Drift-free reduction and the vanishing-window limit.

    (a) with A = 0, B = I the coefficient is the average velocity
    ``(z_r - z_t) / (r - t)``; (b) on a curved trajectory the coefficient
    over ``[t, t+h]`` approaches the velocity at first order in ``h``.
    The reported residual is the normalized score
    ``max(err_a / 1e-12, ratio_dev)``, passing at 1, where
    ``ratio_dev = |log10(ratio / 10)| / log10(3)`` for the error ratio per
    decade of ``h``.
    """
    sys = LtiSystem.identity_channel(2) if sys_free is None else sys_free
    if not _is_free(sys):
        raise ValueError("check_drift_free_reduction needs the drift-free system A = 0, B = I")
    rng = np.random.default_rng(seed)
    d = sys.d
    err_a = 0.0
    for k in range(trials):
        z0 = rng.standard_normal(d)
        z1 = z0.copy() if k == 0 else rng.standard_normal(d)
        t = rng.uniform(0.0, 0.9)
        r = rng.uniform(t + 0.01, 1.0)
        br = Bridge(sys, z0, z1)
        z_t, z_r = br.state(t), br.state(r)
        c = exact_coefficient(sys, window_operators(sys, TimeWindow(t, r)), z_t, z_r).c
        ref = (z_r - z_t) / (r - t)
        err_a = max(err_a, np.linalg.norm(c - ref) / (1.0 + np.linalg.norm(ref)))

    hs = (1e-2, 1e-3, 1e-4)
    worst_dev = 0.0
    ratios = []
    for _ in range(trials):
        z0, z1, q = rng.standard_normal((3, d))
        t = rng.uniform(0.1, 0.8)

        def curve(s):
            return z0 + s * (z1 - z0) + s * (1.0 - s) * q

        velocity = (z1 - z0) + (1.0 - 2.0 * t) * q
        errs = []
        for h in hs:
            ops = window_operators(sys, TimeWindow(t, t + h, min_gap=0.0))
            errs.append(np.linalg.norm(exact_coefficient(sys, ops, curve(t), curve(t + h)).c - velocity))
        for e_big, e_small in zip(errs[:-1], errs[1:]):
            ratio = e_big / e_small
            ratios.append(ratio)
            worst_dev = max(worst_dev, abs(math.log10(ratio / 10.0)) / math.log10(3.0))

    score = max(err_a / FREE_COEFF_TOL, worst_dev)
    return CheckReport.of("drift_free_reduction", score, tolerance, trials,
                          coefficient_error=float(err_a),
                          min_ratio=float(min(ratios)), max_ratio=float(max(ratios)))


def _random_pair(rng, d, scale=1.0):
    return scale * rng.standard_normal(d), scale * rng.standard_normal(d)


def check_additivity(sys: LtiSystem, trials: int = 100, seed: int = 0,
                 tolerance: float = 1e-8) -> CheckReport:
    """Two-window additivity of ``W c`` along random bridges.

    Residuals are normalized by ``1 + |z_r|``.
    """
    sys.require_controllable()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        z0, z1 = _random_pair(rng, sys.d)
        t, s, r = np.sort(rng.uniform(0.0, 1.0, 3))
        if s - t < 0.01 or r - s < 0.01:
            t, s, r = 0.1, 0.5, 0.9
        br = Bridge(sys, z0, z1)
        z_t, z_s, z_r = br.state(t), br.state(s), br.state(r)
        res = additivity_residual(sys, z_t, z_s, z_r, t, s, r)
        worst = max(worst, res / (1.0 + np.linalg.norm(z_r)))
    return CheckReport.of(f"additivity[{sys.name}]", worst, tolerance, trials)


def check_differential_identity(sys: LtiSystem, trials: int = 50, seed: int = 0,
                                h: float = 1e-5, tolerance: float = 1e-6) -> CheckReport:
    """``W dc/dt - Phi BB^T Phi^T c + Phi Bv = 0`` along bridges, with ``dc/dt``
    from central differences in the left endpoint and ``r`` held fixed.

    Residuals are normalized by ``1 + |c|``.
    """
    sys.require_controllable()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        z0, z1 = _random_pair(rng, sys.d)
        t = rng.uniform(0.05, 0.6)
        r = rng.uniform(t + 0.2, 1.0)
        br = Bridge(sys, z0, z1)
        z_r = br.state(r)

        def coeff(tau):
            ops = window_operators(sys, TimeWindow(tau, r))
            return exact_coefficient(sys, ops, br.state(tau), z_r).c

        c = coeff(t)
        c_dot = (coeff(t + h) - coeff(t - h)) / (2.0 * h)
        phi, W = transition_and_gramian(sys, r - t)
        res = W @ c_dot - gramian_rate(sys, phi) @ c + phi @ br.action(t)
        worst = max(worst, np.linalg.norm(res) / (1.0 + np.linalg.norm(c)))
    return CheckReport.of(f"differential_identity[{sys.name}]", worst, tolerance, trials)


def random_controllable_system(rng: np.random.Generator, max_d: int = 6, max_m: int = 3,
                               scale: float = 1.5) -> LtiSystem:
    while True:
        d = int(rng.integers(1, max_d + 1))
        m = int(rng.integers(1, min(max_m, d) + 1))
        sys = LtiSystem(scale * rng.standard_normal((d, d)) / math.sqrt(d),
                        rng.standard_normal((d, m)), name=f"random(d={d},m={m})")
        if check_controllability(sys):
            return sys


def check_gramian_oracles(trials: int = 100, seed: int = 0, nodes: int = 32,
                          tolerance: float = 1e-8) -> CheckReport:
    """Van Loan Gramians against Gauss-Legendre quadrature, relative error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        sys = random_controllable_system(rng)
        t = rng.uniform(0.0, 0.9)
        r = rng.uniform(t + 0.05, 1.0)
        w = TimeWindow(t, r)
        _, W = transition_and_gramian(sys, w.length)
        Wq = gramian_quadrature(sys, w, nodes)
        worst = max(worst, np.linalg.norm(W - Wq) / np.linalg.norm(Wq))
    return CheckReport.of("gramian_oracles", worst, tolerance, trials)


PRESETS = (
    LtiSystem.identity_channel(2),
    LtiSystem.double_integrator(),
    LtiSystem.rotation2d(math.pi / 2),
)


def run_all(seed: int = 0, tolerance_scale: float = 1.0) -> list[CheckReport]:
    """Full suite; ``tolerance_scale`` multiplies every tolerance (test hook)."""
    k = tolerance_scale
    reports = [check_drift_free_reduction(PRESETS[0], seed=seed, tolerance=1.0 * k)]
    reports += [check_additivity(s, seed=seed, tolerance=1e-8 * k) for s in PRESETS]
    reports += [check_differential_identity(s, seed=seed, tolerance=1e-6 * k) for s in PRESETS]
    reports.append(check_gramian_oracles(seed=seed, tolerance=1e-8 * k))
    return reports


def reports_to_json(reports: list[CheckReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
