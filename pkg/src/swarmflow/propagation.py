"""Few-step sampled-data propagation of a swarm under a coefficient field.

On each grid interval ``[t_k, t_{k+1}]`` the field is queried once per
member, ``c_k = c(z_k, t_k, t_{k+1})``, and the member moves by the exact
window update ``z_{k+1} = Phi z_k + W c_k``. That update is the state
reached by holding the control law ``u(tau) = B^T Phi(t_{k+1}, tau)^T c_k``
over the interval.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .ensembles import Ensemble
from .errors import ShapeError
from .lti import DELTA_MIN, LtiSystem, TimeWindow, WindowOperatorCache, expm
from .steering import ExactCoefficientField, apply, endpoint_update


@dataclass(frozen=True, eq=False)
class PropagationPlan:
    grid: np.ndarray
    min_gap: float = DELTA_MIN

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float).reshape(-1)
        if g.size < 2 or g[0] != 0.0 or g[-1] != 1.0:
            raise ValueError("grid must start at exactly 0 and end at exactly 1")
        gaps = np.diff(g)
        if np.any(gaps <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.min(gaps) < self.min_gap * (1 - 1e-12):
            raise ValueError(f"grid gap {np.min(gaps):.3g} below minimum {self.min_gap:.3g}")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)

    @classmethod
    def uniform(cls, K: int = 16) -> "PropagationPlan":
        if K < 1:
            raise ValueError("K must be >= 1")
        return cls(np.linspace(0.0, 1.0, K + 1))

    @property
    def K(self) -> int:
        return self.grid.size - 1

    def windows(self) -> list[TimeWindow]:
        g = self.grid
        return [TimeWindow(float(g[k]), float(g[k + 1]), min_gap=0.0) for k in range(self.K)]


@dataclass(eq=False)
class PropagationTrace:
    """Everything recorded by :func:`propagate`.

    ``states`` is (K+1, n, d), ``coefficients`` (K, n, d),
    ``interval_energy`` (K, n) with entries ``c_k^T W_k c_k``, and ``eta``
    (K, n, d) when endpoint targets were supplied.
    """

    system: LtiSystem
    grid: np.ndarray
    states: np.ndarray
    coefficients: np.ndarray
    interval_energy: np.ndarray
    eta: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.grid.size - 1

    @property
    def energy(self) -> np.ndarray:
        """Cumulative control energy per member."""
        return self.interval_energy.sum(axis=0)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _evaluate(model, z, t, r, threads):
    if threads <= 1 or len(z) < 2 * threads:
        return model.forward(z, t, r)
    parts = np.array_split(np.arange(len(z)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        out = pool.map(lambda idx: model.forward(z[idx], t, r), parts)
    return np.concatenate(list(out))


def propagate(sys: LtiSystem, model, rho0: Ensemble | np.ndarray, plan: PropagationPlan,
              targets: np.ndarray | None = None, threads: int = 1) -> PropagationTrace:
    """Run the sampled-data update over ``plan`` for every member of ``rho0``.

    With per-member endpoint ``targets`` (deterministic pairing), the
    per-interval residual ``eta = W (c_exact - c_model)`` is recorded,
    ``c_exact`` steering the current state back onto the member's bridge.
    """
    cache = WindowOperatorCache(sys)
    z = np.array(rho0.points if isinstance(rho0, Ensemble) else rho0, dtype=float, ndmin=2)
    if z.shape[1] != sys.d:
        raise ShapeError(f"ensemble dimension {z.shape[1]} does not match state dimension {sys.d}")
    if getattr(model, "d", sys.d) != sys.d:
        raise ShapeError(f"model dimension {model.d} does not match state dimension {sys.d}")
    oracle = None
    if targets is not None:
        oracle = ExactCoefficientField(sys, z.copy(), np.asarray(targets, dtype=float))

    states, coeffs, energies, etas = [z], [], [], []
    for w in plan.windows():
        ops = cache.get(w)
        c = np.asarray(_evaluate(model, z, w.t, w.r, threads), dtype=float)
        if oracle is not None:
            etas.append(apply(ops.gramian, oracle.forward(z, w.t, w.r) - c))
        energies.append(np.einsum("ni,ij,nj->n", c, ops.gramian, c))
        z = endpoint_update(ops, z, c)
        coeffs.append(c)
        states.append(z)
    return PropagationTrace(
        system=sys, grid=plan.grid, states=np.stack(states), coefficients=np.stack(coeffs),
        interval_energy=np.stack(energies), eta=None if oracle is None else np.stack(etas),
    )


def reconstruct_control(sys: LtiSystem, trace: PropagationTrace, member: int, k: int,
                        tau: float) -> np.ndarray:
    """Input ``u(tau) = B^T Phi(t_{k+1}, tau)^T c_k`` held on interval ``k``."""
    if not 0 <= k < trace.K:
        raise IndexError(f"interval {k} out of range 0..{trace.K - 1}")
    if not 0 <= member < trace.coefficients.shape[1]:
        raise IndexError(f"member {member} out of range")
    t0, t1 = trace.grid[k], trace.grid[k + 1]
    if not t0 <= tau <= t1:
        raise ValueError(f"tau={tau} outside interval [{t0}, {t1}]")
    return sys.B.T @ expm(sys.A, t1 - tau).T @ trace.coefficients[k, member]


def eta_residual(sys: LtiSystem, model, z_t, z_r_true, w: TimeWindow) -> np.ndarray:
    """State error ``z_r_true - Phi z_t - W c_model`` of one window."""
    ops = WindowOperatorCache(sys).get(w)
    z_t = np.asarray(z_t, dtype=float)
    return (np.asarray(z_r_true, dtype=float) - apply(ops.phi, z_t)
            - apply(ops.gramian, model.forward(z_t, w.t, w.r)))


def ensemble_distance(x, y) -> float:
    """Energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` with exact double sums.

    Within-sample means include the zero diagonal (V-statistic), so a
    point set has distance exactly 0 to itself.
    """
    x = np.atleast_2d(np.asarray(x.points if isinstance(x, Ensemble) else x, dtype=float))
    y = np.atleast_2d(np.asarray(y.points if isinstance(y, Ensemble) else y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    cross = cdist(x, y).mean()
    within_x = cdist(x, x).mean()
    within_y = cdist(y, y).mean()
    return max(0.0, float(2.0 * cross - within_x - within_y))
