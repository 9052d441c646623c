"""Bridge-supervised training of the interval-coefficient field.

Per sample, with ``Phi = Phi(r, t)``, ``W = W(t, r)`` and the bridge action
``Bv`` at ``t``, the residual is

    R = Phi B B^T Phi^T c_theta  -  sg(W dc_theta/dt + Phi Bv)

where ``dc_theta/dt`` is the total derivative along the bridge, i.e. the
network's directional derivative in the input tangent
``(dz, dt, dr) = (A z_t + Bv, 1, 0)``. Gradients only flow through the
first term.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .ensembles import Ensemble
from .errors import ShapeError, TrainingDivergedError
from .lti import DELTA_MIN, LtiSystem, gramian_rate
from .model import CoefficientField
from .steering import BridgeBatch, BridgeSample, apply, make_bridge_batch

log = logging.getLogger(__name__)

COUPLINGS = ("independent", "minibatch_assignment")
WEIGHTINGS = ("plain", "adaptive")
ADAPTIVE_EPS = 1e-3
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    batch_size: int = 256
    steps: int = 10_000
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    window_gap_min: float = DELTA_MIN
    coupling: str = "independent"
    seed: int = 0
    loss_weighting: str = "plain"
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "silu"
    log_every: int = 100
    threads: int = 1

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        self.hidden = tuple(self.hidden)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ValueError("adam_betas must be two values in [0, 1)")
        if self.window_gap_min < 1e-4 or self.window_gap_min >= 1:
            raise ValueError("window_gap_min must lie in [1e-4, 1)")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")
        if self.loss_weighting not in WEIGHTINGS:
            raise ValueError(f"loss_weighting must be one of {WEIGHTINGS}")
        if self.log_every < 1 or self.threads < 1:
            raise ValueError("log_every and threads must be >= 1")


@dataclass
class TrainRecord:
    step: int
    loss: float
    residual_norm_mean: float
    grad_norm: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def sample_windows(rng: np.random.Generator, n: int, gap: float = DELTA_MIN):
    """``t ~ U(0, 1 - gap)``, then ``r ~ U(t + gap, 1)``."""
    t = rng.uniform(0.0, 1.0 - gap, n)
    r = rng.uniform(t + gap, 1.0)
    return t, r


def assignment_pairing(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """Permutation ``p`` minimizing ``sum_i |z0_i - z1_p[i]|^2`` (exact)."""
    _, col = linear_sum_assignment(cdist(z0, z1, "sqeuclidean"))
    return col


def sample_batch(rng: np.random.Generator, sys: LtiSystem, rho0: Ensemble, rho1: Ensemble,
                 cfg: TrainConfig) -> BridgeBatch:
    if rho0.n == 0 or rho1.n == 0:
        raise ValueError("ensembles must be non-empty")
    if rho0.d != sys.d or rho1.d != sys.d:
        raise ShapeError(f"ensemble dims ({rho0.d}, {rho1.d}) do not match state dim {sys.d}")
    n = cfg.batch_size
    z0 = rho0.points[rng.integers(rho0.n, size=n)]
    z1 = rho1.points[rng.integers(rho1.n, size=n)]
    if cfg.coupling == "minibatch_assignment":
        z1 = z1[assignment_pairing(z0, z1)]
    t, r = sample_windows(rng, n, cfg.window_gap_min)
    return make_bridge_batch(sys, z0, z1, t, r)


def _residual_parts(sys: LtiSystem, batch: BridgeBatch, value, ddt):
    G = gramian_rate(sys, batch.phi)
    target = apply(batch.gramian, ddt) + apply(batch.phi, batch.action)
    return apply(G, value) - target, target, G


def bridge_tangent(sys: LtiSystem, batch: BridgeBatch) -> np.ndarray:
    """Bridge velocity ``A z_t + Bv``: the state part of the input tangent."""
    return apply(sys.A, batch.z_t) + batch.action


def batch_residual(sys: LtiSystem, model, batch: BridgeBatch):
    """Residuals, detached targets and ``Phi B B^T Phi^T`` for every sample."""
    value, ddt = model.jvp(batch.z_t, batch.t, batch.r, bridge_tangent(sys, batch), 1.0, 0.0)
    return _residual_parts(sys, batch, value, ddt)


def residual(sys: LtiSystem, model, sample: BridgeSample) -> tuple[np.ndarray, np.ndarray]:
    batch = make_bridge_batch(sys, sample.z0, sample.z1, sample.window.t, sample.window.r)
    R, target, _ = batch_residual(sys, model, batch)
    return R[0], target[0]


def _chunks(n: int, k: int):
    edges = np.linspace(0, n, min(k, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def loss_and_grad(sys: LtiSystem, model: CoefficientField, batch: BridgeBatch,
                  weighting: str = "plain", threads: int = 1):
    """Mean (optionally weighted) squared residual and its parameter gradient.

    The target is a constant, so each sample contributes
    ``2 w (G^T R)`` as the output cotangent of ``c_theta``. Adaptive
    weights ``w = 1 / (|R|^2 + eps)`` are constants too.
    Returns ``(loss, grad, residuals)``.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")

    def work(sl):
        sub = BridgeBatch(*(getattr(batch, f)[sl] for f in BridgeBatch.__dataclass_fields__))
        value, ddt, pullback = model.jvp_with_pullback(
            sub.z_t, sub.t, sub.r, bridge_tangent(sys, sub), 1.0, 0.0)
        R, _, G = _residual_parts(sys, sub, value, ddt)
        sq = np.sum(R * R, axis=1)
        w = 1.0 / (sq + ADAPTIVE_EPS) if weighting == "adaptive" else np.ones_like(sq)
        cot = 2.0 * w[:, None] * apply(np.swapaxes(G, -1, -2), R) / n
        return np.sum(w * sq) / n, pullback(cot), R

    parts = _chunks(n, threads)
    if len(parts) == 1:
        results = [work(parts[0])]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, parts))
    loss = sum(p[0] for p in results)
    grad = np.sum([p[1] for p in results], axis=0)
    return float(loss), grad, np.concatenate([p[2] for p in results])


@dataclass
class Adam:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    count: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        b1, b2 = self.betas
        self.count += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.count)
        v_hat = self.v / (1 - b2 ** self.count)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(sys: LtiSystem, rho0: Ensemble, rho1: Ensemble, cfg: TrainConfig,
          model: CoefficientField | None = None, on_record=None):
    """Run Adam on the residual loss; returns ``(model, records)``.

    ``on_record`` is called with each :class:`TrainRecord` as it is emitted.
    """
    sys.require_controllable()
    if model is None:
        model = CoefficientField.for_state_dim(sys.d, cfg.hidden, cfg.seed, cfg.activation)
    elif model.d != sys.d:
        raise ShapeError(f"model output dim {model.d} does not match state dim {sys.d}")
    opt = Adam(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    records: list[TrainRecord] = []
    start = time.perf_counter()
    for step in range(cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        batch = sample_batch(rng, sys, rho0, rho1, cfg)
        loss, grad, R = loss_and_grad(sys, model, batch, cfg.loss_weighting, cfg.threads)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(
                f"loss {loss:.3e} at step {step} (grad norm {np.linalg.norm(grad):.3e}); "
                f"try a smaller learning rate or a larger window_gap_min"
            )
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            rec = TrainRecord(step, loss, float(np.mean(np.linalg.norm(R, axis=1))),
                              float(np.linalg.norm(grad)), time.perf_counter() - start)
            records.append(rec)
            log.debug("step %d loss %.4e", step, loss)
            if on_record is not None:
                on_record(rec)
        opt.step(model.params, grad)
    return model, records
