"""Few-step swarm steering under linear dynamics with learned interval coefficients."""

from .ensembles import Ensemble, gaussian, load_csv, save_csv, shape
from .lti import (
    DELTA_MIN,
    LtiSystem,
    TimeWindow,
    WindowOperators,
    check_controllability,
    expm,
    gramian_quadrature,
    transition_and_gramian,
    window_operators,
)
from .model import CoefficientField, ZeroField, load, save
from .propagation import (
    PropagationPlan,
    PropagationTrace,
    ensemble_distance,
    eta_residual,
    propagate,
    reconstruct_control,
)
from .steering import (
    Bridge,
    BridgeSample,
    ExactCoefficientField,
    SteeringCoefficient,
    additivity_residual,
    bridge_action,
    bridge_state,
    control_at,
    endpoint_update,
    exact_coefficient,
    make_bridge_sample,
)
from .training import TrainConfig, TrainRecord, loss_and_grad, residual, sample_batch, train

__version__ = "0.1.0"
