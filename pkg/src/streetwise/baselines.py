"""Reference estimators: UKF bandwidth tracker with a rule controller, and
the ungated test-time perturbation rule (critic-gradient step without
disturbance gating)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError
from .netsim import MAX_RATE, MIN_RATE

log = logging.getLogger("streetwise.baselines")


@dataclass(frozen=True)
class UkfParams:
    q_logbw: float = 1e-3  # process noise on log-bandwidth
    q_drift: float = 1e-5  # process noise on drift
    meas_sigma: float = 0.10  # measurement noise as a fraction of the rate
    alpha: float = 1e-3  # sigma-point spread
    beta: float = 2.0  # prior distribution weight (Gaussian optimal)
    kappa: float = 0.0
    init_var: float = 1.0


@dataclass
class UkfState:
    x: np.ndarray  # (2,) = [log_bandwidth, drift per step]
    P: np.ndarray  # (2, 2) covariance
    params: UkfParams
    reinit_count: int = 0

    @classmethod
    def initial(cls, rate_guess: float, params: UkfParams | None = None) -> "UkfState":
        params = params or UkfParams()
        x = np.array([np.log(max(rate_guess, MIN_RATE)), 0.0])
        return cls(x=x, P=np.eye(2) * params.init_var, params=params)


def _spd(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _sigma_points(x: np.ndarray, P: np.ndarray, p: UkfParams):
    n = x.size
    lam = p.alpha**2 * (n + p.kappa) - n
    scaled = _spd((n + lam) * P)
    for jitter in (0.0, 1e-12, 1e-9, 1e-6):
        try:
            chol = np.linalg.cholesky(scaled + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericError("covariance lost positive definiteness")
    pts = np.vstack([x, x + chol.T, x - chol.T])  # (2n+1, n)
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - p.alpha**2 + p.beta)
    return pts, wm, wc


def _unscented_moments(pts: np.ndarray, wm: np.ndarray, wc: np.ndarray):
    mean = wm @ pts
    dev = pts - mean
    cov = (wc[:, None] * dev).T @ dev
    return mean, dev, cov


def ukf_step(
    state: UkfState,
    receive_rate: float,
    loss_fraction: float = 0.0,
    queue_delay: float = 0.0,
) -> tuple[UkfState, float]:
    """Unscented predict/update on [log_bandwidth, drift] with measurement
    z = exp(log_bandwidth).

    Delay above 100 ms inflates the measurement variance (a congested queue
    makes the delivered rate a poor capacity probe).  A covariance that loses
    positive definiteness triggers a logged reinitialization, never a crash.
    """
    p = state.params
    z = max(float(receive_rate), MIN_RATE)
    try:
        # predict through the constant-drift process model
        pts, wm, wc = _sigma_points(state.x, state.P, p)
        moved = np.column_stack([pts[:, 0] + pts[:, 1], pts[:, 1]])
        x_pred, dev, P_pred = _unscented_moments(moved, wm, wc)
        P_pred = _spd(P_pred) + np.diag([p.q_logbw, p.q_drift])

        # update against the observed delivery rate
        pts, wm, wc = _sigma_points(x_pred, P_pred, p)
        z_pts = np.exp(pts[:, 0])
        z_mean = wm @ z_pts
        z_dev = z_pts - z_mean
        r_scale = 1.0 + max(queue_delay - 100.0, 0.0) / 100.0
        R = (p.meas_sigma * z * r_scale) ** 2
        S = float(wc @ (z_dev * z_dev)) + R
        cross = (wc * z_dev) @ (pts - x_pred)
        K = cross / max(S, 1e-30)
        x_new = x_pred + K * (z - z_mean)
        P_new = _spd(P_pred - np.outer(K, K) * S)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(P_new))):
            raise NumericError("non-finite filter state")
        new_state = UkfState(x=x_new, P=P_new, params=p, reinit_count=state.reinit_count)
    except NumericError as exc:
        log.warning("UKF reinitialized at rate %.0f: %s", z, exc)
        new_state = UkfState.initial(z, p)
        new_state.reinit_count = state.reinit_count + 1
    estimate = float(np.clip(np.exp(new_state.x[0]), MIN_RATE, MAX_RATE))
    return new_state, estimate


# congestion evidence thresholds for the rule controller
LOSS_EVIDENCE = 0.02
DELAY_EVIDENCE = 40.0
GROW_FACTOR = 1.05
CUT_FACTOR = 0.85


def rule_control(
    prev_rate: float, ukf_estimate: float, loss_fraction: float, queue_delay: float
) -> float:
    """Cut to min(filter estimate, 0.85x) on loss/delay evidence; otherwise
    probe upward at most 1.05x per step.  Quiet-step growth cannot trust the
    filter (delivered rate only lower-bounds capacity when underutilized), so
    the filter's view is applied on cut steps, where deliveries are
    capacity-limited."""
    if loss_fraction > LOSS_EVIDENCE or queue_delay > DELAY_EVIDENCE:
        target = min(ukf_estimate, prev_rate * CUT_FACTOR)
    else:
        target = prev_rate * GROW_FACTOR
    return float(np.clip(target, MIN_RATE, MAX_RATE))


def opex_shape(a: np.ndarray, grad: np.ndarray, beta: float) -> np.ndarray:
    """a' = clip(a + beta * grad_a Q); no disturbance gating, no extra clamp."""
    a = np.asarray(a, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    return np.clip(a + beta * grad, -1.0, 1.0)
