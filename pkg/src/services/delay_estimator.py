"""Closed-loop delay estimation from command echoes.

Each echo returns the timestamp of the command it acknowledges; the gap
between that timestamp and the echo's arrival is one sample of the loop
delay. The default estimate is the cumulative mean of all accepted samples,
updated recursively. A sliding-window mean is available for long runs where
the delay drifts.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from model.core.errors import NegativeDelayError, NonFiniteError

logger = logging.getLogger('delay_estimator')


@dataclass(frozen=True)
class DelayEstimate:
    tau_hat: float = 0.0
    k: int = 0
    last_sample: float = 0.0
    window_samples: Tuple[float, ...] = ()


def _sample(sent_at: float, received_at: float) -> float:
    if not (math.isfinite(sent_at) and math.isfinite(received_at)):
        raise NonFiniteError("delay sample timestamps must be finite")
    if received_at < sent_at:
        raise NegativeDelayError(sent_at, received_at)
    return received_at - sent_at


def record_sample(est: DelayEstimate, sent_at: float, received_at: float) -> DelayEstimate:
    tau_new = _sample(sent_at, received_at)
    k = est.k
    tau_hat = est.tau_hat + (tau_new - est.tau_hat) / (k + 1)
    return replace(est, tau_hat=tau_hat, k=k + 1, last_sample=tau_new)


def record_sample_windowed(est: DelayEstimate, sent_at: float, received_at: float,
                           window: int) -> DelayEstimate:
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    tau_new = _sample(sent_at, received_at)
    samples = (est.window_samples + (tau_new,))[-window:]
    return DelayEstimate(sum(samples) / len(samples), est.k + 1, tau_new, samples)


def current_estimate(est: DelayEstimate) -> float:
    return est.tau_hat


class DelayEstimator:
    """Single-writer owner of a DelayEstimate; readers get the immutable snapshot."""

    def __init__(self, window: Optional[int] = None):
        if window is not None and window < 1:
            raise ValueError(f"window must be at least 1, got {window}")
        self.window = window
        self.estimate = DelayEstimate()
        self.rejected = 0

    def record(self, sent_at: float, received_at: float) -> bool:
        try:
            if self.window is None:
                self.estimate = record_sample(self.estimate, sent_at, received_at)
            else:
                self.estimate = record_sample_windowed(self.estimate, sent_at, received_at, self.window)
            return True
        except NegativeDelayError as e:
            self.rejected += 1
            logger.warning(f"Rejected delay sample: {str(e)}")
            return False

    @property
    def tau_hat(self) -> float:
        return current_estimate(self.estimate)

    @property
    def last_sample(self) -> Optional[float]:
        return self.estimate.last_sample if self.estimate.k else None

    def snapshot(self) -> DelayEstimate:
        return self.estimate
