from src.services.delay_estimator import DelayEstimator
from src.services.message_bus import MessageBus
