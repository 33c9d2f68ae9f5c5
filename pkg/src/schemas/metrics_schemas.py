from typing import Literal, Optional

from pydantic import BaseModel, Field


class RunMetrics(BaseModel):
    scenario: str = 'track'
    samples: int = Field(0, ge=0)
    transient_s: float = Field(3.0, ge=0)
    rms_x: float = Field(..., ge=0)
    rms_y: float = Field(..., ge=0)
    rms_z: float = Field(..., ge=0)
    rms_euclidean: float = Field(..., ge=0)
    est_rms_x: Optional[float] = Field(None, ge=0)
    est_rms_y: Optional[float] = Field(None, ge=0)
    est_rms_z: Optional[float] = Field(None, ge=0)
    est_rms_euclidean: Optional[float] = Field(None, ge=0)
    min_obstacle_distance: Optional[float] = Field(None, ge=0)
    mean_delay_estimate: float = Field(0.0, ge=0)
    mean_solver_iterations: float = Field(0.0, ge=0)
    convergence_rate: float = Field(1.0, ge=0, le=1)

    def table_row(self, label: str) -> dict:
        """Centimetre RMS columns for the comparison table."""
        return {
            'run': label,
            'x_cm': self.rms_x * 100,
            'y_cm': self.rms_y * 100,
            'z_cm': self.rms_z * 100,
            'euclidean_cm': self.rms_euclidean * 100,
        }


class ScenarioSummary(BaseModel):
    status: Literal['completed', 'diverged']
    metrics: Optional[RunMetrics] = None
    log_path: str
    ticks: int
    error: Optional[str] = None
    diverged_at: Optional[float] = None


class TunnelStatsResponse(BaseModel):
    time_s: float
    rtt_est_s: float
    sent: int
    received: int
    dropped_stale: int
    decode_errors: int
