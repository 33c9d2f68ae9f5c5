from model.core.dynamics import ControlInput, ObstacleState, UavParams, UavState, step_obstacle, step_uav
from model.core.nmpc import McpBounds, McpSolution, McpWeights, ObstacleTrack, OcpProblem
from model.core.predictor import PredictedObstacle, PredictedState, predict_obstacle, predict_uav
from model.core.solver import NmpcSolver, SolverSettings, shift_warm_start
