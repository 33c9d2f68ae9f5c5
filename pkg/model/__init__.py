from model.core.dynamics import ControlInput, ObstacleState, UavParams, UavState
from model.core.solver import NmpcSolver, SolverSettings
