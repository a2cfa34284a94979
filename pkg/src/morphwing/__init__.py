"""Flight-dynamics simulator and collocation gait controller for a
dynamic-morphing flapping-wing robot."""

from .params import (AeroParams, CostParams, GaitParams, MorphologyParams,
                     SimConfig, SolverOptions, StructureParams)
from .dynamics import (BodyState, RobotState, euler_angles, full_dynamics,
                       mass_matrix, rk4_step, total_energy, angular_momentum)
from .aero import (AeroOutput, AeroState, BladeElement, VorticityGrid,
                   aero_step, assemble_aero_system, build_elements,
                   element_kinematics, lifting_line_correction,
                   vorticity_phase_map, wagner_phi)
from .structure import (RegulatorCommand, StructureModel, StructureState,
                        discretize_structure, gait_targets, structure_dynamics)
from .collocation import (DecisionLayout, TimeGrid, assemble_nlp,
                          defect_residuals, interpolate_control,
                          interpolate_state, tracking_cost)
from .solver import NlpProblem, SolveReport, finite_difference_gradient, solve
from .errors import (GimbalLockError, IntegrationBlowupError, ModelConfigError,
                     MorphwingError, SingularInfluenceError, SolverAbortError)

__version__ = "0.1.0"
