"""Full-dynamics simulator for a 20-DOF quadruped with a two-joint spine."""

from .contact import ContactSolver, solve_contact_impulses
from .dynamics import coriolis_vector, dynamics_terms, gravity_vector, mass_matrix
from .kinematics import SingularityError, contact_jacobian, forward_kinematics
from .model import ConfigError, RobotModel, default_robot, load_robot_config, load_robot_file
from .sim import (
    RobotState,
    Scenario,
    TrajectoryLog,
    default_stance,
    drop_scenario,
    pd_torques,
    run,
    step,
    summarize,
)

__version__ = "0.1.0"
