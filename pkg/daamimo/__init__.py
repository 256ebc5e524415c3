from .scenario import (NetworkScenario, GeometryParams, SystemScalars,
                       ScenarioLoader, build_ring_network,
                       build_custom_network, build_cell_free_network,
                       geometry_of)
from .covariance import OneRingParams, CovarianceSet, build_covariance_set
from .estimation import (EstimationSet, build_estimation_set,
                         sample_channels, simulate_pilot_and_estimate)
from .sinr import (SinrCoefficients, PowerAllocation, SinrReport,
                   compute_coefficients, closed_form_sinr, monte_carlo_sinr)
from .conic import SocConstraint, SocProgram, solve_feasibility
from .power import (equal_power, maxmin_power, verify_power_constraint,
                    build_feasibility_problem)
from .harness import ExperimentRunner, ExperimentSpec, run_sweep, export
import importlib.metadata
try:
    __version__ = importlib.metadata.version(__package__)
except importlib.metadata.PackageNotFoundError:
    __version__ = "Version not found"

from .eventsourcing import *
from .views import *
