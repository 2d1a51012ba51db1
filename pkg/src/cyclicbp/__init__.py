"""Cyclic-phase BackPressure signal control on a store-and-forward network model."""
from .controllers import (
    ClassicBackPressure,
    CyclicBackPressure,
    EstimatorState,
    Greedy,
    PolicyDecision,
    Proportional,
    make_controller,
)
from .dynamics import DemandProfile, DemandSegment, MeasurementModel, initial_state, run_horizon
from .kernels import BACKEND
from .network import InRoad, Junction, NetworkTopology, Phase, TurningMatrix, compile_network, validate_topology
from .scenarios import Scenario, generate_grid, generate_two_junction, load, run_scenario, save
from .stability import brute_force_region, drift_diagnostic, lemma6_bound, max_epsilon, max_load_factor

__version__ = "0.1.0"
