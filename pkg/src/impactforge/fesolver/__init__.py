from .element import (b_matrix, element_internal_force, elastic_matrix, fresh_states,
                      square_operators, stable_dt)
from .material import (ElementState, MaterialModel, flow_direction, overstress_rate,
                       radial_return, return_residual, solve_increment, von_mises)
from .solver import RATE_RANGE, SimulationRecord, run_simulation

__all__ = [
    "ElementState", "MaterialModel", "SimulationRecord", "RATE_RANGE", "b_matrix",
    "elastic_matrix", "element_internal_force", "flow_direction", "fresh_states",
    "overstress_rate", "radial_return", "return_residual", "run_simulation",
    "solve_increment", "square_operators", "stable_dt", "von_mises",
]
