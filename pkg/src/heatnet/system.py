"""Assembly of ready-to-integrate systems from network + scenario."""

from __future__ import annotations

from .hydraulics import FlowDecomposition, HydraulicSolver
from .scenario import DemandModel
from .simulate import FomModel, TimeGrid
from .transport import AffineOperatorLibrary, Discretization, OutputMap


def build_fom(net, disc, e_return, sign_configs=None):
    """Full-order model plus its hydraulic solver."""
    dec = FlowDecomposition(net)
    library = AffineOperatorLibrary(net, disc, dec, sign_configs)
    model = FomModel(net, disc, library, OutputMap(net, disc))
    hyd = HydraulicSolver(net, e_return=e_return)
    return model, hyd


def build_setup(net, scenario_cfg, cells=None, cells_per_meter=None, sign_configs=None):
    """(model, hydraulics, demand, grid) for one scenario.

    Exactly one of ``cells`` (uniform count per pipe) or
    ``cells_per_meter`` may be given; the default is one cell per pipe.
    """
    if cells is not None and cells_per_meter is not None:
        raise ValueError("give either cells or cells_per_meter, not both")
    if cells_per_meter is not None:
        disc = Discretization.from_target_dx(net, 1.0 / cells_per_meter)
    else:
        disc = Discretization.uniform(net, cells or 1)
    model, hyd = build_fom(net, disc, scenario_cfg.e_return, sign_configs)
    demand = DemandModel(net.consumers, scenario_cfg.t_daily_mean_c)
    grid = TimeGrid.from_scenario(scenario_cfg)
    return model, hyd, demand, grid
