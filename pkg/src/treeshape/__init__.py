"""Sunlight, harvest and ramified-irrigation functionals for tree-shape optimization."""

__version__ = "0.1.0"

from .measure import (Atom, BoxDomain, DiscreteMeasure, GridDensity, MeasureError, add,
                      dilate, rasterize, scale_mass, total_mass)
from .sunlight import (Direction, IntensityModel, hemisphere_intensity, project_density,
                       sunlight_directional, sunlight_total, sunlight_with_obstacle)
from .irrigation import (FluxTree, IrrigationTree, compute_fluxes, gilbert_cost,
                         irrigation_cost, lower_bound, relax_steiner_points)
from .harvest import (DomainGrid2D, MeasureCoefficient, ReactionSpec, harvest_flux_form,
                      harvest_value, solve, verify_comparison)
from .optimizer import (BranchProblem, RootProblem, SearchOptions, certify, optimize_branches,
                        optimize_roots, support_radius)
