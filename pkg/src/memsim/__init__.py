"""Gap-potential, force-density, and plate-equilibrium toolkit for an
idealized two-dielectric MEMS cross-section."""

from .boundary import (BoundaryFamily, CompatibilityReport, PermittivityField,
                       affine_family, build_permittivity, capacitor_family,
                       check_compatibility, constant_sigma, derivative_selfcheck,
                       sine_sigma)
from .energy import (EnergyReport, coercivity_kappa, condition_bbb,
                     dirichlet_energy, dirichlet_upper_bound, energy_lower_bound,
                     energy_report, mechanical_energy)
from .equilibrium import (EquilibriumReport, MinimizeOptions,
                          minimize_total_energy, total_gradient, vi_residual)
from .forces import (ForceDensity, electrostatic_force_density,
                     fd_shape_derivative, shape_derivative, shape_force_density)
from .geometry import (DeviceParams, Grid1D, Profile, ReferenceGrids,
                       bump_profile, coincidence_set, make_profile,
                       make_reference_grids, read_profile_csv, touching_profile,
                       uniform_profile, write_profile_csv, zero_profile)
from .transmission import (LinearSystem, MappedPotential, ModelContext,
                           SolverOptions, TraceSet, assemble, extract_traces,
                           solve_for_profile, solve_potential,
                           transmission_residual)

__version__ = "0.1.0"
