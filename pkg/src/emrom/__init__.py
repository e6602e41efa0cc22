"""Electromechanical reduced-order modelling toolkit.

Finite element assembly of a coupled electro-mechanical problem with
polynomial nonlinearities, reduction to an invariant-manifold normal
form at arbitrary order, and verification against full-order transient
integration.  Units are micrometre / microsecond / kilogram / volt
throughout; rates are rad/us.
"""

__version__ = "0.1.0"

from .mesh import Mesh, generate_beam_mesh, generate_pullin_mesh
from .dofmap import DofMap, build_dofmap
from .assembly import EPS0, Material, FieldState, assemble_operators
from .mppf import PlateKernel, assemble_plate_operators
from .statics import (CoupledStatic, PlateStatic, newton_solve,
                      voltage_ramp, pullin_sweep, PullInResult,
                      measured_plate_stiffness)
from .dae import (SemiDiscreteSystem, build_dae, build_plate_dae,
                  from_matrices, audit_structure)
from .spectral import ModeSet, eig_pencil, modes_of
from .dpim import (Parametrisation, parametrise, enumerate_monomials,
                   invariance_residual, save_rom, load_rom)
from .rom import (ReducedDynamics, OrbitSampler, FRCResult, frc_sweep,
                  newton_periodic, linear_amplitude, flat_branch,
                  pd_scan, parametric_branch_points,
                  period_doubled_branch, write_frc_csv, read_frc_csv)
from .fom import (TransientPlate, newmark_transient, steady_amplitude,
                  fom_frc, write_fom_csv, read_fom_csv)
from .cli import SystemConfig, ConfigError, load_config, save_config
