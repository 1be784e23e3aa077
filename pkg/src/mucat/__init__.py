"""Simulator and verification laboratory for infinite-rate mutually
catalytic branching on finite site spaces.

The dynamics interlace a deterministic migration flow with exact per-site
resampling from the harmonic measure of the planar quadrant; the package
pairs the simulator with statistical tests of every closed-form identity
the construction satisfies.
"""

from .lattice import (Configuration, TestFunction, h_value, interior_mass,
                      is_boundary_state, pairing)
from .migration import (MigrationMatrix, WeightVector, apply_flow, build_beta,
                        build_matrix, flow_field, flow_operator, norm_beta,
                        srw_kernel)
from .quadrant import (BoundaryPoint, QuadrantPoint, boundary_cdf, density,
                       f_value, horizontal_tail, lozenge, moment_p, sample,
                       sample_bm_oracle, sample_signed, vertical_tail)
from .seeds import stream_rng, stream_seed
from .trotter import (PathRecord, TrotterParams, interface_positions, simulate,
                      simulate_batch, step)

__version__ = "0.1.0"
