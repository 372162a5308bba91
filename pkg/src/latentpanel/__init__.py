"""Neighbor-set estimation for nonparametric panel factor models."""
from .panel import (CellIndex, Panel, TheoryConstants, TreatmentMask, ValidationReport,
                    empirical_bound, resolve_cy, validate_panel)
from .dgp import (Assignment, DgpSpec, Effect, LatentDist, SimulatedPanel, builtin_assignments,
                  mu_oracle, preset, register_outcome, simulate)
from .neighbors import (CrossMomentMatrix, NeighborSet, NuPolicy, adaptive_nu, causal_discrepancy,
                        causal_matrix, causal_neighbor_set, control_periods, cross_moments,
                        discrepancy, discrepancy_matrix, neighbor_set, oracle_jstar)
from .estimation import (AttResult, DecompositionResult, decompose, estimate_att, impute_cell,
                         predict_mu_matrix)
from .baselines import match_ks, match_l2, match_row_mean, twfe_fit

__version__ = "0.1.0"
