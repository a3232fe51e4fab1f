"""atomscope: continuous dispersive cavity readout of trapped atoms.

A numpy/scipy simulation library for a cavity-QED position microscope:
a dark-state-engineered, subwavelength focusing function couples an atom's
location to a driven cavity mode whose output is homodyne-detected.  The
package covers the focusing-function engineering, the reduced stochastic
master equations of the bad-cavity (movie) and good-cavity (scanning)
regimes, the full atom-cavity validation model, the population-level
stochastic rate equation, current filtering, ensemble and cascade SNR
estimators, and the resolution-limit scaling analysis.
"""

__version__ = "0.1.0"

from .hilbert import (BasisSpec, DensityOperator, Operator, coherent_density,
                      fock_density, hermite_functions, homodyne_apply,
                      ho_hamiltonian, lindblad_apply, momentum_operator,
                      position_operator, tensor_with_vacuum, thermal_populations,
                      thermal_state, trace_distance)
from .focus import (FocusConfig, FocusProfile, design_for_sigma,
                    design_for_targets, focusing_function, mixing_angle,
                    nonadiabatic_potential, resolution_analytic)
from .model import (MicroscopeParams, ModelOperators, ScanOperators,
                    assemble_model, build_f_matrix, build_lsp, build_rates,
                    build_scan_operators, build_sidebands, measurement_rate)
from .trajectory import (IntegratorConfig, ScanProtocol, Trajectory,
                         full_ensemble, movie_ensemble, run_full_sme,
                         run_lindblad, run_movie_sme, run_scan_sme, run_sre,
                         scan_ensemble, sre_ensemble, trajectory_rng)
from .signal import (FilterConfig, SnrEstimate, filter_current, filter_many,
                     snr_cascade, snr_ensemble)
from .analysis import (PhaseSpaceGrid, btilde_over_gamma, eqnd_profile,
                       ensemble_average_state, compare_to_lindblad,
                       fit_power_law, optimal_scan_time, resolution_limit,
                       snr_analytic, snr_analytic_full, wigner)
