"""Drug-infusion vital-sign dynamics toolkit.

Fits and compares a physiologically constrained PK/PD compartment model and
a data-driven input-output nonlinear dynamical system, with unscented
Kalman filtering, EM learning, multi-horizon forecasting and a what-if
protocol exploration service.
"""
from .core import (GaussianBelief, GeneralizedLogistic, InfusionProtocol,
                   NumericalError, ConfigurationError, StateSpaceParams,
                   VitalSignSeries, eval_logistic, matrix_exponential,
                   project_to_stable, spectral_radius)
from .unscented import SigmaPointSet, UTParams, sigma_points, unscented_transform
from .inference import (FilterResult, FreeRunResult, SmoothResult, free_run,
                        h_step_predict, predict_step, rts_smooth, run_filter,
                        update_step)
from .learning import EMConfig, EMResult, SufficientStats, default_init, run_em
from .pkpd import CompartmentRates, build_F, fit_k1e_grid, pkpd_as_nlds, simulate_ode
from .evaluation import (EvaluationReport, ModelsConfig, bic, compare_models,
                         count_params, paired_t_test, smse)
from .synth import (GeneratorSpec, MissingSpec,
                    ProtocolTemplate, make_cohort, make_protocol,
                    sample_trajectory)

__version__ = "0.1.0"
