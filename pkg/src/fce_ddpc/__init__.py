"""Final Control Error predictive control from input/output data, with
subspace-based competitors and a Monte-Carlo benchmark harness."""
from .arx import ArxModel, fit_arx, fit_arx_prior, residual_sigma2, select_order_aic
from .bench import BenchmarkConfig, BenchmarkReport, SchemeSpec, grid_search, run_benchmark, summarize
from .fce import ControlSpec, FCEController, QuadraticObjective, assemble_fce, fce_components, solve_qp
from .hankel import Dataset, build_hankel, load_dataset, partition, save_dataset
from .plant import (ExcitationSpec, OracleMPCController, ReferenceSpec, make_reference,
                    performance_index, run_closed_loop, simulate_open_loop)
from .predictor import (PlantModel, benchmark_plant, build_forms, build_regressors,
                        oracle_predict, predict_multistep)
from .subspace import (DeePcConfig, GammaConfig, LqFactors, deepc_solve, gamma_solve,
                       lq_decompose, thm3_solve, varx_bank_fit)

__version__ = "0.1.0"
