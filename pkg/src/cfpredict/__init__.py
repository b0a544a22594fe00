"""Tools for fitting prediction models aimed at outcomes under
hypothetical treatment strategies and for estimating how such models
would perform if a strategy were followed, from observational data in
which treatment was assigned some other way."""

from .core import (ABSOLUTE, SQUARED, Dataset, Loss, Observation,
                   PositivityError, PredictorSubset, SequentialDataset,
                   SequentialObservation, StaticRegime, StochasticRegime,
                   get_loss, load_csv, load_sequential_csv, split_dataset,
                   subset_columns)
from .glm import (BINOMIAL, GAUSSIAN, DesignSpec, GlmFit, RankDeficiencyError,
                  Term, build_design, fit_glm, fit_glm_data, predict_glm)
from .inference import BootstrapResult, McSummary, bootstrap, mc_summary
from .longitudinal import (SequentialRegime, SequentialWeights,
                           loss_ice_sequential, loss_ipw_sequential,
                           sequential_weights)
from .nuisance import (BinaryCondLoss, ContinuousCondLoss, NuisanceSet,
                       PropensityModel, fit_cond_loss, fit_nuisances,
                       fit_propensity, known_cond_loss, known_cond_loss_binary,
                       known_propensity)
from .perf import (CandidateModel, CvResult, NoComparablePairsError,
                   PerfEstimate, auc, calibration, cv_select, loss_cl,
                   loss_cl_stochastic, loss_dr, loss_ipw, loss_ipw_stochastic,
                   loss_naive)
from .simulate import (BinaryDgp, ContinuousDgp, ExperimentResult, generate,
                       generate_forced, generate_potential, run_experiment,
                       truth_auc, truth_loss)
from .tailor import (FittedModel, fit_plain, fit_tailored_ipw,
                     fit_tailored_standardized)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
