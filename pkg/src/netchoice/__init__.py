"""netchoice: discrete choice estimation with social-network effects.

Utilities of interdependent decision makers are modeled with
graph-convolutional networks whose skip connections preserve a private
linear-in-attributes utility, trained by stochastic gradient descent with
optional weight averaging or approximate Bayesian (Langevin) sampling.
Limiting cases reduce to binary/conditional logit and to spatial
autoregressive latent-utility processes.
"""

from .autodiff import RunningStats, Tape, backward, batchnorm
from .dataio import (ChoiceDataset, IndividualTable, Manifest, SimulationSpec,
                     SimulationResult, export_results, load_dataset,
                     load_manifest, simulate, write_dataset)
from .econometrics import (CredibleIntervals, MarginalUtilities, OddsRatios,
                           VottEstimates, credible_intervals,
                           marginal_utilities, marginal_utility_functional,
                           marginal_utility_spillovers, odds_ratio,
                           odds_ratio_functional, vott, vott_from_model,
                           vott_functional)
from .errors import (ConfigError, ConvergenceError, DataError,
                     IdentificationError, LoadError, NetChoiceError,
                     NumericError, ParameterError, ShapeError, StateError,
                     TrainingDivergedError, UnsupportedModelError)
from .estimation import (CvReport, GridSearchResult, PosteriorSamples,
                         SgldConfig, TrainConfig, TrainResult, derive_seed,
                         kfold_cv, make_folds, random_grid_search,
                         sgld_sample, train_sgd, weighted_accuracy,
                         weighted_accuracy_details, weighted_cross_entropy)
from .estimators import (ESTIMATORS, BinaryLogit, BinarySkipGnn,
                         ConditionalLogit, GcnClassifier, IiaSkipGnn,
                         MultinomialSkipGnn)
from .graph import (AdjacencyGraph, affine_fixed_point, build_knn_graph,
                    normalize, read_edge_list, spectral_radius,
                    write_edge_list)
from .models import (ConditionalLogitModel, ConditionalLogitParams, GcnModel,
                     LinearUtilityParams, LogitModel, MODEL_FAMILIES,
                     ModelOutput, SkipGnnBinaryModel, SkipGnnIiaModel,
                     SkipGnnMultinomialModel, SkipGnnSpec, Weights,
                     conditional_logit_forward, finalize_stats, gcn_forward,
                     load_checkpoint, logit_forward, model_from_spec_dict,
                     private_utility, probs_to_choices, save_checkpoint,
                     skip_gnn_forward_binary, skip_gnn_forward_multinomial,
                     skip_gnn_iia_forward, skip_gnn_model, validate_spec)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
