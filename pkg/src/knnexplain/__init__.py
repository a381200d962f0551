"""k-NN explanations in learned representation spaces, and what happens when they are removed.

The pieces:

* :mod:`knnexplain.nn` -- small numpy classifiers with named activation taps,
  SGD training and exact last-layer gradients/Hessians.
* :mod:`knnexplain.representation` -- cosine k-NN over tap activations and
  1-NN label agreement.
* :mod:`knnexplain.influence` -- last-layer influence scores.
* :mod:`knnexplain.counterfactual` -- leave-k-out retraining and summary statistics.
* :mod:`knnexplain.data` -- datasets, IDX/CSV loaders, blobs, samplers.
"""

from .counterfactual import (AggregateRow, CounterfactualExperiment, CounterfactualRecord, aggregate,
                             aggregate_all, evaluate_trial, remove_and_retrain,
                             run_counterfactual_experiment)
from .data import (BlobSpec, LabeledDataset, load_csv, load_idx, make_blobs, make_blobs_split,
                   stratified_sample, uniform_subsample)
from .influence import InfluenceScores, influence_scores, inverse_hvp_solve, top_k_influential
from .nn import (ArchSpec, Layer, LayeredModel, TrainConfig, build_model, ce_loss, forward_with_taps,
                 grad_last_layer, hessian_last_layer, predict, train)
from .representation import (NeighborList, RepresentationMatrix, cosine_distance, extract_representations,
                             knn_query, label_agreement)

__version__ = "0.1.0"
