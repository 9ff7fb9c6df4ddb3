"""Network-based ranking and classification of samples in the sample space.

Samples are nodes of a correlation graph, the graph is turned into a kernel,
weak edges are pruned at a quantile chosen by leave-one-out AUC, and nodes are
scored by their kernel similarity to the labelled positives.
"""

__version__ = "0.1.0"

from .dataset import (
    ExpressionMatrix,
    PhenotypeLabels,
    collapse_probes,
    derive_labels,
    filter_by_gene_list,
    filter_by_mean,
    filter_by_sd,
    load_expression,
    load_labels,
    synth_cohort,
)
from .errors import DataError, DegenerateLabelsError, EmptyMatrixError, PNetError, SplitError
from .featsel import FeatureStats, moderated_t, select_top_k, welch_t
from .kernel import KernelMatrix, KernelSpec, kernel_convergence, make_kernel, random_walk_kernel
from .pipeline import (
    EvaluationReport,
    PipelineConfig,
    kfold_eval,
    mccv,
    pnet_cv,
    pnet_double_loo,
    pnet_heldout,
    select_score_threshold,
    stability,
)
from .scoring import ScoreSpec, ScoreVector, rank_samples, score_all, score_node
from .similarity import SimilarityMatrix, kendall_matrix, pearson_matrix, spearman_matrix, similarity_matrix
from .threshold import DEFAULT_GRID, ThresholdResult, auc, filter_matrix, matrix_quantile, optimize_thresh_by_loo
