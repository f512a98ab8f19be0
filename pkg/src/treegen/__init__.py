"""Tree-based generative modeling for tabular data.

Provides energy-based boosting with Gibbs sampling plus density estimation
trees/forests, with training, sampling, density evaluation and conditional
inference available as a library and through the ``treegen`` CLI.
"""

from .boosting import (
    BoostConfig,
    EnergyModel,
    InitialModel,
    LeafStats,
    RoundReport,
    boost_round,
    fit_tree,
    init_model,
    leaf_value,
    line_search,
    split_gain,
    train,
)
from .data import (
    DiscretizedDataset,
    FeatureSpec,
    Schema,
    discretize,
    empirical_marginals,
    fit_discretizer,
    infer_schema,
    undiscretize,
)
from .density import (
    DefEnsemble,
    DensityTree,
    def_log_density,
    def_sample,
    det_split_gain,
    fit_def,
    fit_det,
)
from .inference import (
    conditional,
    conditional_with_missing,
    exact_log_partition,
    predict,
    unnormalized_log_density,
)
from .sampling import (
    SamplePool,
    acceptance_probability,
    exact_sample_initial,
    gibbs_sweep,
    init_pool,
    refresh_pool,
    sample,
)
from .tree import Region, Tree

__version__ = "0.1.0"

__all__ = [
    "BoostConfig", "EnergyModel", "InitialModel", "LeafStats", "RoundReport",
    "boost_round", "fit_tree", "init_model", "leaf_value", "line_search",
    "split_gain", "train",
    "DiscretizedDataset", "FeatureSpec", "Schema", "discretize",
    "empirical_marginals", "fit_discretizer", "infer_schema", "undiscretize",
    "DefEnsemble", "DensityTree", "def_log_density", "def_sample",
    "det_split_gain", "fit_def", "fit_det",
    "conditional", "conditional_with_missing", "exact_log_partition",
    "predict", "unnormalized_log_density",
    "SamplePool", "acceptance_probability", "exact_sample_initial",
    "gibbs_sweep", "init_pool", "refresh_pool", "sample",
    "Region", "Tree",
]
