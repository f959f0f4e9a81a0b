"""Behaviourally diverse classifier ensembles via surrogate-assisted novelty search."""

from .dataset import DataSplit, LabeledDataset, load_csv, split, standardize, synth_blobs
from .diversity import (
    METRIC_NAMES,
    DistanceVector,
    PairCounts,
    exact_distance,
    metric_arch_dist,
    metric_cos_dist,
    metric_dis,
    metric_prop1,
    metric_prop2,
    metric_prop_harm,
    pair_counts,
)
from .ensemble import StackingModel, fit_stacking, predict_ensemble
from .genome import (
    Genome,
    SearchSpaceBounds,
    arch_rep,
    genome_to_config,
    mutate,
    normalize,
    random_genome,
)
from .learner import (
    PredictionProfile,
    ResidualMlp,
    TrainConfig,
    build,
    evaluate,
    train_joint,
    train_population,
    train_separate,
)
from .search import NsConfig, SearchState, elite_score, novelty_score, run, select_final_ensemble, step
from .surrogate import (
    DistanceRecord,
    ForestParams,
    RandomForestSurrogate,
    build_distance_dataset,
    fit,
    rank_fidelity,
)

__version__ = "0.1.0"
