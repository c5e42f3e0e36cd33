"""Blinking-trace synthesis and on/off lifetime estimation.

Simulates two-state telegraph fluorescence traces with exactly known
switching lifetimes and extracts those lifetimes back out of scarce data
with three estimators: a Levenberg-Marquardt exponential fit, a supervised
multi-feature regression, and an unsupervised genetic algorithm over
K-means++ clusterings.  A seeded benchmark harness compares the three.
"""

from .bench import (
    BenchCell,
    Scenario,
    accuracy,
    default_scenario,
    fig2_scenario,
    precision,
    run_trial,
    sweep,
    train_mfr_models,
)
from .dwell import (
    DwellHistogram,
    EmpiricalDensity,
    StateSequence,
    auto_threshold,
    binarize,
    dwell_histogram,
    empirical_density,
    mean_dwell,
)
from .emitter import (
    BlinkTrace,
    DwellDistribution,
    EmitterModel,
    TrapChannel,
    generate_trace,
    intensity,
    read_trace,
    sample_dwell,
    simulate_channel_activity,
    survival_prob,
    switching_prob,
    total_trap_rate,
    write_trace,
)
from .errors import (
    BlinkfitError,
    DegenerateClusterError,
    DivergenceError,
    EmptyHistogramError,
    InsufficientDataError,
    NoEstimateError,
    NoSeparationError,
    RankDeficientError,
)
from .estimate import RateEstimate
from .ga import (
    GaConfig,
    Individual,
    crossover_clone_exchange,
    extract_tau,
    heuristic_estimate,
    kmeans_cluster,
    kmeanspp_init,
    mutate,
    run_ga,
    silhouette,
    spawn_individual,
)
from .levmar import ExpFitParams, LmConfig, fit_exponential, lm_solve
from .mfr import (
    FeatureVector,
    MfrModel,
    TrainingSet,
    featurize,
    generate_training_corpus,
    predict,
    train,
    train_model,
)

__version__ = "0.1.0"
