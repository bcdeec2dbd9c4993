"""Spiking-network toolkit for early turn-taking prediction.

Raw multichannel observations are quantized into spike stimuli, run through
small recurrent Izhikevich networks trained with spike-timing-dependent
plasticity, and classified from their firing maps well before an event
completes. Includes three comparison baselines, a next-object predictor,
a synthetic corpus generator and a leave-one-subject-out benchmark.
"""

from .dataset import (
    Corpus,
    ObjectSequence,
    ObservationMatrix,
    SyntheticConfig,
    TurnEvent,
    generate_synthetic,
    load_corpus,
    save_corpus,
    slice_partial,
)
from .descriptors import NhnfDescriptor, extract_png, jaccard, lcs_similarity, nhnf
from .errors import ConfigError, DataError, NumericalError
from .experiment import ExperimentConfig, f1_curve, loso_split, reference_config, run_experiment
from .hmm import DiscreteHmm, GaussianHmm
from .metrics import TAU_GRID, EarlyCurve, auc, cohen_kappa, f1, mad, median_low, weighted_f1
from .model import CANONICAL_ROWS, TtsnetConfig, TtsnetModel, train
from .objects import ObjectHistory, ObjectPredictor, predict_next, train_object_models, trigram_windows
from .snn import (
    FiringMap,
    LevelMap,
    NeuronKernel,
    SpikingNetwork,
    StdpRule,
    StimulusSchedule,
    build_network,
    fit_quantizer,
    map_levels,
    quantize,
    schedule_stimuli,
    simulate,
    simulate_neuron,
    train_weights,
)

__version__ = "0.1.0"
