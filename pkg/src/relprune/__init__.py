"""Attribution-guided neuron pruning for small numpy classifiers."""
from .attribution import (AttributionMap, IgConfig, LrpConfig, NeuronScoreTable,
                          aggregate_unit_scores, attribute, dl_backtrace, integrated_gradients, lrp)
from .pruning import (PrunePlan, PruningMask, export_pruned, magnitude_scores, random_scores,
                      rank_and_mask)
from .sampling import SamplePlan, sample_clustering, sample_confidence, sample_random
from .tensor_net import (Conv2d, Dense, Flatten, ForwardTrace, MaxPool2d, Network, ReLU,
                         backward, build_cnn, build_mlp, forward, masked_forward)
from .trainer import AugmentConfig, TrainConfig, compute_class_weights, lr_at_epoch, train

__version__ = "0.1.0"
