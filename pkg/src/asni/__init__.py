"""Sigmoid-scheduled global magnitude pruning with a two-level learned initialization."""
from .amenable import (AmenableInit, CentroidSet, build_init, build_original_init,
                       extract_centroids, retrain_amenable)
from .architectures import count_params, get_spec
from .data import Dataset, load_cifar10, load_dataset, load_mnist
from .mask import Mask
from .optim import LrSchedule, OptimizerState, lr_at, step
from .sparsity import (PruneEvent, SparsitySchedule, asni_one_round, global_prune, lta,
                       sparsity_at, stabilized_lta)
from .tensor import LayerSpec, ParamStore, build_network, forward, loss_and_grad
from .training import NumericalError, TrainConfig

__version__ = "0.1.0"
