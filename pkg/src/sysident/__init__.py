"""Nonlinear system identification with from-scratch neural sequence models.

Temporal convolutional networks, NARX multilayer perceptrons and LSTMs with
hand-written reverse-mode gradients, the full training protocol (Adam,
plateau learning-rate schedule, early stopping), one-step-ahead and free-run
evaluation, grid-search sweeps and Volterra kernel extraction.
"""

__version__ = "0.1.0"

from .analysis import (EvalReport, VolterraKernels, error_spectrum, evaluate,
                       extract_volterra_kernels, fd_volterra_oracle, rmse)
from .data import (Dataset, NoiseSpec, NormConstants, SequenceRecord,
                   compute_norm_constants, denormalize_output,
                   generate_held_gaussian_input, load_csv_dataset,
                   make_chen_dataset, normalize_dataset, save_csv_dataset,
                   simulate_chen)
from .errors import (ConfigError, DataError, DimensionError, NumericError,
                     ParameterError, SchemaError, SysidentError,
                     TrainingDiverged, UnsupportedError)
from .gridsearch import (GridRow, GridSpace, chen_lstm_space, chen_mlp_space,
                         chen_tcn_space, f16_tcn_space, grid_expand,
                         marginal_quartiles, run_grid, select_best)
from .models import (ModelConfig, build_model, count_parameters,
                     free_run_naive, load_checkpoint, lstm_cell_step,
                     predict_one_step, receptive_field, save_checkpoint,
                     simulate_free_run)
from .tensor import Rng, Tensor, derive_seed, gaussian, matmul, reshape, tensor
from .training import (Adam, PlateauScheduler, RMSprop, SGDMomentum,
                       TrainConfig, TrainHistory, mse_loss,
                       reduce_lr_on_plateau, train, validation_loss)
