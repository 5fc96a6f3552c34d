"""Graph U-Net surrogate predicting local coarse bases from SGB1 records."""

from .formats import FormatError, Record, read_cbx, read_sgb, write_cbx
from .loss import LossWeights, subspace_loss
from .model import CoarseBasisNet, ConfigError, ModelConfig, prepare_inputs

__version__ = "0.1.0"
