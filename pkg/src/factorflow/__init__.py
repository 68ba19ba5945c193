"""factorflow: an invertible multi-scale flow with a factorized latent space.

The final latent is cut into channel factors, each tied to one generative
concept by a paired-sample factor loss; the package covers the numerics
(a small reverse-mode autodiff engine), the flow layers and model, the
training loop, synthetic data, latent manipulation, and downstream probes.
"""

from . import autodiff, data, latent, layers, model, objective, precision, probes, training
from .autodiff import Tensor, grad_check, no_grad
from .data import Corpus, PairBatch, dequantize, generate_corpus, load_corpus, save_corpus
from .errors import ConfigError, DataError, FlowError, NumericsError, ShapeError
from .model import FlowConfig, GlowModel, LatentBundle
from .objective import FactorSpec, PairLossBreakdown, factor_loss, factorize, pair_loss, scale_loss
from .precision import set_precision
from .rng import Rng
from .training import Adam, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
