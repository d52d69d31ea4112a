"""Token statistics self-attention (TSSA) and the coding-rate objectives it descends."""

from .causal import CausalParams, CausalStream, causal_membership, causal_tssa_attention, causal_token_update
from .coding_rate import (
    ProjectionBank,
    SpectralFn,
    compression_rate,
    expansion_rate,
    general_compression,
    grad_variational,
    image_residual,
    oracle_bases,
    variational_bound_gap,
    variational_compression,
)
from .container import load_model, save_model
from .errors import (
    DegenerateGroupError,
    DimensionError,
    NumericalError,
    PreconditionError,
    SpecError,
    TostError,
    ValidationError,
)
from .harness import SynthSpec, baseline_sdpa, bench_scaling, layerwise_experiment, synth_subspaces
from .linalg import random_orthonormal, sym_eig
from .model import BlockParams, ModelParams, block_forward, init_model, layer_norm, mlp_forward, model_forward
from .tssa import TssaParams, estimate_membership, token_update, tssa_attention

__version__ = "0.1.0"
