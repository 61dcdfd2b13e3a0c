"""Translation averaging for global structure from motion.

BATA (bilinear angle-based translation averaging) solved by IRLS with block
coordinate descent, the LUD / RevisedLUD (Shapefit-equivalent) / 1DSfM
baselines, a synthetic benchmark generator and the evaluation metrics.
"""

from .baselines import (
    LudConfig,
    OnedsfmConfig,
    RevisedLudConfig,
    lud_solve,
    onedsfm_solve,
    regime1_residual,
    revised_lud_solve,
    shapefit_residual,
)
from .bata import BataConfig, SolveDiagnostics, solve
from .core import (
    DegenerateInputError,
    DisconnectedGraphError,
    GraphError,
    SingularSystemError,
    TransAvgError,
    ViewGraph,
    centralize_normalize,
)
from .loss import Cauchy, Huber, L21Smooth, SquaredL2, make_loss
from .metrics import nrmse, robust_align, squash_r1_r2, squash_r3
from .synthetic import SynthConfig, TwoClusterConfig, gen_instance, gen_two_cluster

__version__ = "0.1.0"

__all__ = [
    "BataConfig", "Cauchy", "DegenerateInputError", "DisconnectedGraphError", "GraphError", "Huber",
    "L21Smooth", "LudConfig", "OnedsfmConfig", "RevisedLudConfig", "SingularSystemError", "SolveDiagnostics",
    "SquaredL2", "SynthConfig", "TransAvgError", "TwoClusterConfig", "ViewGraph", "centralize_normalize",
    "gen_instance", "gen_two_cluster", "lud_solve", "make_loss", "nrmse", "onedsfm_solve", "regime1_residual",
    "revised_lud_solve", "robust_align", "shapefit_residual", "solve", "squash_r1_r2", "squash_r3",
]
