"""XRAY: conical-hull anchor selection for separable non-negative matrix factorization."""
import warnings

# numba probes TBB on first parallel launch; the workqueue layer is used instead
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .detection import DetectionReport, SelectionCriterion
from .driver import XrayConfig, XrayResult, early_stop_check, model_select, refine, xray_run
from .nnls import NnlsSettings, NnlsWorkspace, nnls_solve
from .sparse import GramCache, SparseMatrix, build_sparse, gram, gram_rows

__all__ = [
    "DetectionReport", "GramCache", "NnlsSettings", "NnlsWorkspace", "SelectionCriterion",
    "SparseMatrix", "XrayConfig", "XrayResult", "build_sparse", "early_stop_check", "gram",
    "gram_rows", "model_select", "nnls_solve", "refine", "xray_run",
]
__version__ = "0.1.0"
