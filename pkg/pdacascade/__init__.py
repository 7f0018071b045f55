__version__ = "0.1.0"

from . import constants
from .config import ExperimentConfig, load_config
from .pipeline import build_row_pipeline, run_ablation
from .volume import BBox3, CaseRecord, DatasetManifest, LabelMask, Volume
