# Label classes
BACKGROUND = 0
PANCREAS = 1
TUMOUR = 2

CLASS_NAMES = ("background", "pancreas", "tumour")
N_CLASSES = len(CLASS_NAMES)

FOREGROUND_CLASSES = (PANCREAS, TUMOUR)

# Response labels
PROGRESSIVE = 1
NON_PROGRESSIVE = 0

# Splits
TRAIN = "train"
TEST = "test"
SPLITS = (TRAIN, TEST)

# Intensity window in HU (abdominal soft tissue)
HU_WINDOW = (-150.0, 250.0)

# Cropping defaults (voxels)
Z_MARGIN = 2
BBOX_MARGIN = (8, 8, 8)

# Decision cutoffs
SLICE_THRESHOLD = 0.5
RESPONSE_THRESHOLD = 0.5

# Sliding window
WINDOW_OVERLAP = 0.5

# Triplet defaults
TRIPLET_MARGIN = 1.0
TRIPLETS_PER_STEP = 8

# Ablation rows, in cumulative order
BASELINE = "baseline"
SLICE_CROP = "slice_crop"
INFORMED_CROP = "informed_crop"
SEG_FORWARD = "seg_forward"
TRANSFER = "transfer"
TRIPLET = "triplet"

ABLATION_ROWS = (BASELINE, SLICE_CROP, INFORMED_CROP, SEG_FORWARD, TRANSFER, TRIPLET)

ROW_TITLES = {
    BASELINE: "Baseline",
    SLICE_CROP: "+ slice (z) cropping",
    INFORMED_CROP: "+ informed x/y cropping",
    SEG_FORWARD: "+ segmentation forwarding",
    TRANSFER: "+ transfer learning",
    TRIPLET: "+ triplet loss",
}

# Checkpoints
CHECKPOINT_MAGIC = b"PDACKPT\x00"
CHECKPOINT_VERSION = 1

STAGE_SLICE = "slice"
STAGE_SEG = "seg"
STAGE_CLS = "cls"

# On-disk layout (MSD task style)
DATASET_JSON = "dataset.json"
IMAGES_DIR = "imagesTr"
LABELS_DIR = "labelsTr"
MANIFEST_CSV = "manifest.csv"
NIFTI_SUFFIX = ".nii.gz"

MANIFEST_COLUMNS = ("case_id", "volume_path", "response_label", "mask_path", "split")
RESULT_COLUMNS = ("row", "seed", "mcc", "accuracy", "auc_roc")
METRIC_NAMES = ("mcc", "accuracy", "auc_roc")
PREDICTION_COLUMNS = ("row", "seed", "case_id", "response_label", "probability")
TIMING_COLUMNS = ("row", "seed", "n_parameters", "train_seconds")

# Output files of an ablation run
RESULTS_CSV = "results.csv"
SUMMARY_CSV = "summary.csv"
RESULTS_JSON = "results.json"
PREDICTIONS_CSV = "predictions.csv"
TIMINGS_CSV = "timings.csv"
BOXPLOT_PNG = "mcc_boxplot.png"
CONFIG_YAML = "config.yaml"
CHECKPOINT_DIR = "checkpoints"
