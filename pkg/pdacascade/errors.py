class CascadeError(Exception):
    def __init__(self, message):
        super().__init__(message)


class InvalidLabelError(CascadeError, ValueError):
    def __init__(self, value, n_classes):
        self.value = value
        self.n_classes = n_classes
        super().__init__(f"Invalid label {value}: every voxel must be in [0, {n_classes - 1}]")


class EmptyForegroundError(CascadeError):
    def __init__(self, foreground_classes):
        super().__init__(f"Mask has no voxel in foreground classes {tuple(foreground_classes)}")


class ShapeMismatchError(CascadeError, ValueError):
    def __init__(self, what, expected, got):
        super().__init__(f"{what}: expected {expected}, got {got}")


class VolumeFormatError(CascadeError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"Bad volume format in {path}: {reason}")


class MissingFileError(CascadeError, FileNotFoundError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"Listed file does not exist: {path}")


class StratificationError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Cannot stratify split: {reason}")


class GenerationError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Phantom generation failed: {reason}")


class EmptyPredictionError(CascadeError):
    def __init__(self):
        super().__init__("Slice prediction has no positive slice, nothing to crop to")


class ModelStateError(CascadeError):
    def __init__(self, model_name):
        super().__init__(f"{model_name} is not trained. Train it or load a checkpoint first")


class DegenerateDatasetError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Degenerate training data: {reason}")


class SamplingError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Cannot sample triplet: {reason}")


class TransferError(CascadeError):
    def __init__(self, tensor_name, reason):
        self.tensor_name = tensor_name
        super().__init__(f"Encoder transfer failed on tensor '{tensor_name}': {reason}")


class EmptyInputError(CascadeError, ValueError):
    def __init__(self):
        super().__init__("Confusion counts are all zero")


class UndefinedMetricError(CascadeError, ValueError):
    def __init__(self, metric, reason):
        super().__init__(f"{metric} is undefined: {reason}")


class InsufficientRunsError(CascadeError, ValueError):
    def __init__(self, number):
        super().__init__(f"At least 2 runs are needed to summarize (got {number})")


class CheckpointVersionError(CascadeError):
    def __init__(self, expected, got):
        super().__init__(f"Checkpoint format version {got} is not supported (expected {expected})")


class CheckpointIntegrityError(CascadeError):
    def __init__(self, path, reason):
        super().__init__(f"Corrupted checkpoint {path}: {reason}")


class OrchestrationError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Pipeline orchestration failed: {reason}")


class ConfigurationError(CascadeError):
    def __init__(self, reason):
        super().__init__(f"Invalid configuration: {reason}")
