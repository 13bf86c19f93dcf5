"""The constants for vadlstm."""

from enum import IntEnum, StrEnum

FRAME_SUFFIX = ".png"
FRAME_NAME_FMT = "{:06d}.png"
SYNTH_VIDEO_FMT = "video_{:03d}"
LABEL_SUFFIX = ".labels"
LOCK_FILE = ".vad.lock"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.csv"
SCORE_FILE = "scores.csv"
SUMMARY_FILE = "summary.txt"
ACCEPTANCE_FILE = "acceptance.csv"
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
CHECKPOINT_FMT = "epoch_{:03d}.ckpt"
SIDECAR_SUFFIX = ".cfg"
ERROR_MAP_DIR = "error_maps"

PIXEL_MAX = 255.0
DYNAMIC_RANGE = 2.0

DEFAULT_FRAME_SIZE = (32, 32)
DEFAULT_STAGE_CHANNELS = (32, 64)
BENCHMARK_FRAME_SIZE = (192, 192)
BENCHMARK_STAGE_CHANNELS = (64, 128, 128)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Frame-level AUC (%) reported on the public benchmarks; not reproducible here.
REFERENCE_AUC = {
    "ucsd_ped2": 98.3,
    "cuhk_avenue": 90.7,
    "shanghaitech": 79.7,
}


class Split(StrEnum):
    """Dataset splits on disk."""

    TRAIN = "train"
    TEST = "test"


class Direction(StrEnum):
    """Temporal direction of a recurrent pass."""

    FORWARD = "forward"
    """Frames processed in index order."""

    BACKWARD = "backward"
    """Frames processed in reverse index order."""


class AnomalyKind(StrEnum):
    """Anomalies the synthetic generator can inject."""

    SPEED = "speed"
    """The square moves `speed_factor` times faster."""

    EXTRA_OBJECT = "extra_object"
    """A second square appears."""

    DIRECTION = "direction"
    """The velocity is reversed."""


class L1Filter(StrEnum):
    """Filter applied to the absolute-error map of the mixed loss."""

    GAUSSIAN = "gaussian"
    IDENTITY = "identity"


class Pooling(StrEnum):
    """How frames of several videos are pooled into one AUC."""

    PER_VIDEO = "per_video"
    """Normalize every video to [0, 1] first, then pool."""

    RAW = "raw"
    """Pool raw MAE values."""


class Suite(StrEnum):
    """Verification suites run by `vad verify`."""

    GRADIENTS = "gradients"
    REDUCTIONS = "reductions"
    SSIM = "ssim"
    AUC = "auc"
    SCORING = "scoring"


class ExitCode(IntEnum):
    """Process exit codes of the command line interface."""

    OK = 0
    FAILURE = 1
    USAGE = 2
