"""Constants for rotadapt."""

import enum
import json
import math
from logging import Logger, getLogger
from pathlib import Path

LOGGER: Logger = getLogger(__package__)

NAME = "Rotation-Adaptive Point Cloud Domain Generalization"
DOMAIN = "rotadapt"
ISSUE_URL = "https://github.com/Meraxa/rotadapt/issues"

MANIFEST_PATH = Path(__file__).with_name("manifest.json")
TRANSLATIONS_PATH = Path(__file__).with_name("translations") / "en.json"


def _read_version() -> str:
    with MANIFEST_PATH.open(encoding="utf-8") as handle:
        return json.load(handle)["version"]


VERSION = _read_version()

TWO_PI = 2.0 * math.pi

# Training defaults
DEFAULT_EPOCHS = 200
DEFAULT_BATCH_SIZE = 32
DEFAULT_NUM_CLASSES = 4
DEFAULT_SEED = 0
DEFAULT_LR0 = 1e-3
DEFAULT_LR_GAMMA = 10.0
DEFAULT_LR_BETA = 0.75
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_EMA_MOMENTUM = 0.99
DEFAULT_VARIANTS = 5
DEFAULT_REPETITIONS = 10
DEFAULT_REFRESH_PERIOD = 20
DEFAULT_MINING_STEPS = 20
DEFAULT_STEP_SIZE = 0.1
DEFAULT_LAMBDA_OC = 0.01
DEFAULT_LAMBDA_MS = 0.01
DEFAULT_TAU_S = 0.5
DEFAULT_TAU_T = 0.5
DEFAULT_TAU_PRIME = 0.07

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Network widths: shared point MLP 3 -> 64 -> 64 -> 128, head 128 -> 64 -> K
POINT_MLP_WIDTHS = (3, 64, 64, 128)
HEAD_HIDDEN = 64
FEATURE_DIM = POINT_MLP_WIDTHS[-1]
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w5", "b5")

# Synthetic benchmark
DEFAULT_POINTS = 256
DEFAULT_PER_CLASS = 200
MIN_POINTS = 32
MIN_PER_CLASS = 10
TRAIN_FRACTION = 0.8
BASELINE_KEEP_RANGE = (0.8, 1.0)
BASELINE_JITTER_SIGMA = 0.01
BASELINE_JITTER_CLIP = 0.05

# Evaluation protocol: four equidistant angles per axis
SERIES_ANGLES = (math.pi / 2, math.pi, 3 * math.pi / 2, TWO_PI)
SERIES_LENGTH = len(SERIES_ANGLES) ** 3
EVAL_BATCH = 64

# File names and formats
CHECKPOINT_FORMAT_VERSION = 1
STUDENT_FILE = "student.xml"
TEACHER_FILE = "teacher.xml"
FINAL_DIR = "final"
MANIFEST_FILE = "manifest.csv"
TRAIN_LOG_FILE = "train_log.csv"
INTRICATE_SET_FILE = "intricate_set.csv"
METRICS_FILE = "metrics.json"
SERIES_FILE = "series.csv"
ABLATION_FILE = "ablation.csv"
SWEEP_FILE = "sweep.csv"
THEORY_FILE = "theory.json"
ANALYSIS_FILE = "analysis.json"
FLOAT_FORMAT = ".17g"

# CLI exit codes
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class Axis(enum.Enum):
    """Rotation axes."""

    X = "x"
    Y = "y"
    Z = "z"


class OcTarget(enum.Enum):
    """Which view the EMA teacher consumes for the orientation consistency loss."""

    TEACHER_ON_INTRICATE = "teacher_on_intricate"
    TEACHER_ON_ORIGINAL = "teacher_on_original"


class Split(enum.Enum):
    """Dataset split tags."""

    TRAIN = "train"
    TEST = "test"


class ShapeClass(enum.IntEnum):
    """Primitive classes of the synthetic benchmark."""

    CUBOID = 0
    CYLINDER = 1
    CONE = 2
    TORUS = 3


class AblationVariant(enum.Enum):
    """Variants of the component ablation."""

    BASELINE = "baseline"
    IOM = "v1_iom"
    IOM_OC = "v2_iom_oc"
    IOM_MS = "v3_iom_ms"
    RANDOM_OC_MS = "v4_random_oc_ms"
    FULL = "full"
