import os
import logging
from dotenv import load_dotenv

load_dotenv()

# Project root directory
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Path to generated datasets (relative to project root)
DATA_DIR = os.getenv("CENSALIGN_DATA_DIR", os.path.join(ROOT_DIR, "data"))

# Path to experiment outputs (relative to project root)
RESULTS_DIR = os.getenv("CENSALIGN_RESULTS_DIR", os.path.join(ROOT_DIR, "results"))

# Log directory (relative to project root)
LOG_DIR = os.getenv("CENSALIGN_LOG_DIR", os.path.join(ROOT_DIR, "logs"))

# Test directory (relative to project root)
TEST_DIR = os.path.join(ROOT_DIR, "tests")

# Logging configuration
LOG_LEVEL = os.getenv("CENSALIGN_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Thread pool size for trials / hyperparameter points
MAX_WORKERS = int(os.getenv("CENSALIGN_MAX_WORKERS", "1"))

# Alignment grid: delta_max = 10 as in the synthetic setup, step 0.2 -> 51 points
DEFAULT_DELTA_MAX = 10.0
DEFAULT_DELTA_STEP = 0.2

# Default degree per link family
DEFAULT_DEGREES = {"sigmoid": 1, "identity": 2}

# Synthetic generator defaults
GENERATOR_DEFAULTS = {
    "n_patients": 1000,
    "n_visits": 4,
    "noise_var": 0.25,
    "t_max": 10.0,
    "subtype_prob": 0.5,
}

# Sigmoid benchmark: per subtype, per dimension (intercept, slope) of sigma(a + b t)
SIGMOID_SUBTYPES = (
    ((-4.0, 1.0), (-1.0, 1.0), (-8.0, 8.0)),
    ((-1.0, 1.0), (-8.0, 8.0), (-25.0, 3.5)),
)

# Quadratic suite: ascending coefficients (c0, c1, c2) of f_1 and f_2 per case
QUADRATIC_CASES = {
    1: ((5.0, -2.2, 0.25), (2.0, 0.0, 0.0)),
    2: ((5.0, -2.2, 0.25), (-2.0, 0.0, 0.0)),
    3: ((5.0, -2.2, 0.25), (0.0, 0.4, 0.0)),
    4: ((5.0, -2.2, 0.25), (-5.0, 0.4, 0.0)),
    5: ((3.0, -2.2, 0.25), (-5.0, 2.2, -0.25)),
    6: ((7.0, -2.2, 0.25), (-5.0, 2.2, -0.25)),
}

# Spline misspecification recipe
SPLINE_CONTROL_POINTS = 5
SPLINE_DIM = 3

# Hyperparameter grid searched for SubLign / SubNoLign
HYPERPARAMETER_GRID = {
    "latent_dim": [2, 5, 10],
    "rnn_hidden": [50, 100, 200],
    "mlp_hidden": [50, 100, 200],
    "learning_rate": [0.001, 0.01, 0.1, 1.0],
    "reg_strength": [0.0, 0.1, 1.0],
    "reg_type": ["l1", "l2"],
}

# Presets (single grid points)
PRESETS = {
    "fast": {
        "latent_dim": [5],
        "rnn_hidden": [100],
        "mlp_hidden": [50],
        "learning_rate": [0.01],
        "reg_strength": [0.0],
        "reg_type": ["none"],
    },
    "quadratic": {
        "latent_dim": [5],
        "rnn_hidden": [100],
        "mlp_hidden": [50],
        "learning_rate": [0.01],
        "reg_strength": [0.0],
        "reg_type": ["none"],
    },
    "full": HYPERPARAMETER_GRID,
}

# Training defaults
DEFAULT_EPOCHS = 1000
DEFAULT_KL_WEIGHT = 1.0
LOG_EVERY_EPOCHS = 50

# k-means defaults shared by SubLign inference, identification and the baseline
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 100

# Fixed resampling grid for KMeans+Loss stage-1 features
BASELINE_FEATURE_POINTS = 10


def setup_logging(script_name: str) -> logging.Logger:
    """
    Set up a per-script logger that writes to logs/{script_name}.log and console,

    Args:
        script_name: Name of the script (used for log filename)

    Returns:
        Configured logger instance
    """
    os.makedirs(LOG_DIR, exist_ok=True)
    log_filepath = os.path.join(LOG_DIR, f"{script_name}.log")

    # Configure named logger
    logger: logging.Logger = logging.getLogger(script_name)
    logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))
    logger.propagate = False

    # Remove existing handlers to avoid duplicates
    if logger.handlers:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            try:
                handler.close()
            except Exception:
                pass

    formatter = logging.Formatter(LOG_FORMAT)

    file_handler = logging.FileHandler(
        log_filepath,
        mode="a",
        encoding="utf-8",
    )
    file_handler.setFormatter(formatter)

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.INFO)
    stream_handler.setFormatter(formatter)

    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)

    return logger
