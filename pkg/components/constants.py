# components/constants.py

# --- Model defaults (rough Bergomi, flat forward variance) ---
DEFAULT_HURST = 0.07
DEFAULT_ETA = 1.9
DEFAULT_RHO = -0.9
DEFAULT_XI = 0.09
DEFAULT_RATE = 0.05
DEFAULT_SPOT = 100.0
DEFAULT_MATURITY = 1.0
DEFAULT_STEPS = 20
DEFAULT_STRIKES = (90.0, 100.0, 110.0, 120.0)

# --- Training defaults ---
DEFAULT_BATCH_SIZE = 10000
DEFAULT_CHECK_INTERVAL = 50
DEFAULT_MAX_ITERATIONS = 3000
DEFAULT_MIN_ITERATIONS = 200
DEFAULT_TOLERANCE = 1e-3
DEFAULT_RUNS = 20
DEFAULT_LEARNING_RATE = 5e-3
DEFAULT_SEED = 2024
DEFAULT_PENALTIES = (40.0, 10000.0)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# --- Path simulation ---
# Samples are drawn in blocks of this size, one RNG stream per block.
PATH_BLOCK_SIZE = 4096
QUADRATURE_NODES = 256
CHOLESKY_JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)

# --- Reference pricers ---
DEFAULT_CRR_STEPS = 2000
DEFAULT_MC_SAMPLES = 200000

# --- Path study ---
PATH_STUDY_TIME = 0.5
PATH_STUDY_TRAJECTORIES = 10000
PATH_STUDY_SHOWN = 4

# --- Reports ---
FLOAT_FORMAT = "%.6g"
OUTPUT_DIR_ENV = "ROUGHBSDE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"
SUMMARY_FILE = "summary.csv"
RUNS_FILE = "runs.csv"
LOSS_FILE = "losses.csv"
CONVERGENCE_FILE = "convergence.csv"
PATH_STUDY_FILE = "path_study.csv"
PATH_STUDY_SUMMARY_FILE = "path_study_summary.csv"
VALIDATION_FILE = "validation.csv"
ORDERING_FILE = "ordering.csv"
PDF_FILE = "report.pdf"
CHECKPOINT_FILE = "networks.csv"

# --- Exit codes ---
EXIT_OK = 0
EXIT_NUMERICAL_FAILURE = 1
EXIT_CONFIG_ERROR = 2

# --- Messages ---
CONFIG_ERROR_MESSAGE = (
    "The experiment config is invalid. Fix the fields listed below and re-run."
)
DIVERGENCE_MESSAGE = (
    "Training diverged (non-finite loss). "
    "Lower the learning rate or check the model parameters."
)
ILL_CONDITIONED_MESSAGE = (
    "Cholesky factorization failed even with the largest jitter. "
    "The grid/Hurst combination gives an ill-conditioned covariance."
)
ARBITRAGE_MESSAGE = (
    "Risk-neutral probability of the binomial tree is outside (0, 1). "
    "Increase the number of steps or check rate and volatility."
)
INVARIANT_FAILED_MESSAGE = "One or more invariant checks failed; see the report for details."
PATH_STUDY_GRID_MESSAGE = (
    "The path-study time is not a grid point. Choose N and T so that t=0.5 lies on the grid."
)
