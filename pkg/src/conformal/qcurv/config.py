from importlib import resources

from . import data_files

# Radial grid defaults
DEFAULT_GRID_SIZE = 2048
DEFAULT_R_MAX = 100.0
DEFAULT_GRADING = 2.0
MIN_GRID_SIZE = 64
MIN_SOLVE_R_MAX = 20.0  # only enforced when a solve is configured
VERIFY_FAST_GRID_SIZE = 512

# Ring-kernel theta quadrature: geometric Gauss-Legendre panels graded toward theta = 0
THETA_PANELS = 24
THETA_PANEL_ORDER = 8
THETA_MIN_SCALE = 1e-8
# Refinement of the two cells touching the kernel diagonal
DIAGONAL_SUBDIVISION = 4
ASSEMBLY_PAIR_CHUNK = 8192  # (r, s) pairs per vectorized kernel evaluation

# Fixed-point operator
AV_THRESHOLD_RADIUS = 10.0
BLOWUP_CORE_RADIUS = 0.125
THM2_TAIL_RELATIVE_LIMIT = 1e-6
THM2_ADMISSIBILITY_RATES = (1.0, 2.0, 4.0)
THM1_LOG_SUP_LIMIT = 700.0  # e^{700} is still a finite double

# Solver defaults
DEFAULT_DAMPING = 0.3
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
DEFAULT_CONTINUATION_STEPS = 8
DEFAULT_CONTINUATION_RATIO = 8.0  # first stage targets kappa / 8
DEFAULT_BLOWUP_SUP = 50.0
DEFAULT_T = 1.0
DAMPING_FLOOR = 0.05
DAMPING_PATIENCE = 5
DEFAULT_STAGE_RETRIES = 2

# Invariant suite tolerances
NORMALIZATION_TOL = 1e-10
RESIDUAL_TOL = 1e-6
AV_TOL = 1e-8
SLOPE_RELATIVE_TOL = 0.02
POHOZAEV_TOL = 5e-2
LAPLACIAN_SLACK = 1e-4
ORDERING_SLACK = 1e-6
XI_MONOTONE_SLACK = 1e-8
ASYMPTOTIC_WINDOW = (0.25, 0.5)
ASYMPTOTIC_MIN_NODES = 8

# Kernel cache file
KERNEL_CACHE_MAGIC = b"QCURVKRN"

# Report schema
REPORT_SCHEMA_VERSION = "1.0"
REPORT_SCHEMA_PATH = str(resources.files(data_files).joinpath("report_schema.json"))

# Example run configurations
THM1_EXAMPLE_CONFIG_PATH = str(resources.files(data_files).joinpath("configs/thm1_constant.toml"))
THM2_EXAMPLE_CONFIG_PATH = str(resources.files(data_files).joinpath("configs/thm2_quartic.toml"))
PROBE_EXAMPLE_CONFIG_PATH = str(resources.files(data_files).joinpath("configs/probe_gaussian.toml"))
