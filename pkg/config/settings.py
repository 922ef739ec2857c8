"""
Configuration settings for Oscilla
Defaults for every run-config section; a TOML run file overrides them key by key
"""
import os

# Project directories
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUTPUT_DIR = os.path.join(BASE_DIR, 'runs')

# Model
MODEL_LAMBDA = 1.0
MODEL_VARPI = 1.0
MODEL_DIMENSION = 2
MODEL_GEOMETRY_KIND = 'circle'
MODEL_GEOMETRY_DIAMETER = 1.0
MODEL_FIXED_BODY = False  # True: body held fixed, no rigid unknowns

# Mesh
MESH_R_TRUNC = 30.0
MESH_RESOLUTION = 32  # points on the body boundary
MESH_WAKE_ANGLE_DEG = 20.0  # half-angle of the refined wake sector
MESH_GRADING = 1.2  # geometric growth of layer thickness
MESH_OUTFLOW_ANGLE_DEG = 50.0  # half-angle of the do-nothing sector
MIN_CELL_MEASURE_RATIO = 1e-10  # cells below ratio * h0^d are degenerate

# Discretization
QUADRATURE_ORDER = 5
INF_SUP_MAX_PRESSURE_DOFS = 1500  # dense inf-sup estimate above this is skipped

# Steady solver
STEADY_TOL_NEWTON = 1e-10
STEADY_MAX_ITER = 25
STEADY_MIN_STEP = 1e-3  # smallest lambda step before continuation gives up

# Spectral
SPECTRAL_ZETA_MIN = 0.05
SPECTRAL_ZETA_MAX = 2.0
SPECTRAL_N_SHIFTS = 4
SPECTRAL_N_EIGS = 8  # eigenvalues requested per shift
SPECTRAL_RE_STRIP = 1.0  # keep |Re nu| below this
SPECTRAL_RESIDUAL_TOL = 1e-8
SPECTRAL_DENSE_MAX = 1500  # pencil size handled by the dense solver
SPECTRAL_SHIFT_RETRIES = 3
SPECTRAL_KMAX = 5  # non-resonance checked for k = 2..KMAX
SPECTRAL_TOL_SIMPLICITY = 1e-6
SPECTRAL_TOL_RESONANCE = 1e-6
SPECTRAL_CROSSING_TOL = 1e-8
SPECTRAL_AXIS_TOL = 1e-6  # |Re nu| accepted as purely imaginary by the guard

# Periodic modes
MODES_KMAX = 8
MODES_VARPI_GRID = (1e-3, 1.0, 13)  # logspace bounds and count
MODES_RESONANCE_K = 2

# Hopf branch
BRANCH_KMAX = 4  # harmonics retained by harmonic balance
BRANCH_EPSILON_MAX = 0.1
BRANCH_POINTS = 9
BRANCH_TOL = 1e-9
BRANCH_MAX_ITER = 20
BRANCH_MU_MODE = 'linear'  # 'linear' uses mu*u0', 'resolve' re-solves the steady state
BRANCH_NOISE_FLOOR = 1e-9  # |mu_1| below this is classified degenerate

# Time stepping
SIMULATE_T_FINAL = 50.0
SIMULATE_DT = 0.05
SIMULATE_EPSILON = 1e-3
SIMULATE_STRIDE = 0  # 0 disables field snapshots
SIMULATE_BLOWUP = 1e6
SIMULATE_CFL_MAX = 1.0  # bound on lambda*dt*max|w|/h_min for the explicit convection
SIMULATE_WINDOW = 0.25  # trailing fraction of the record used for amplitudes

# Run
RUN_SEED = 12345
RUN_JOBS = 1
JOBS_ENV_VAR = 'OSCILLA_JOBS'
SCHEMA_VERSION = 1
