import os

DEFAULT_GCSF_LOG_LEVEL = "INFO"
GCSF_LOG_LEVEL = os.environ.get("GCSF_LOG_LEVEL", DEFAULT_GCSF_LOG_LEVEL)

DEFAULT_GCSF_OUT_DIR = "out"
GCSF_OUT_DIR = os.environ.get("GCSF_OUT_DIR", DEFAULT_GCSF_OUT_DIR)

DEFAULT_GCSF_JOBS = 1
GCSF_JOBS = int(os.environ.get("GCSF_JOBS", DEFAULT_GCSF_JOBS))

DEFAULT_GCSF_TOL_SCALE = 1.0
GCSF_TOL_SCALE = float(os.environ.get("GCSF_TOL_SCALE", DEFAULT_GCSF_TOL_SCALE))

DEFAULT_GCSF_SEED = 0
GCSF_SEED = int(os.environ.get("GCSF_SEED", DEFAULT_GCSF_SEED))

# Implicitness weight of the graphical solver (1 = backward Euler)
DEFAULT_GCSF_SOLVER_THETA = 1.0
GCSF_SOLVER_THETA = float(
    os.environ.get("GCSF_SOLVER_THETA", DEFAULT_GCSF_SOLVER_THETA)
)

# Number of steps over which dt grows from dx^2 to its target value
DEFAULT_GCSF_DT_RAMP_STEPS = 50
GCSF_DT_RAMP_STEPS = int(
    os.environ.get("GCSF_DT_RAMP_STEPS", DEFAULT_GCSF_DT_RAMP_STEPS)
)

DEFAULT_GCSF_CALLBACK_MODULE_NAME = None
GCSF_CALLBACK_MODULE_NAME = os.environ.get(
    "GCSF_CALLBACK_MODULE_NAME", DEFAULT_GCSF_CALLBACK_MODULE_NAME
)

DEFAULT_GCSF_PROFILES_MODULE_NAME = None
GCSF_PROFILES_MODULE_NAME = os.environ.get(
    "GCSF_PROFILES_MODULE_NAME", DEFAULT_GCSF_PROFILES_MODULE_NAME
)
