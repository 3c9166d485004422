from pathlib import Path

KIND_SOLVE = "solve"
KIND_LOCAL_GCSF = "local-gcsf"
KIND_HARNACK = "harnack"
KIND_DELAYED = "delayed"
KIND_LP = "lp"
KIND_SHARPNESS = "sharpness"
KIND_SEPARATION = "separation"
KIND_MEASURE_FLOW = "measure-flow"
KIND_INTERSECTIONS = "intersections"
KIND_VALIDATE_EXACT = "validate-exact"

EXPERIMENT_KINDS = (
    KIND_SOLVE,
    KIND_LOCAL_GCSF,
    KIND_HARNACK,
    KIND_DELAYED,
    KIND_LP,
    KIND_SHARPNESS,
    KIND_SEPARATION,
    KIND_MEASURE_FLOW,
    KIND_INTERSECTIONS,
    KIND_VALIDATE_EXACT,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2

SUMMARY_FILE_NAME = "summary.json"

CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"

# One built-in config per acceptance criterion, in criterion order
BUILTIN_EXPERIMENTS = {
    "oracle-convergence": "Grim Reaper data with oracle boundary values, "
    "spatial order >= 1.8 and L-inf error <= 1e-4 at n = 801",
    "circle-extinction": "Polyline circle r0 = 1 reaches radius 0.5 at t = 0.375",
    "harnack-fleet": "H + pi t >= -tol for local flows from 0, 1 - x^2, hat, spike",
    "harnack-parabola": "Right-edge H(1, 0.2) = 4/3 - 0.2 pi within 2%",
    "l1-growth": "Full area of local flows equals A_bar + pi t within 2%",
    "delayed-spike-family": "Unit-mass spikes obey the delayed height bound",
    "sharpness-trend": "Spike heights at t = 0.1 increase with n, stable at 2/pi",
    "global-height": "sup u(t) <= sqrt(t) sqrt(2A / (t - t*)) after t*",
    "mass-drift-separation": "Test-function drift <= C(phi) (t - s) and the "
    "Grim Reaper pair separates at a rate in [1.9 pi, 2 pi]",
    "measure-pipeline": "Cantor-measure flow: Cauchy halving, weak gap, "
    "domination and U growth",
    "initial-trace": "Initial traces of flows from known measures match the data",
    "intersection-monotonicity": "Intersection counts never increase, "
    "disjoint curves stay apart",
    "truncation-level": "Truncation level of the hat at t = 0.25 is 0.5",
}
