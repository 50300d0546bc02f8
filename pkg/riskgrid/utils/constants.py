"""
Configuration constants for riskgrid
- Grid, weights and inference defaults
- Model defaults and numeric tolerances
- Report file names
"""

# Grid
DEFAULT_CELL_SIZE = 1000.0
DEFAULT_NN_K = 8
FEATURE_PREFIXES = ('agg', 'NN', 'ed', 'soc')
LONLAT_MAX_X = 360.0
LONLAT_MAX_Y = 90.0

# Spatial weights
DEFAULT_K_NEIGHBORS = 8
WEIGHTS_STYLE = 'row-standardized'

# Moran's I
DEFAULT_N_SIMS = 999
MIN_N_SIMS = 99
DEFAULT_ALPHA = 0.05
ALTERNATIVES = ('greater', 'less', 'two-sided')
LOCAL_P_METHODS = ('analytical', 'permutation')
BONFERRONI_METHODS = ('n', 'neighbors')

HIGH_HIGH = 'HighHigh'
LOW_LOW = 'LowLow'
HIGH_LOW = 'HighLow'
LOW_HIGH = 'LowHigh'
NOT_SIGNIFICANT = 'NotSignificant'
CLUSTER_LABELS = (HIGH_HIGH, LOW_LOW, HIGH_LOW, LOW_HIGH, NOT_SIGNIFICANT)

# Poisson GLM
IRLS_TOL = 1e-10
IRLS_MAX_ITER = 50
IRLS_MAX_HALVINGS = 10
SCORE_TOL = 1e-8

# Random forest
DEFAULT_N_TREES = 500
DEFAULT_MIN_NODE = 5

# Spatial econometrics
PARAM_BOX_EPS = 1e-6
OPTIMIZER_XTOL = 1e-8
MANSKI_GRID_STEP = 0.05
HESSIAN_REL_STEP = 1e-5
WEAK_ID_CONDITION = 1e8
BOUNDARY_TOL = 1e-5

# Evaluation
DEFAULT_CV_FOLDS = 5
DEFAULT_TOP_K = 10
MIN_RATE = 1e-10
MIN_PVALUE = 1e-300
CV_SCHEMES = ('random', 'blocked')

MODEL_KEYS = ('poisson', 'forest', 'sdem', 'manski')
CROSS_VALIDATED_MODELS = ('poisson', 'forest')
SPATIAL_MODELS = ('sdem', 'manski')

# Synthetic generator
MAX_REJECTIONS = 1_000_000
SYNTHETIC_MODES = ('uniform', 'clustered')

# Report files
FEATURE_MATRIX_FILE = 'feature_matrix.csv'
WEIGHTS_FILE = 'weights.csv'
WEIGHTS_SIDECAR_FILE = 'weights.json'
MORAN_FILE = 'moran_global.json'
CLUSTERS_GEOJSON_FILE = 'clusters.geojson'
CLUSTERS_CSV_FILE = 'clusters.csv'
PREDICTIONS_FILE = 'predictions.csv'
TABLE1_FILE = 'table1_accuracy.csv'
TABLE1_EPOCH_FILE = 'table1_accuracy_next_epoch.csv'
TABLE2_FILE = 'table2_goodness_of_fit.csv'
TABLE4_FILE = 'table4_top_features.csv'
IMPORTANCE_FILE = 'importance_forest.csv'
FOREST_DUMP_FILE = 'forest_tree0.txt'
RUN_SUMMARY_FILE = 'run_summary.json'
MANIFEST_FILE = 'manifest.json'
MAPS_DIR = 'maps'

# Exit codes
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERIC_ERROR = 2
