"""
Configuration module for the vortex bubble lab.
Loads environment variables from .env file.
"""
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Output locations
OUTPUT_DIR = os.environ.get('VORTEXLAB_OUTPUT_DIR', 'output')
LOG_FILE = os.environ.get('VORTEXLAB_LOG_FILE', 'vortexlab.log')
LOG_LEVEL = os.environ.get('VORTEXLAB_LOG_LEVEL', 'INFO').upper()

# Parallelism (joblib worker count)
THREADS = int(os.environ.get('VORTEXLAB_THREADS', os.cpu_count() or 1))

# Spectral grid
L_MAX = int(os.environ.get('VORTEXLAB_L_MAX', 32))
L_MAX_MIN = 4

# Kazdan-Warner Newton solver
KW_TOL = float(os.environ.get('VORTEXLAB_KW_TOL', 1e-10))
KW_MAX_ITER = int(os.environ.get('VORTEXLAB_KW_MAX_ITER', 60))
KW_FLOOR = 1e-8  # clip for -log(-h) initial guesses
DEGREE_TOL = float(os.environ.get('VORTEXLAB_DEGREE_TOL', 1e-4))

# Bubble analysis
B0 = 1.0  # minimum bubble energy under E = deg
C0 = float(os.environ.get('VORTEXLAB_C0', 0.25))
EPS0 = float(os.environ.get('VORTEXLAB_EPS0', 0.25))
M_LEVELS = int(os.environ.get('VORTEXLAB_M_LEVELS', 3))
EPS0_RENORM = float(os.environ.get('VORTEXLAB_EPS0_RENORM', 1.0))

# Scenario schema version understood by this build
SCHEMA_VERSION = 1
