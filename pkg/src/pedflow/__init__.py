"""pedflow: multi-scale pedestrian flow modeling.

Camera calibration, route-graph scenarios, feature extraction, a
from-scratch recurrent predictor with analytic gradients, closed-loop
crowd simulation and trajectory post-processing, glued together by the
``pedflow`` command line tool.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
