"""Active IR stereo depth-camera simulator with depth and pose evaluation tools."""

import os

# TBB shipped with this numba build is too old and only triggers a warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
