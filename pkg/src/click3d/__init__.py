"""Interactive 3D point-cloud instance segmentation toolkit.

Library + CLI for click-driven object segmentation on point clouds:
scene I/O, click-channel encoding, simulated annotators, a geodesic
reference segmenter with a pluggable external-backend protocol,
evaluation metrics (NoC, IoU@k, AP), and an HTTP annotation service.
"""

__version__ = "0.1.0"
