"""floorpp: reconstruct vector floor plans from building-story point clouds.

Pipeline: point cloud -> point pillars -> corner detection (small conv net
with RoI refinement) -> Manhattan edge proposals -> verified vector plan.
Includes a synthetic scene generator and an evaluation metric suite so the
whole pipeline trains and tests at desk scale.
"""

__version__ = "0.1.0"
