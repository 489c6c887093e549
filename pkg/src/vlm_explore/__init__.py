"""Frontier-based 2D exploration with pluggable decision policies.

The simulator (``grid_map``), frontier extraction (``frontier``), planning
(``planner``), policies (``policy``, ``vlm_client``), the exploration loop
(``explorer``) and privileged evaluation (``evaluator``) are importable on
their own; ``cli`` ties them together.
"""

__version__ = "0.1.0"
