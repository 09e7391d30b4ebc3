"""Coherent direct multipath SLAM for distributed antenna arrays."""

from cohslam.estimator import SlamEstimator, check_observations, check_scenario

__version__ = "0.1.0"
__all__ = ["SlamEstimator", "check_observations", "check_scenario"]
