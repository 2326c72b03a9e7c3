"""
Sonarscale Backend
------------------
Dissimilarity-driven topographic projection of multibeam sonar data:
simulation, subspace noise filtering, RBF projection networks trained on
STRESS, spectral beam clustering, a staged CLI and a projection API.
"""

__version__ = "0.1.0"
