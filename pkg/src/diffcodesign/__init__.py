"""Differentiable co-design of articulated manipulators.

Pipeline: high-level morphology parameters -> cage handles -> deformed
meshes -> simulation parameters -> implicit rigid-body rollout -> task loss,
with analytical gradients through every stage for bound-constrained
co-optimization of morphology and control.
"""

__version__ = "0.1.0"
