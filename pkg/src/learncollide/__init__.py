"""Learned collision detection for multi-arm robot workspaces.

Two learners are provided over the same forward-kinematics feature space:
an implicit neural representation (``deepcollide``) and a kernel perceptron
baseline (``fastron``). The ``geometry`` module supplies an exact analytic
ground truth for capsule robots among sphere and box obstacles.
"""

__version__ = "0.1.0"
