"""gapflow: differentiable quadrotor simulation and BPTT policy training for
vision-based SE(3) gap traversal."""

__version__ = "0.1.0"
