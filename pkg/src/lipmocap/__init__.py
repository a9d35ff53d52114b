"""LiDAR-aided inertial human motion capture.

Synthetic LiDAR/IMU generation, input preprocessing, a small reverse-mode
autodiff engine, the staged pose and translation networks, and evaluation.
"""
__version__ = "0.1.0"
