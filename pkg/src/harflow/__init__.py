"""Latency-driven design space exploration for streaming 3D-CNN FPGA accelerators."""

__version__ = "0.1.0"
