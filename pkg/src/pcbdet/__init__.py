"""PCBDet-style single-stage detection with its evaluation and benchmarking harness."""

__version__ = "0.1.0"
