"""Hidden-service directory analysis: ring math, consensus-history tracking
detection, directory simulation and popularity resolution."""

__version__ = "0.1.0"
