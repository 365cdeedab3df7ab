"""VO2max estimation from spot-jog sessions: protocol logic, features, models and evaluation."""

__version__ = "0.1.0"
