"""Parking-garage occupancy, influx and outflux forecasting."""
__version__ = "0.1.0"
