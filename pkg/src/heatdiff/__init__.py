"""Air-temperature map prediction from surface temperature and land-cover imagery."""

__version__ = "0.1.0"
