"""Two-lane ring-road simulator with a single lane-switching AV."""
__version__ = "0.1.0"
