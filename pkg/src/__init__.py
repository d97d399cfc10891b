"""Traffic camera calibration and vehicle speed measurement."""
