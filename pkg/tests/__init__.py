"""Traffic autocalib tests package."""
