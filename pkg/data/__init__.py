"""Data access and analytics modules."""
