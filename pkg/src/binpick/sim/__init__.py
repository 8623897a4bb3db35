"""Simulated conveyor cell, sensors and the trial runner."""
