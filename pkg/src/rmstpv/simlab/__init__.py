"""Simulation scenarios, analytic truths and replicate studies."""
