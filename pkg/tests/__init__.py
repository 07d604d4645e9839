"""Test package for the adaptive regularization toolkit."""
