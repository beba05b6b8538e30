"""Test suite for the CP-Net pipeline."""
