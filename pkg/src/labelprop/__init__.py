"""Sequence-based LiDAR semantic segmentation by geometric label propagation."""
