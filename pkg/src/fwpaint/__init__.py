"""Fast weight painters: images as sums of learning-rule rank-1 updates."""
