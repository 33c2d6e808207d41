"""Dataset production, training and evaluation."""
