"""Subject-adaptive k-shot sequence classification."""
