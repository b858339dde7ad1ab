"""NTM dialogue model tests."""
