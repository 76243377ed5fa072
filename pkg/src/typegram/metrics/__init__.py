"""Metrics subpackage: accuracy, selective prediction, struct and layout scores."""
