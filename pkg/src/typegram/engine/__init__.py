"""Engine subpackage: evidence scoring and per-variable inference."""
