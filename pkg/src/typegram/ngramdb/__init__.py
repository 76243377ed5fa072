"""Ngramdb subpackage: database build, merge, storage and statistics."""
