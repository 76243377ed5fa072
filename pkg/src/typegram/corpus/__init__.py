"""Corpus subpackage: annotated functions, type and signature libraries."""
