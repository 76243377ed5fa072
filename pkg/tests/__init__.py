"""Test package for typegram.

Contains unit tests per module and end-to-end command-line tests.
"""
