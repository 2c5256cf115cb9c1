"""
Test package for cvep_bci.

This file marks the directory as a Python package.
"""
