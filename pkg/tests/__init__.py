"""
vcaug Test Suite

This package contains tests for the vcaug augmentation toolkit.
"""
