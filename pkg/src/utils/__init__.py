"""
Logging, errors, validation and metrics helpers.
"""
