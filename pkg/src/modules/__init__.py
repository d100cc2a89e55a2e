"""
Data preparation, model and training modules.
"""
