"""
Underwater debris classifier.
"""
