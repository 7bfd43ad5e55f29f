"""
Test package for hj_ks
"""
