"""
Tests pour tvp-mai-sv
"""
