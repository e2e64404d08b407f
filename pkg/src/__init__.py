"""TVP-MAI-SV: estimation, pooling et prévision de modèles autorégressifs à index"""
