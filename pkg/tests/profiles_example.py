import numpy as np


def gaussian(height=1.0, width=0.25, center=0.0):
    """Gaussian bump, effectively compactly supported on padded grids"""
    return lambda x: height * np.exp(-(((np.asarray(x) - center) / width) ** 2))


def two_hats(height=1.0, half_width=0.25, separation=1.0):
    """Two disjoint hats centered at +-separation/2"""

    def fn(x):
        x = np.asarray(x, dtype=float)
        left = np.clip(1.0 - np.abs(x + separation / 2.0) / half_width, 0.0, None)
        right = np.clip(1.0 - np.abs(x - separation / 2.0) / half_width, 0.0, None)
        return height * (left + right)

    return fn
