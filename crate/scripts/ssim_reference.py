"""Print scikit-image SSIM values for the patterns used in reference.rs tests."""
import numpy as np
from skimage.metrics import structural_similarity

def pattern(w, h, phase):
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    phase = np.float32(phase)
    return (np.float32(0.5) + np.float32(0.4) * (np.sin(np.float32(0.31) * x + phase) * np.cos(np.float32(0.17) * y - phase))).astype(np.float32)

def noisy(img, amp):
    h, w = img.shape
    y, x = np.mgrid[0:h, 0:w]
    n = ((x * 7919 + y * 104729) % 1000).astype(np.float32) / np.float32(1000) - np.float32(0.5)
    return np.clip(img + np.float32(amp) * n, 0, 1).astype(np.float32)

def ssim_valid(a, b):
    _, full = structural_similarity(a.astype(np.float64), b.astype(np.float64), gaussian_weights=True,
                                    sigma=1.5, use_sample_covariance=True, data_range=1.0, full=True)
    pad = 5
    return full[pad:-pad, pad:-pad].mean()

a = pattern(40, 30, 0.0)
print(repr(ssim_valid(a, noisy(a, 0.2))))
print(repr(ssim_valid(a, pattern(40, 30, 0.7))))
