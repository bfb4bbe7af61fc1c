"""Motion-deblurring dynamic radiance fields from blurry monocular video.

Pipeline pieces: synthetic blurry-video generation, two-stage training
(base-ray initialization, then motion-decomposed deblurring), sharp
novel-view rendering, and image-quality evaluation. Everything runs on
NumPy float64 with an in-package reverse-mode autodiff.
"""

__version__ = "0.1.0"

__all__ = ["MoBluRF", "__version__"]


def __getattr__(name):
    # estimator pulls in the heavy modules; keep base import light
    if name == "MoBluRF":
        from .estimator import MoBluRF
        return MoBluRF
    raise AttributeError(name)
