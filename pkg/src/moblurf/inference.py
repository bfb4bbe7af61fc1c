"""Sharp novel-view rendering from a trained model.

Inference casts one ray per pixel, samples deterministic segment midpoints,
and composites the probabilistic full color. No blur averaging happens
here; the blur model exists only to explain the training data.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .cameras import CameraPose, rays_for_frame
from .fields import SceneModel
from .render import motion_mask, render_rays


def infer_frame(model: SceneModel, pose: CameraPose, t: int, height: int,
                width: int, near: float, far: float, n_samples: int,
                chunk: int = 4096) -> dict:
    """Render one sharp frame at a trained time index.

    Returns rgb (H,W,3) in [0,1], dynamicness map, predicted motion mask,
    and the expected dynamic ray distance map.
    """
    if not 0 <= t < model.config.n_frames:
        raise IndexError(f"time index {t} outside trained range "
                         f"[0, {model.config.n_frames})")
    rays = rays_for_frame(pose, height, width, near, far, t_index=t)
    rgb = np.empty((height * width, 3))
    p_dy = np.empty(height * width)
    kappa = np.empty(height * width)
    model.store.begin_step()
    for start in range(0, len(rays), chunk):
        stop = min(start + chunk, len(rays))
        part = _slice_rays(rays, start, stop)
        res = render_rays(model, part, n_samples, rng=None)
        rgb[start:stop] = ad.value_of(res.color_full)
        p_dy[start:stop] = res.p_dy
        kappa[start:stop] = ad.value_of(res.kappa_star)
    return {
        "rgb": rgb.reshape(height, width, 3),
        "p_dy": p_dy.reshape(height, width),
        "mask": motion_mask(p_dy).reshape(height, width),
        "kappa": kappa.reshape(height, width),
    }


def infer_frame_base_rays(model: SceneModel, pose: CameraPose, t: int,
                          height: int, width: int, near: float, far: float,
                          n_samples: int, chunk: int = 4096) -> dict:
    """Render along the trained base rays: input rays warped by the frozen
    per-frame screw. This is what training optimized the fields against."""
    from . import se3
    if not 0 <= t < model.config.n_frames:
        raise IndexError(f"time index {t} outside trained range "
                         f"[0, {model.config.n_frames})")
    rays = rays_for_frame(pose, height, width, near, far, t_index=t)
    screw = model.store.values["screw.base"][rays.t]
    o, d, pix = se3.warp_ray(rays.origins, rays.dirs, screw[:, :3], screw[:, 3:],
                             rays.pix_dirs)
    rays.origins, rays.dirs, rays.pix_dirs = o, d, pix
    rgb = np.empty((height * width, 3))
    p_dy = np.empty(height * width)
    kappa = np.empty(height * width)
    model.store.begin_step()
    for start in range(0, len(rays), chunk):
        stop = min(start + chunk, len(rays))
        res = render_rays(model, _slice_rays(rays, start, stop), n_samples, rng=None)
        rgb[start:stop] = ad.value_of(res.color_full)
        p_dy[start:stop] = res.p_dy
        kappa[start:stop] = ad.value_of(res.kappa_star)
    return {
        "rgb": rgb.reshape(height, width, 3),
        "p_dy": p_dy.reshape(height, width),
        "mask": motion_mask(p_dy).reshape(height, width),
        "kappa": kappa.reshape(height, width),
    }


def _slice_rays(rays, start, stop):
    from .cameras import RayBatch
    return RayBatch(
        origins=ad.value_of(rays.origins)[start:stop],
        dirs=ad.value_of(rays.dirs)[start:stop],
        pix_dirs=ad.value_of(rays.pix_dirs)[start:stop],
        t=rays.t[start:stop],
        uv=rays.uv[start:stop],
        near=rays.near,
        far=rays.far,
    )
