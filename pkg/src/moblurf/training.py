"""Two-stage optimization.

Stage 1 initializes base rays by interleaving: even iterations warp the
input rays through the per-frame screw table and fit the static field
(masked photometric), updating static weights and the screw table together;
odd iterations train both radiance fields on all loss terms while the screw
table stays frozen. Stage 2 freezes base screws for good and trains the
blur model: latent bundles, their local refinement, and both fields against
the blurry targets.

Freeze contracts are enforced by Adam skipping frozen groups; with
``debug_freeze_check`` on, checksum comparisons verify them every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import se3
from .blur import blurry_render
from .cameras import RayBatch, rays_for_pixels
from .config import TrainConfig
from .data import BlurryDataset
from .fields import SceneModel, save_checkpoint, load_checkpoint
from .optim import LrSchedule, ParamStore, adam_step
from .render import motion_mask, render_kappa, render_rays

ALL_GROUPS = {"static", "dynamic", "local", "screw_base", "screw_global"}
FREEZE_BRI_EVEN = ALL_GROUPS - {"static", "screw_base"}
FREEZE_BRI_ODD = ALL_GROUPS - {"static", "dynamic"}
FREEZE_MDD = {"screw_base"}


class NumericalError(RuntimeError):
    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class FreezeViolation(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    photo_dynamic: float = 0.0
    photo_full: float = 0.0
    mphoto_static: float = 0.0
    sm: float = 0.0
    lg: float = 0.0

    @property
    def total(self) -> float:
        return (self.photo_dynamic + self.photo_full + self.mphoto_static
                + self.sm + self.lg)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("photo_dynamic", "photo_full", "mphoto_static", "sm", "lg")}
        d["total"] = self.total
        return d


@dataclass
class Batch:
    rays: RayBatch          # input rays from corrupted poses, detached
    targets: np.ndarray     # (B,3) blurry colors
    lg_count: int           # first lg_count rows carry geometry supervision
    neighbors: RayBatch | None   # (2K,) right then down neighbor rays
    pdepth: np.ndarray | None    # (3,K) pseudo-depth at p, p+du, p+dv


class Trainer:
    def __init__(self, config: TrainConfig, dataset: BlurryDataset,
                 model: SceneModel | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.dataset = dataset
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        if model is None:
            model = SceneModel(config.field_config(dataset.n_frames), self.rng)
        if model.config.n_frames != dataset.n_frames:
            raise ValueError(
                f"model built for {model.config.n_frames} frames, dataset has "
                f"{dataset.n_frames}")
        self.model = model
        self.bri_sched_screw = LrSchedule(config.screw_lr_start, config.screw_lr_end,
                                          config.bri_iters)
        self.bri_sched_mlp = LrSchedule(config.mlp_lr_start, config.mlp_lr_end,
                                        config.bri_iters)
        self.mdd_sched_screw = LrSchedule(config.screw_lr_start, config.screw_lr_end,
                                          config.mdd_iters)
        self.mdd_sched_mlp = LrSchedule(config.mlp_lr_start, config.mlp_lr_end,
                                        config.mdd_iters)
        h, w = dataset.shape
        self._h, self._w = h, w
        self.history: list[dict] = []

    # batching ---------------------------------------------------------------

    def sample_batch(self, lg_fraction: float | None = None) -> Batch:
        cfg = self.config
        b = cfg.batch_size
        frac = cfg.lg_fraction if lg_fraction is None else lg_fraction
        k = int(round(b * frac))
        h, w = self._h, self._w
        n = self.dataset.n_frames
        t = self.rng.integers(0, n, size=b)
        u = np.empty(b, dtype=np.int64)
        v = np.empty(b, dtype=np.int64)
        u[:k] = self.rng.integers(0, w - 1, size=k)
        v[:k] = self.rng.integers(0, h - 1, size=k)
        u[k:] = self.rng.integers(0, w, size=b - k)
        v[k:] = self.rng.integers(0, h, size=b - k)
        rays = self._input_rays(t, u, v)
        targets = self.dataset.blur[t, v, u]
        neighbors = None
        pdepth = None
        if k:
            t3 = np.concatenate([t[:k], t[:k]])
            u3 = np.concatenate([u[:k] + 1, u[:k]])
            v3 = np.concatenate([v[:k], v[:k] + 1])
            neighbors = self._input_rays(t3, u3, v3)
            pd = self.dataset.pseudo_depth
            pdepth = np.stack([pd[t[:k], v[:k], u[:k]],
                               pd[t[:k], v[:k], u[:k] + 1],
                               pd[t[:k], v[:k] + 1, u[:k]]])
        return Batch(rays=rays, targets=targets, lg_count=k,
                     neighbors=neighbors, pdepth=pdepth)

    def _input_rays(self, t, u, v) -> RayBatch:
        ds = self.dataset
        b = len(t)
        origins = np.empty((b, 3))
        dirs = np.empty((b, 3))
        pix = np.empty((b, 3))
        uv = np.stack([u, v], axis=1)
        for ti in np.unique(t):
            rows = np.where(t == ti)[0]
            o, d, p = rays_for_pixels(ds.poses_corrupt[ti], uv[rows])
            origins[rows], dirs[rows], pix[rows] = o, d, p
        return RayBatch(origins, dirs, pix, t.astype(np.int64), uv,
                        ds.near, ds.far)

    # ray warping ------------------------------------------------------------

    def warp_base(self, rays: RayBatch, in_graph: bool) -> RayBatch:
        """Base rays = input rays warped by the per-frame screw table."""
        if in_graph:
            omega, v = self.model.base_screws(rays.t)
        else:
            table = self.model.store.values["screw.base"][rays.t]
            omega, v = table[:, :3], table[:, 3:]
        o, d, pix = se3.warp_ray(rays.origins, rays.dirs, omega, v, rays.pix_dirs)
        return RayBatch(o, d, pix, rays.t, rays.uv, rays.near, rays.far)

    # loss helpers -----------------------------------------------------------

    def _lg_terms(self, batch: Batch, kappa_primary, supervise: np.ndarray,
                  base_rays: RayBatch, rng):
        """Local geometry loss over the supervised subset of lg pixels."""
        cfg = self.config
        k = batch.lg_count
        if k == 0 or not supervise.any():
            return None
        nb = self.warp_base(batch.neighbors, in_graph=False)
        kappa_n = render_kappa(self.model, nb, cfg.n_samples, rng)
        o0 = ad.narrow(base_rays.origins, 0, k, axis=0)
        d0 = ad.narrow(base_rays.dirs, 0, k, axis=0)
        p0 = ad.narrow(base_rays.pix_dirs, 0, k, axis=0)
        ou, du_, pu = (ad.narrow(nb.origins, 0, k, axis=0),
                       ad.narrow(nb.dirs, 0, k, axis=0),
                       ad.narrow(nb.pix_dirs, 0, k, axis=0))
        ov, dv_, pv = (ad.narrow(nb.origins, k, k, axis=0),
                       ad.narrow(nb.dirs, k, k, axis=0),
                       ad.narrow(nb.pix_dirs, k, k, axis=0))
        kap0 = ad.narrow(kappa_primary, 0, k, axis=0)
        kapu = ad.narrow(kappa_n, 0, k, axis=0)
        kapv = ad.narrow(kappa_n, k, k, axis=0)
        # predicted side: metric ray distances along unit directions
        x0 = L.surface_points(o0, d0, kap0)
        xu = L.surface_points(ou, du_, kapu)
        xv = L.surface_points(ov, dv_, kapv)
        cr_pred, ok_pred = L.local_geometry_cross(x0, xu, xv)
        # pseudo-GT side: camera-z depths along unit-camera-z directions
        pd = batch.pdepth
        y0 = L.surface_points(ad.value_of(o0), ad.value_of(p0), pd[0])
        yu = L.surface_points(ad.value_of(ou), ad.value_of(pu), pd[1])
        yv = L.surface_points(ad.value_of(ov), ad.value_of(pv), pd[2])
        cr_true, ok_true = L.local_geometry_cross(y0, yu, yv)
        keep = np.asarray(supervise, dtype=bool)
        ok_pred = ok_pred & keep
        return L.lg_loss(cr_pred, ok_pred, cr_true, ok_true, n_pixels=k,
                         lam=self.config.lambda_lg)

    def _check_losses(self, breakdown: LossBreakdown, iteration: int, stage: str):
        if not np.isfinite(breakdown.total):
            raise NumericalError(
                f"non-finite loss at {stage} iteration {iteration}",
                breakdown.as_dict())

    # steps --------------------------------------------------------------------

    def compute_bri_even_loss(self, batch: Batch, rng):
        """Warp rays in-graph, fit the static field on unmasked pixels."""
        base = self.warp_base(batch.rays, in_graph=True)
        res = render_rays(self.model, base, self.config.n_samples, rng)
        mask = motion_mask(res.p_dy)
        loss = L.masked_photometric(res.color_static, batch.targets, mask)
        breakdown = LossBreakdown(mphoto_static=float(ad.value_of(loss)))
        return loss, breakdown

    def compute_bri_odd_loss(self, batch: Batch, rng):
        """All loss terms on sharp renders; base screws held fixed."""
        cfg = self.config
        base = self.warp_base(batch.rays, in_graph=False)
        res = render_rays(self.model, base, cfg.n_samples, rng)
        mask = motion_mask(res.p_dy)
        mphoto = L.masked_photometric(res.color_static, batch.targets, mask)
        photo_d = L.photometric(res.color_dynamic, batch.targets)
        photo_f = L.photometric(res.color_full, batch.targets)
        sm = L.staticness_max(res.p_st_samples, cfg.lambda_sm)
        loss = ad.add(ad.add(ad.add(mphoto, photo_d), photo_f), sm)
        breakdown = LossBreakdown(
            photo_dynamic=float(ad.value_of(photo_d)),
            photo_full=float(ad.value_of(photo_f)),
            mphoto_static=float(ad.value_of(mphoto)),
            sm=float(ad.value_of(sm)))
        lg = self._lg_terms(batch, res.kappa_star,
                            np.ones(batch.lg_count, dtype=bool), base, rng)
        if lg is not None:
            loss = ad.add(loss, lg)
            breakdown.lg = float(ad.value_of(lg))
        return loss, breakdown

    def compute_mdd_loss(self, batch: Batch, rng, mask_override=None):
        """Blur-model training loss on latent bundles; base screws frozen."""
        cfg = self.config
        base = self.warp_base(batch.rays, in_graph=False)
        blur = blurry_render(self.model, base, cfg.n_samples, rng,
                             mask_override=mask_override)
        b = len(batch.rays)
        mphoto = ad.div(L.photometric_sum(blur.blurry_static["s"],
                                          batch.targets[blur.static_idx]), float(b))
        photo_d = ad.div(ad.add(
            L.photometric_sum(blur.blurry_static["d"], batch.targets[blur.static_idx]),
            L.photometric_sum(blur.blurry_dynamic["d"], batch.targets[blur.dynamic_idx])),
            float(b))
        photo_f = ad.div(ad.add(
            L.photometric_sum(blur.blurry_static["full"], batch.targets[blur.static_idx]),
            L.photometric_sum(blur.blurry_dynamic["full"], batch.targets[blur.dynamic_idx])),
            float(b))
        p_st_all = [ad.reshape(blur.base.p_st_samples, (-1,))]
        p_st_all += [ad.reshape(p, (-1,)) for p in blur.latent_p_st]
        sm = L.staticness_max(ad.concat(p_st_all, axis=0), cfg.lambda_sm)
        loss = ad.add(ad.add(ad.add(mphoto, photo_d), photo_f), sm)
        breakdown = LossBreakdown(
            photo_dynamic=float(ad.value_of(photo_d)),
            photo_full=float(ad.value_of(photo_f)),
            mphoto_static=float(ad.value_of(mphoto)),
            sm=float(ad.value_of(sm)))
        supervise = blur.mask[:batch.lg_count].astype(bool) \
            if cfg.lg_dynamic_only_mdd else np.ones(batch.lg_count, dtype=bool)
        lg = self._lg_terms(batch, blur.base.kappa_star, supervise, base, rng)
        if lg is not None:
            loss = ad.add(loss, lg)
            breakdown.lg = float(ad.value_of(lg))
        return loss, breakdown

    def bri_step(self, iteration: int, batch: Batch | None = None) -> LossBreakdown:
        store = self.model.store
        store.begin_step()
        if batch is None:
            batch = self.sample_batch()
        if iteration % 2 == 0:
            store.set_frozen_groups(FREEZE_BRI_EVEN)
            loss, breakdown = self.compute_bri_even_loss(batch, self.rng)
        else:
            store.set_frozen_groups(FREEZE_BRI_ODD)
            loss, breakdown = self.compute_bri_odd_loss(batch, self.rng)
        self._check_losses(breakdown, iteration, "bri")
        self._optimize(loss, self.bri_sched_screw.rate_at(iteration),
                       self.bri_sched_mlp.rate_at(iteration))
        return breakdown

    def mdd_step(self, iteration: int, batch: Batch | None = None) -> LossBreakdown:
        store = self.model.store
        store.begin_step()
        store.set_frozen_groups(FREEZE_MDD)
        if batch is None:
            batch = self.sample_batch()
        loss, breakdown = self.compute_mdd_loss(batch, self.rng)
        self._check_losses(breakdown, iteration, "mdd")
        self._optimize(loss, self.mdd_sched_screw.rate_at(iteration),
                       self.mdd_sched_mlp.rate_at(iteration))
        return breakdown

    def _optimize(self, loss, screw_rate: float, mlp_rate: float):
        store = self.model.store
        pre = None
        if self.config.debug_freeze_check:
            pre = {g: store.checksum(g) for g in store.frozen}
        ad.backward(loss)
        adam_step(store, mlp_rate, rates_by_group={
            "static": mlp_rate, "dynamic": mlp_rate, "local": mlp_rate,
            "screw_base": screw_rate, "screw_global": screw_rate,
        })
        if pre is not None:
            for g, digest in pre.items():
                if store.checksum(g) != digest:
                    raise FreezeViolation(f"frozen group {g!r} changed during a step")

    # full runs -----------------------------------------------------------------

    def run(self, out_dir, resume: bool = False,
            progress: bool = False) -> dict:
        cfg = self.config
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.txt"
        start_stage, start_iter = "bri", 0
        if resume and (out / "checkpoint_latest.ckpt").exists():
            self.model, meta = load_checkpoint(out / "checkpoint_latest.ckpt")
            state = meta["train_state"]
            start_stage, start_iter = state["stage"], state["iteration"] + 1
            self.rng.bit_generator.state = state["rng_state"]
        mode = "a" if resume else "w"
        timings = {}
        with open(log_path, mode) as log:
            if start_stage == "bri":
                t0 = time.time()
                self._stage_loop("bri", cfg.bri_iters, start_iter, out, log, progress)
                timings["bri_seconds"] = round(time.time() - t0, 3)
                save_checkpoint(out / "checkpoint_bri.ckpt", self.model,
                                self._ckpt_meta("bri", cfg.bri_iters - 1))
                start_iter = 0
            t0 = time.time()
            self._stage_loop("mdd", cfg.mdd_iters, start_iter, out, log, progress)
            timings["mdd_seconds"] = round(time.time() - t0, 3)
        save_checkpoint(out / "checkpoint_final.ckpt", self.model,
                        self._ckpt_meta("mdd", cfg.mdd_iters - 1))
        return {"checkpoint": str(out / "checkpoint_final.ckpt"),
                "bri_checkpoint": str(out / "checkpoint_bri.ckpt"),
                "log": str(log_path), "timings": timings}

    def _stage_loop(self, stage: str, total: int, start: int, out: Path, log,
                    progress: bool):
        cfg = self.config
        step = self.bri_step if stage == "bri" else self.mdd_step
        ckpt_every = max(1, int(total * cfg.checkpoint_fraction))
        for it in range(start, total):
            breakdown = step(it)
            rec = {"stage": stage, "iteration": it,
                   "parity": ("even" if it % 2 == 0 else "odd") if stage == "bri" else "-",
                   **breakdown.as_dict(),
                   "lr_mlp": (self.bri_sched_mlp if stage == "bri"
                              else self.mdd_sched_mlp).rate_at(it),
                   "lr_screw": (self.bri_sched_screw if stage == "bri"
                                else self.mdd_sched_screw).rate_at(it)}
            self.history.append(rec)
            if it % cfg.log_every == 0 or it == total - 1:
                line = (f"it={it} stage={stage} parity={rec['parity']} "
                        f"photo_d={rec['photo_dynamic']:.6f} photo_f={rec['photo_full']:.6f} "
                        f"mphoto_s={rec['mphoto_static']:.6f} sm={rec['sm']:.6f} "
                        f"lg={rec['lg']:.6f} total={rec['total']:.6f} "
                        f"lr_mlp={rec['lr_mlp']:.3e} lr_screw={rec['lr_screw']:.3e}")
                log.write(line + "\n")
                log.flush()
                if progress:
                    print(line, flush=True)
            if (it + 1) % ckpt_every == 0:
                save_checkpoint(out / "checkpoint_latest.ckpt", self.model,
                                self._ckpt_meta(stage, it))

    def _ckpt_meta(self, stage: str, iteration: int) -> dict:
        return {"train_state": {
            "stage": stage,
            "iteration": iteration,
            "rng_state": self.rng.bit_generator.state,
            "config": self.config.to_dict(),
        }}
