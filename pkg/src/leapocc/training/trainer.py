"""Two-stage training: skinning-weight networks first, then the occupancy
decoder and body encoders with the skinning networks frozen."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from ..autodiff import Tape, adam_step, backward
from ..io.config import RunConfig
from ..occupancy import OccupancyModel
from ..skinning import canonicalize_point, cycle_distance
from .dataset import Dataset
from .losses import lbs_weight_loss, occupancy_loss
from .metrics import iou_from_labels

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class MetricLog:
    """Line-delimited JSON metric records, kept in memory and optionally on disk."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        clean = {k: (round(float(v), 10) if isinstance(v, (float, np.floating)) else v)
                 for k, v in record.items()}
        self.records.append(clean)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(clean, sort_keys=True) + "\n")

    def series(self, key: str, stage: str | None = None) -> list:
        return [r[key] for r in self.records if key in r and (stage is None or r.get("stage") == stage)]


def _split(total: int, parts: int) -> int:
    return max(1, math.ceil(total / parts))


class Trainer:
    def __init__(self, model: OccupancyModel, data: Dataset, cfg: RunConfig,
                 metrics: MetricLog | None = None, seed: int | None = None):
        self.model, self.data, self.cfg = model, data, cfg
        self.metrics = metrics or MetricLog()
        seed = cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EA1]))
        self.dtype = model.dtype
        self.weights = data.body.weights.astype(self.dtype)
        self.occ_cache: list | None = None
        self.history: dict[str, list] = {"lbs": [], "occupancy": []}

    # ------------------------------------------------------------ helpers

    def _pick(self, pool, n: int) -> np.ndarray:
        return self.rng.integers(0, len(pool.points), size=n)

    def _poses(self) -> np.ndarray:
        E = self.cfg.train.batch_poses
        return np.sort(self.rng.choice(len(self.data.train), size=E, replace=False))

    def _step(self, tape, loss, it: int, stage: str) -> float:
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingAborted(f"{stage} loss became {value} at iteration {it}", it)
        backward(tape, loss)
        try:
            adam_step(self.model.store, self.cfg.train.lr)
        except FloatingPointError as exc:
            raise TrainingAborted(f"{stage} iteration {it}: {exc}", it) from exc
        return value

    def _freeze(self, stage: str) -> None:
        store = self.model.store
        lbs_stage = stage == "lbs"
        store.set_trainable("lbs.", lbs_stage)
        store.set_trainable("enc.", not lbs_stage)
        store.set_trainable("onet.", not lbs_stage)

    # ------------------------------------------------------------ stage 1

    def _lbs_batch(self, poses):
        t = self.cfg.train
        E = len(poses)
        n_iu, n_in = _split(t.inv_uniform, E), _split(t.inv_surface, E)
        n_fu, n_fn = _split(t.fwd_uniform, E), _split(t.fwd_surface, E)
        xi, ti, xf, tf = [], [], [], []
        W = self.weights
        for p in poses:
            pose = self.data.train[p]
            pu, pn = pose.pools["posed_uniform"], pose.pools["posed_near"]
            iu, inn = self._pick(pu, n_iu), self._pick(pn, n_in)
            xi.append(np.concatenate([pu.points[iu], pn.points[inn]]))
            ti.append(W[np.concatenate([pu.nearest[iu], pn.nearest[inn]])])
            cu, cn = pose.pools["canonical_uniform"], pose.pools["canonical_near"]
            ju, jn = self._pick(cu, n_fu), self._pick(cn, n_fn)
            xf.append(np.concatenate([cu.points[ju], cn.points[jn],
                                      pose.mapped[0][iu], pose.mapped[1][inn]]))
            tf.append(np.concatenate([W[cu.nearest[ju]], W[cn.nearest[jn]], ti[-1]]))
        cast = lambda a: np.stack(a).astype(self.dtype)  # noqa: E731
        return cast(xi), cast(ti), cast(xf), cast(tf)

    def lbs_loss(self, poses, training: bool = True):
        xi, ti, xf, tf = self._lbs_batch(poses)
        ctx = self.model.context(self.data.transforms(poses), skinning=True, codes=False)
        l_inv = lbs_weight_loss(self.model.inverse_weights(ctx, xi, training), ti)
        l_fwd = lbs_weight_loss(self.model.forward_weights(ctx, xf, training), tf)
        return l_inv, l_fwd

    def train_lbs(self, iters: int | None = None, log_every: int | None = None) -> None:
        iters = self.cfg.train.lbs_iters if iters is None else iters
        log_every = log_every or self.cfg.train.log_every
        self._freeze("lbs")
        for it in range(1, iters + 1):
            poses = self._poses()
            with Tape() as tape:
                l_inv, l_fwd = self.lbs_loss(poses)
                loss = l_inv + l_fwd
            value = self._step(tape, loss, it, "lbs")
            self.history["lbs"].append(value)
            if it % log_every == 0 or it == iters:
                rec = {"stage": "lbs", "iteration": it, "loss": value,
                       "l1_inv": float(l_inv.item()), "l1_fwd": float(l_fwd.item())}
                rec.update(self.heldout_lbs())
                self.metrics.write(rec)
                log.info("lbs %d loss %.4f heldout inv %.4f fwd %.4f", it, value,
                         rec["heldout_l1_inv"], rec["heldout_l1_fwd"])

    def heldout_lbs(self, n: int | None = None) -> dict:
        """Held-out L1 weight errors (eval mode) and the uniform-prediction baseline."""
        n = n or self.cfg.train.heldout_points
        half = n // 2
        W = self.weights
        K = W.shape[1]
        inv, fwd, base = [], [], []
        for i, pose in enumerate(self.data.heldout):
            pu, pn = pose.pools["posed_uniform"], pose.pools["posed_near"]
            cu, cn = pose.pools["canonical_uniform"], pose.pools["canonical_near"]
            xi = np.concatenate([pu.points[:half], pn.points[:half]]).astype(self.dtype)
            ti = W[np.concatenate([pu.nearest[:half], pn.nearest[:half]])]
            xf = np.concatenate([cu.points[:half], cn.points[:half]]).astype(self.dtype)
            tf = W[np.concatenate([cu.nearest[:half], cn.nearest[:half]])]
            ctx = self.model.context(self.data.transforms([i], heldout=True), codes=False)
            inv.append(lbs_weight_loss(self.model.inverse_weights(ctx, xi[None]), ti[None]).item())
            fwd.append(lbs_weight_loss(self.model.forward_weights(ctx, xf[None]), tf[None]).item())
            base.append(float(np.abs(ti - 1.0 / K).sum(axis=-1).mean()))
        return {"heldout_l1_inv": float(np.mean(inv)), "heldout_l1_fwd": float(np.mean(fwd)),
                "heldout_l1_uniform": float(np.mean(base))}

    # ------------------------------------------------------------ stage 2

    def prepare_occupancy(self) -> None:
        """Run the frozen skinning networks once over every posed training point."""
        mode = self.cfg.train
        W = self.weights
        cache = []
        for i, pose in enumerate(self.data.train):
            ctx = self.model.context(self.data.transforms([i]), skinning=True, codes=False)
            entry = {}
            for j, kind in enumerate(("posed_uniform", "posed_near")):
                pool = pose.pools[kind]
                x = pool.points.astype(self.dtype)[None]
                if mode.deterministic_weights:
                    w = W[pool.nearest][None]
                    xc = pose.mapped[j].astype(self.dtype)[None]
                    if mode.deterministic_cycle == "zero":
                        d = np.zeros(x.shape[:-1], dtype=self.dtype)
                    else:
                        d = cycle_distance(w, self.model.forward_weights(ctx, xc)).data
                else:
                    wv = self.model.inverse_weights(ctx, x)
                    xcv = canonicalize_point(x, wv, ctx.transforms.B)
                    d = cycle_distance(wv, self.model.forward_weights(ctx, xcv)).data
                    w, xc = wv.data, xcv.data
                entry[kind] = (xc[0].astype(self.dtype), w[0].astype(self.dtype),
                               d[0].astype(self.dtype), pool.occupancy)
            cache.append(entry)
        self.occ_cache = cache

    def _occ_batch(self, poses):
        t = self.cfg.train
        E = len(poses)
        n_u, n_p, n_c = (_split(t.occ_uniform, E), _split(t.occ_posed_surface, E),
                         _split(t.occ_canonical_surface, E))
        xs, ws, ds, os_ = [], [], [], []
        for p in poses:
            entry = self.occ_cache[p]
            parts = []
            for kind, n in (("posed_uniform", n_u), ("posed_near", n_p)):
                xc, w, d, occ = entry[kind]
                idx = self.rng.integers(0, len(occ), size=n)
                parts.append((xc[idx], w[idx], d[idx], occ[idx]))
            cn = self.data.train[p].pools["canonical_near"]
            idx = self._pick(cn, n_c)
            parts.append((cn.points[idx].astype(self.dtype), self.weights[cn.nearest[idx]],
                          np.zeros(n_c, dtype=self.dtype), cn.occupancy[idx]))
            xs.append(np.concatenate([q[0] for q in parts]))
            ws.append(np.concatenate([q[1] for q in parts]))
            ds.append(np.concatenate([q[2] for q in parts]))
            os_.append(np.concatenate([q[3] for q in parts]))
        cast = lambda a: np.stack(a).astype(self.dtype)  # noqa: E731
        return cast(xs), cast(ws), cast(ds), cast(os_)

    def occupancy_loss(self, poses, training: bool = True):
        xc, w, d, occ = self._occ_batch(poses)
        ctx = self.model.context(self.data.transforms(poses), skinning=False, codes=True)
        prob = self.model.decode(ctx, xc, w, d, training)
        return occupancy_loss(prob, occ)

    def train_occupancy(self, iters: int | None = None, log_every: int | None = None) -> None:
        iters = self.cfg.train.occ_iters if iters is None else iters
        log_every = log_every or self.cfg.train.log_every
        if self.occ_cache is None:
            self.prepare_occupancy()
        self._freeze("occupancy")
        for it in range(1, iters + 1):
            poses = self._poses()
            with Tape() as tape:
                loss = self.occupancy_loss(poses)
            value = self._step(tape, loss, it, "occupancy")
            self.history["occupancy"].append(value)
            if it % log_every == 0 or it == iters:
                rec = {"stage": "occupancy", "iteration": it, "loss": value}
                rec.update(self.heldout_occupancy())
                self.metrics.write(rec)
                log.info("occupancy %d loss %.4f heldout iou %.2f", it, value,
                         rec["heldout_iou"])

    def heldout_occupancy(self, n: int | None = None) -> dict:
        """Full-pipeline IOU on the held-out posed pools (eval mode)."""
        from ..occupancy import query_occupancy

        n = n or self.cfg.train.heldout_points
        half = n // 2
        pred, truth = [], []
        mode = self.cfg.train
        weights = "pseudo_gt" if mode.deterministic_weights else "network"
        cycle = "zero" if (mode.deterministic_weights and mode.deterministic_cycle == "zero") \
            else "forward"
        for i, pose in enumerate(self.data.heldout):
            pu, pn = pose.pools["posed_uniform"], pose.pools["posed_near"]
            x = np.concatenate([pu.points[:half], pn.points[:half]]).astype(np.float64)
            res = query_occupancy(self.model, x, pose.bone_set(), weights=weights, cycle=cycle)
            pred.append(res.inside)
            truth.append(np.concatenate([pu.occupancy[:half], pn.occupancy[:half]]))
        return {"heldout_iou": iou_from_labels(np.concatenate(pred), np.concatenate(truth))}
