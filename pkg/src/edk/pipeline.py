"""Two-stage training: compress old logs into a frozen knowledge base, then train backbones on top."""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import checkpoint
from .backbones import Backbone, BackboneConfig
from .config import CompressionConfig, ExperimentConfig, TrainConfig, _build
from .data import (
    DatasetSchema,
    EncodedData,
    InstanceRecord,
    encode_records,
    generate_synthetic,
    load_dataset,
    load_schema,
    temporal_split,
)
from .encoder import KnowledgeBase, KnowledgeVectors, mlp
from .errors import BatchCompositionError, ConfigError, DataError, TrainingError
from .extractor import HardConcrete
from .metrics import auc, logloss
from .regularizers import (
    Discriminator,
    ProjectionHead,
    VariationalNet,
    dim_label_mi_loss,
    disentangle_loss,
    vclub_bound,
    vclub_fit_step,
)

log = logging.getLogger(__name__)

LOSS_KEYS = ("ce", "dim", "vclub", "disentangle", "l0", "total")


def _encoded(data, schema: DatasetSchema) -> EncodedData:
    if isinstance(data, EncodedData):
        return data
    return encode_records(list(data), schema)


def _tensors(data: EncodedData):
    hist = None if data.hist is None else torch.from_numpy(data.hist)
    return torch.from_numpy(data.X), torch.from_numpy(data.y), hist


def _both_labels(y) -> bool:
    y = np.asarray(y)
    return bool((y == 1).any() and (y == 0).any())


# ---------------------------------------------------------------------------
# Stage 1: compression


class CompressionModel(nn.Module):
    """Knowledge base plus the auxiliary heads that only exist during compression."""

    def __init__(self, vocab_sizes, cfg: CompressionConfig):
        super().__init__()
        hc = HardConcrete(cfg.beta_hc, cfg.gamma, cfg.delta, cfg.clamp_mode)
        self.cfg = cfg
        self.kb = KnowledgeBase(vocab_sizes, cfg.d, cfg.d_k, cfg.K, cfg.depth, cfg.heads, hc)
        self.label_head = mlp([cfg.d_k, cfg.d_k, 1])
        self.disc = Discriminator(cfg.d_k)
        self.projection = ProjectionHead(cfg.d_k, cfg.dropout)
        self.q_net = VariationalNet(cfg.d, cfg.d_k)

    def main_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("q_net.")]

    def loss_terms(
        self,
        out: KnowledgeVectors,
        y: torch.Tensor,
        gen_reg: torch.Generator | None = None,
        detach_xbar: bool = True,
    ) -> dict[str, torch.Tensor]:
        """l_compression = l_ce + lambda1 * l_reg + lambda2 * l_0, with its parts.

        Training stops the vCLUB gradient at the raw-input embedding so the bound
        can only be lowered by moving c; ``detach_xbar=False`` gives the plain
        gradient of the same scalar.
        """
        w = self.cfg.weights
        zero = out.c.new_zeros(())
        ce = F.binary_cross_entropy_with_logits(self.label_head(out.c).squeeze(-1), y.to(out.c.dtype))
        l0 = self.kb.extractor.l0(out.extraction.logits)
        terms = {"ce": ce, "dim": zero, "vclub": zero, "disentangle": zero, "l0": l0}
        reg = zero
        # a zero lambda1 or all-off regularizers skip sampling entirely, so those runs
        # consume the same random stream as plain supervised compression
        if w.lambda1 > 0:
            if w.alpha > 0:
                try:
                    terms["dim"] = dim_label_mi_loss(out.s, out.c, y, self.disc, gen_reg)
                except BatchCompositionError:
                    log.debug("single-label batch, DIM term skipped")
            if w.use_vclub:
                x_bar = out.x_bar.detach() if detach_xbar else out.x_bar
                terms["vclub"] = vclub_bound(x_bar, out.c, self.q_net, gen_reg)
            if w.beta > 0 and self.cfg.K >= 2:
                terms["disentangle"] = disentangle_loss(out.s, self.projection, self.cfg.tau, gen_reg)
            reg = w.alpha * terms["dim"] + terms["vclub"] + w.beta * terms["disentangle"]
        terms["reg"] = reg
        terms["total"] = ce + w.lambda1 * reg + w.lambda2 * l0
        return terms


@dataclass(frozen=True)
class KnowledgeBaseParams:
    """Frozen extractor + encoder with provenance. Never trained after compress() returns."""

    model: KnowledgeBase
    schema_fingerprint: str
    config: dict
    version: str
    history: tuple = ()

    @property
    def d_k(self) -> int:
        return self.model.d_k

    @property
    def K(self) -> int:
        return self.model.K

    def arrays(self) -> dict[str, np.ndarray]:
        return checkpoint.state_to_arrays(self.model, "kb.")

    def query(self, X: torch.Tensor, batch_size: int = 4096) -> KnowledgeVectors:
        self.model.eval()
        s, c = [], []
        with torch.no_grad():
            for i in range(0, len(X), batch_size):
                out = self.model(X[i : i + batch_size])
                s.append(out.s)
                c.append(out.c)
        return KnowledgeVectors(torch.cat(s), torch.cat(c))

    def save(self, path, schema: DatasetSchema | None = None) -> None:
        meta = {
            "kind": "knowledge_base",
            "schema_fingerprint": self.schema_fingerprint,
            "schema": None if schema is None else schema.to_dict(),
            "config": self.config,
            "version": self.version,
            "history": list(self.history),
        }
        checkpoint.save_arrays(path, self.arrays(), meta)

    @classmethod
    def load(cls, path, schema: DatasetSchema | None = None) -> "KnowledgeBaseParams":
        arrays, meta = checkpoint.load_arrays(path)
        if meta.get("kind") != "knowledge_base":
            raise DataError(f"{path} is not a knowledge-base checkpoint")
        if schema is None:
            if meta.get("schema") is None:
                raise DataError("checkpoint carries no schema; pass one explicitly")
            schema = DatasetSchema.from_dict(meta["schema"])
        if schema.fingerprint() != meta["schema_fingerprint"]:
            raise DataError("schema fingerprint does not match the knowledge base")
        cfg = compression_config_from_dict(meta["config"])
        model = CompressionModel(schema.vocab_sizes, cfg).kb
        model.load_state_dict(checkpoint.arrays_to_state(arrays, "kb."))
        _freeze(model)
        return cls(model, meta["schema_fingerprint"], meta["config"], meta["version"], tuple(meta.get("history", ())))


def compression_config_from_dict(d: dict) -> CompressionConfig:
    return _build(CompressionConfig, d, "compression")


def _freeze(module: nn.Module) -> None:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)


def _content_hash(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()[:16]


def _holdout_split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = max(1, int(round(frac * n)))
    if n - n_hold < 1:
        return perm, perm
    return perm[n_hold:], perm[:n_hold]


def _mean(rows: list[dict], key: str) -> float:
    return float(np.mean([r[key] for r in rows])) if rows else float("nan")


def compression_loss_on(model: CompressionModel, X: torch.Tensor, y: torch.Tensor, seed: int, batch_size: int = 2048):
    """Eval-mode l_compression over a dataset with fixed sampling seeds."""
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    totals, weights = [], []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            xb, yb = X[i : i + batch_size], y[i : i + batch_size]
            out = model.kb(xb)
            totals.append(float(model.loss_terms(out, yb, gen)["total"]))
            weights.append(len(xb))
    model.train()
    return float(np.average(totals, weights=weights))


def compress(
    D_old,
    schema: DatasetSchema,
    cfg: CompressionConfig = CompressionConfig(),
    log_path: str | Path | None = None,
) -> KnowledgeBaseParams:
    """Train extractor + encoder on old logs; return only the frozen knowledge base."""
    if cfg.grid_search:
        return _compress_grid(D_old, schema, cfg, log_path)
    data = _encoded(D_old, schema)
    if len(data) == 0 or not _both_labels(data.y):
        raise DataError("D_old must be non-empty and contain both labels")

    torch.manual_seed(cfg.seed)
    gen_mask = torch.Generator().manual_seed(2 * cfg.seed + 1)
    gen_reg = torch.Generator().manual_seed(2 * cfg.seed + 2)
    gen_order = torch.Generator().manual_seed(2 * cfg.seed + 3)

    model = CompressionModel(schema.vocab_sizes, cfg)
    opt = torch.optim.Adam(model.main_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    q_opt = torch.optim.Adam(model.q_net.parameters(), lr=cfg.q_lr)

    X, y, _ = _tensors(data)
    tr_idx, ho_idx = _holdout_split(len(data), cfg.holdout_fraction, cfg.seed)
    X_tr, y_tr = X[tr_idx], y[tr_idx]
    X_ho, y_ho = X[ho_idx], y[ho_idx]

    log_fh = open(log_path, "w") if log_path else None
    history: list[dict] = []
    best_loss, best_state, bad_epochs = math.inf, None, 0
    step = 0
    try:
        for epoch in range(cfg.max_epochs):
            model.train()
            order = torch.randperm(len(X_tr), generator=gen_order)
            rows = []
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i : i + cfg.batch_size]
                xb, yb = X_tr[idx], y_tr[idx]
                out = model.kb(xb, gen_mask)

                if cfg.weights.use_vclub and cfg.weights.lambda1 > 0:
                    q_opt.zero_grad()
                    vclub_fit_step(out.x_bar, out.c, model.q_net).backward()
                    q_opt.step()

                terms = model.loss_terms(out, yb, gen_reg)
                total = terms["total"]
                if not torch.isfinite(total):
                    raise TrainingError(step, "compression loss is not finite")
                opt.zero_grad()
                total.backward()
                opt.step()

                row = {"epoch": epoch, "step": step, **{k: terms[k].item() for k in LOSS_KEYS}}
                rows.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                step += 1

            holdout = compression_loss_on(model, X_ho, y_ho, seed=cfg.seed)
            summary = {"epoch": epoch, **{k: _mean(rows, k) for k in LOSS_KEYS}, "holdout_total": holdout}
            history.append(summary)
            log.info("compress epoch %d %s", epoch, json.dumps(summary))
            if holdout < best_loss - 1e-6:
                best_loss, bad_epochs = holdout, 0
                best_state = copy.deepcopy(model.kb.state_dict())
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()

    kb = model.kb
    if best_state is not None:
        kb.load_state_dict(best_state)
    _freeze(kb)
    arrays = checkpoint.state_to_arrays(kb, "kb.")
    return KnowledgeBaseParams(
        kb, schema.fingerprint(), dataclasses.asdict(cfg),
        _content_hash(arrays), tuple(history),
    )


def _compress_grid(D_old, schema, cfg: CompressionConfig, log_path) -> KnowledgeBaseParams:
    """Pick lr / weight decay by holdout AUC of the label head's view of c."""
    data = _encoded(D_old, schema)
    _, ho_idx = _holdout_split(len(data), cfg.holdout_fraction, cfg.seed)
    best, best_auc = None, -1.0
    for lr in cfg.lr_grid:
        for wd in cfg.wd_grid:
            trial = dataclasses.replace(cfg, lr=lr, weight_decay=wd, grid_search=False)
            kb = compress(data, schema, trial, None)
            score = _probe_auc(kb, data.subset(ho_idx))
            log.info("compress grid lr=%g wd=%g holdout AUC %.4f", lr, wd, score)
            if score > best_auc:
                best, best_auc = trial, score
    return compress(data, schema, best, log_path)


def _probe_auc(kb: KnowledgeBaseParams, data: EncodedData) -> float:
    """AUC of a least-squares linear probe on c; the label head is not kept in the KB."""
    c = kb.query(torch.from_numpy(data.X)).c.double().numpy()
    A = np.hstack([c, np.ones((len(c), 1))])
    w, *_ = np.linalg.lstsq(A, data.y.astype(np.float64), rcond=None)
    return auc(A @ w, data.y)


# ---------------------------------------------------------------------------
# Stage 2: utilization


@dataclass
class TrainedBackbone:
    model: Backbone
    config: BackboneConfig
    train_config: TrainConfig
    best_valid_auc: float
    kb_version: str | None = None
    history: list = field(default_factory=list)

    def scores(self, data: EncodedData, kb: KnowledgeBaseParams | None = None, batch_size: int = 4096) -> np.ndarray:
        if self.config.use_knowledge:
            if kb is None:
                raise DataError("this model needs its knowledge base")
            if kb.version != self.kb_version:
                raise DataError("knowledge base version differs from the one used in training")
        X, _, hist = _tensors(data)
        kv = kb.query(X) if self.config.use_knowledge else None
        return _predict(self.model, X, kv, hist, batch_size)

    def save(self, path, meta: dict | None = None) -> None:
        m = {
            "kind": "backbone",
            "backbone": self.config.to_dict(),
            "train": dataclasses.asdict(self.train_config),
            "best_valid_auc": self.best_valid_auc,
            "kb_version": self.kb_version,
            "history": self.history,
            **(meta or {}),
        }
        checkpoint.save_arrays(path, checkpoint.state_to_arrays(self.model, "backbone."), m)

    @classmethod
    def load(cls, path, vocab_sizes) -> tuple["TrainedBackbone", dict]:
        arrays, meta = checkpoint.load_arrays(path)
        if meta.get("kind") != "backbone":
            raise DataError(f"{path} is not a backbone checkpoint")
        bcfg = _build(BackboneConfig, meta["backbone"], "backbone")
        tcfg = _build(TrainConfig, meta["train"], "train")
        model = Backbone(bcfg, vocab_sizes)
        model.load_state_dict(checkpoint.arrays_to_state(arrays, "backbone."))
        model.eval()
        return cls(model, bcfg, tcfg, meta["best_valid_auc"], meta.get("kb_version"), meta.get("history", [])), meta


def _slice_kv(kv: KnowledgeVectors | None, idx) -> KnowledgeVectors | None:
    return None if kv is None else KnowledgeVectors(kv.s[idx], kv.c[idx])


def _predict(model: Backbone, X, kv, hist, batch_size=4096) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            sl = slice(i, i + batch_size)
            out.append(model.predict(X[sl], _slice_kv(kv, sl), None if hist is None else hist[sl]))
    return torch.cat(out).double().numpy()


def train_backbone(
    D_train,
    D_valid,
    schema: DatasetSchema,
    kb: KnowledgeBaseParams | None,
    backbone_cfg: BackboneConfig = BackboneConfig(),
    train_cfg: TrainConfig = TrainConfig(),
) -> TrainedBackbone:
    """Minimize l_pred with the knowledge base frozen; early stop on validation AUC."""
    if train_cfg.grid_search:
        best = None
        for lr in train_cfg.lr_grid:
            for wd in train_cfg.wd_grid:
                trial = dataclasses.replace(train_cfg, lr=lr, weight_decay=wd, grid_search=False)
                res = train_backbone(D_train, D_valid, schema, kb, backbone_cfg, trial)
                if best is None or res.best_valid_auc > best.best_valid_auc:
                    best = res
        return best

    train = _encoded(D_train, schema)
    valid = _encoded(D_valid, schema)
    if len(train) == 0:
        raise DataError("D_train is empty")
    bcfg = dataclasses.replace(
        backbone_cfg, use_knowledge=kb is not None, d_k=kb.d_k if kb is not None else backbone_cfg.d_k
    )
    torch.manual_seed(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    model = Backbone(bcfg, schema.vocab_sizes)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)

    X, y, hist = _tensors(train)
    Xv, yv, hist_v = _tensors(valid)
    kv = kb.query(X) if kb is not None else None
    kv_v = kb.query(Xv) if kb is not None else None

    best_auc, best_state, bad, history = -1.0, None, 0, []
    step = 0
    for epoch in range(train_cfg.max_epochs):
        model.train()
        order = torch.randperm(len(X), generator=gen)
        losses = []
        for i in range(0, len(order), train_cfg.batch_size):
            idx = order[i : i + train_cfg.batch_size]
            logit = model(X[idx], _slice_kv(kv, idx), None if hist is None else hist[idx])
            loss = F.binary_cross_entropy_with_logits(logit, y[idx])
            if not torch.isfinite(loss):
                raise TrainingError(step, "prediction loss is not finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        v_scores = _predict(model, Xv, kv_v, hist_v)
        v_auc = auc(v_scores, valid.y)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_auc": v_auc})
        log.info("train %s epoch %d loss %.4f valid AUC %.4f", bcfg.kind, epoch, np.mean(losses), v_auc)
        if v_auc > best_auc:
            best_auc, bad = v_auc, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad += 1
            if bad >= train_cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return TrainedBackbone(model, bcfg, train_cfg, best_auc, kb.version if kb is not None else None, history)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalReport:
    auc: float
    logloss: float
    n: int
    seed: int
    config: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(trained: TrainedBackbone, data: EncodedData, kb: KnowledgeBaseParams | None = None, config=None) -> EvalReport:
    scores = trained.scores(data, kb)
    return EvalReport(auc(scores, data.y), logloss(scores, data.y), len(data), trained.train_config.seed, config or {})


# ---------------------------------------------------------------------------
# Experiment orchestration


@dataclass
class Splits:
    schema: DatasetSchema
    old: EncodedData
    train: EncodedData
    valid: EncodedData
    test: EncodedData

    def before_t1(self) -> EncodedData:
        parts = [self.old, self.train]
        hist = None if self.old.hist is None else np.concatenate([p.hist for p in parts])
        return EncodedData(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.t for p in parts]),
            hist,
        )


def load_records(cfg: ExperimentConfig) -> tuple[DatasetSchema, list[InstanceRecord]]:
    if cfg.data.synthetic is not None:
        return cfg.data.synthetic.schema(), generate_synthetic(cfg.data.synthetic)
    if cfg.data.path is None or cfg.data.schema is None:
        raise ConfigError("data section needs either 'synthetic' or both 'path' and 'schema'")
    schema = load_schema(cfg.data.schema)
    return schema, load_dataset(cfg.data.path, schema)


def prepare_splits(cfg: ExperimentConfig) -> Splits:
    schema, records = load_records(cfg)
    parts = temporal_split(records, cfg.resolved_split())
    return Splits(schema, *(encode_records(p, schema) for p in parts))


def run_edk(splits: Splits, cfg: ExperimentConfig, seed: int, comp: CompressionConfig | None = None):
    comp = dataclasses.replace(comp or cfg.compression, seed=seed)
    kb = compress(splits.old, splits.schema, comp)
    trained = train_backbone(
        splits.train, splits.valid, splits.schema, kb, cfg.backbone, dataclasses.replace(cfg.train, seed=seed)
    )
    return kb, trained, evaluate(trained, splits.test, kb, cfg.to_dict())


def run_baseline(splits: Splits, cfg: ExperimentConfig, seed: int):
    data = splits.before_t1() if cfg.train.baseline_data == "before_t1" else splits.train
    trained = train_backbone(
        data, splits.valid, splits.schema, None, cfg.backbone, dataclasses.replace(cfg.train, seed=seed)
    )
    return trained, evaluate(trained, splits.test, None, cfg.to_dict())


ABLATION_CELLS = {
    "full": {},
    "w/o disentangled": {"beta": 0.0},
    "w/o essential": {"alpha": 0.0, "use_vclub": False},
    "w/o both": {"alpha": 0.0, "beta": 0.0, "use_vclub": False},
}


def ablate(cfg: ExperimentConfig, splits: Splits | None = None, out_dir: str | Path | None = None) -> dict:
    """Principle ablation plus K-sweep. Returns {"runs": [...], "table": [...]} with 4 + |k_list| table rows."""
    splits = splits or prepare_splits(cfg)
    runs = []
    cells: list[tuple[str, CompressionConfig]] = []
    for name, change in ABLATION_CELLS.items():
        w = dataclasses.replace(cfg.compression.weights, **change)
        cells.append((name, dataclasses.replace(cfg.compression, weights=w)))
    for K in cfg.ablation.k_list:
        cells.append((f"K={K}", dataclasses.replace(cfg.compression, K=K)))

    table = []
    for name, comp in cells:
        reports = []
        for seed in cfg.ablation.seeds:
            _, _, rep = run_edk(splits, cfg, seed, comp)
            reports.append(rep)
            runs.append({"cell": name, "K": comp.K, "seed": seed, "auc": rep.auc, "logloss": rep.logloss, "n": rep.n})
            log.info("ablate %s seed %d AUC %.4f", name, seed, rep.auc)
        table.append(
            {
                "cell": name,
                "K": comp.K,
                "auc_mean": float(np.mean([r.auc for r in reports])),
                "logloss_mean": float(np.mean([r.logloss for r in reports])),
                "seeds": list(cfg.ablation.seeds),
                "auc_per_seed": [r.auc for r in reports],
            }
        )
    result = {"runs": runs, "table": table}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ablation_runs.csv", runs)
        _write_csv(
            out / "ablation_table.csv",
            [{**r, "seeds": " ".join(map(str, r["seeds"])), "auc_per_seed": " ".join(f"{a:.6f}" for a in r["auc_per_seed"])}
             for r in table],
        )
    return result


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Pattern statistics


def pattern_stats(kb: KnowledgeBaseParams, data: EncodedData, out_dir: str | Path | None = None, batch_size: int = 4096):
    """Cardinality histogram of eval-mode masks (entries > 0.5) and a vector export.

    Returns (histogram, export) where histogram has shape (K, F + 1) with
    histogram[j, m] = number of instances whose pattern j keeps m fields, and
    export is a list of rows: one raw-input row (mean-pooled memorization
    embedding) and K pattern rows per instance.
    """
    model = kb.model
    model.eval()
    X = torch.from_numpy(data.X)
    F_ = X.shape[1]
    hist = np.zeros((kb.K, F_ + 1), dtype=np.int64)
    raw_parts, pat_parts = [], []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            out = model(X[i : i + batch_size])
            card = (out.extraction.mask > 0.5).sum(dim=1).numpy()  # (B, K)
            for j in range(kb.K):
                hist[j] += np.bincount(card[:, j], minlength=F_ + 1)
            raw_parts.append(out.x_bar.numpy())
            pat_parts.append(out.s.numpy())
    raw = np.concatenate(raw_parts) if raw_parts else np.zeros((0, model.d))
    pats = np.concatenate(pat_parts) if pat_parts else np.zeros((0, kb.K, model.d_k))
    width = max(raw.shape[1], pats.shape[2])
    export = []
    for n in range(len(raw)):
        export.append(("raw", n, -1, raw[n]))
        for j in range(kb.K):
            export.append(("pattern", n, j, pats[n, j]))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "cardinality_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pattern", "cardinality", "count"])
            for j in range(kb.K):
                for m in range(F_ + 1):
                    w.writerow([j, m, int(hist[j, m])])
        with open(out / "vectors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_type", "instance", "pattern", *(f"v{k}" for k in range(width))])
            for kind, n, j, vec in export:
                cells = [repr(float(v)) for v in vec] + [""] * (width - len(vec))
                w.writerow([kind, n, j, *cells])
    return hist, export
