"""Three-stage training: paired autoencoding, adversarial imputation, joint
clustering refinement. Also the mean-imputation baseline and the pipeline
that writes a complete run directory."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import clustering as cl
from .dataio import MultiViewDataset, PartialSplit, make_partial_split, mean_impute
from .errors import ConfigError, TrainingError
from .fusion import fuse, fusion_loss, init_projection_pca
from .losses import (
    LossWeights,
    adversarial_training_loss,
    autoencoder_loss,
    cycle_loss,
    gan_losses,
    reconstruction_error,
    total_objective,
)
from .networks import ModelState, NetworkConfig, default_latent_dim, save_checkpoint

log = logging.getLogger(__name__)

ABLATION_MODES = ("AE", "AE+AT", "ALL")
FUSION_INITS = ("pca_balanced", "pca", "average")
LOG_COLUMNS = ["epoch", "step", "L_AE", "L_TR", "d_loss", "g_loss", "L_cyc", "L_FU", "L_KL", "total"]


def deterministic_requested() -> bool:
    return os.environ.get("GPMVC_DETERMINISTIC", "") == "1"


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    if deterministic_requested():
        torch.use_deterministic_algorithms(True)


@dataclass
class TrainConfig:
    epochs_per_step: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 0
    ablation_mode: str = "ALL"
    weights: LossWeights = field(default_factory=LossWeights)
    # latent_dim 0 means "pick from the data" (see default_latent_dim)
    network: NetworkConfig = field(default_factory=lambda: NetworkConfig(latent_dim=0))
    alpha: float = 1.0
    kmeans_n_init: int = 10
    # per-step epoch overrides [step1, step2, step3]; None uses epochs_per_step
    step_epochs: list[int] | None = None
    # after step 1 the fusion projection is set from the paired latents:
    # "pca_balanced" equalizes the views' scales first, "pca" does not,
    # "average" keeps the uniform-average initialization
    fusion_init: str = "pca_balanced"
    # step 3 re-fits the centroids by warm-started k-means at every epoch start
    refresh_centroids: bool = True
    # weight of the step-1 cross-view term on paired rows (0 disables it)
    paired_translation: float = 1.0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        self.validate()

    def validate(self) -> None:
        if self.epochs_per_step < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch size and learning rate must be positive")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"ablation_mode must be one of {ABLATION_MODES}")
        if self.fusion_init not in FUSION_INITS:
            raise ConfigError(f"fusion_init must be one of {FUSION_INITS}")
        if self.paired_translation < 0:
            raise ConfigError("paired_translation must be >= 0")
        if self.step_epochs is not None and (
            len(self.step_epochs) != 3 or any(e < 0 for e in self.step_epochs)
        ):
            raise ConfigError("step_epochs must list 3 non-negative epoch counts")

    def epochs(self, step: int) -> int:
        if self.step_epochs is not None:
            return self.step_epochs[step - 1]
        return self.epochs_per_step

    def effective_weights(self) -> LossWeights:
        w = self.weights
        if self.ablation_mode == "AE":
            return LossWeights(0.0, 0.0, 0.0, w.cycle)
        if self.ablation_mode == "AE+AT":
            return LossWeights(w.adversarial, 0.0, 0.0, w.cycle)
        return w

    def network_for(self, dataset: MultiViewDataset) -> NetworkConfig:
        net = NetworkConfig(**asdict(self.network))
        if net.latent_dim == 0:
            net.latent_dim = default_latent_dim(dataset.dims, dataset.k)
        net.validate(dataset.k)
        return net

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid config file {path}: {exc}") from exc


class TrainLog:
    """Per-epoch loss averages, written as ``train_log.csv``."""

    def __init__(self):
        self.rows: list[dict] = []
        self._acc: dict[str, list[float]] = {}

    def add(self, **values) -> None:
        for key, val in values.items():
            self._acc.setdefault(key, []).append(float(val))

    def end_epoch(self, step: int, epoch: int) -> dict:
        row = {"epoch": epoch, "step": step}
        for col in LOG_COLUMNS[2:]:
            vals = self._acc.get(col)
            row[col] = float(np.mean(vals)) if vals else ""
        self._acc = {}
        self.rows.append(row)
        return row

    def column(self, step: int, name: str) -> list[float]:
        return [r[name] for r in self.rows if r["step"] == step and r[name] != ""]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)


@dataclass
class Session:
    """Mutable training context shared by the three steps of one run."""

    dataset: MultiViewDataset
    split: PartialSplit
    config: TrainConfig
    state: ModelState
    views: list[torch.Tensor]
    observed: np.ndarray
    log: TrainLog = field(default_factory=TrainLog)
    counters: dict = field(default_factory=lambda: {"step1_rows": 0, "imputations": 0})
    rng: np.random.Generator = None
    torch_gen: torch.Generator = None
    completed: list[torch.Tensor] | None = None
    centroids: np.ndarray | None = None

    def batches(self, idx: np.ndarray):
        order = idx[torch.randperm(len(idx), generator=self.torch_gen).numpy()]
        bs = self.config.batch_size
        for start in range(0, len(order), bs):
            yield torch.from_numpy(order[start : start + bs])


def new_session(dataset: MultiViewDataset, split: PartialSplit, config: TrainConfig) -> Session:
    if dataset.V < 2:
        raise ConfigError("training needs at least 2 views")
    split.check_compatible(dataset)
    seed_everything(config.seed)
    state = ModelState(config.network_for(dataset), dataset.dims)
    views = [torch.tensor(x, dtype=torch.float32) for x in dataset.views]
    gen = torch.Generator().manual_seed(config.seed)
    return Session(
        dataset=dataset,
        split=split,
        config=config,
        state=state,
        views=views,
        observed=split.observed(),
        rng=np.random.Generator(np.random.PCG64(config.seed)),
        torch_gen=gen,
    )


def _adam(params, lr):
    return torch.optim.Adam(params, lr=lr)


@torch.no_grad()
def common_representation(state: ModelState, views, chunk: int = 1024) -> torch.Tensor:
    out = []
    n = views[0].shape[0]
    for start in range(0, n, chunk):
        zs = [state.encode(v, x[start : start + chunk]) for v, x in enumerate(views)]
        out.append(fuse(zs, state.fusion))
    return torch.cat(out)


# step 1 -----------------------------------------------------------------


def translation_loss(state: ModelState, xs, zs) -> torch.Tensor:
    """Cross-view reconstruction on truly paired rows: view v decoded from the
    code of every other view w, averaged over the V - 1 sources."""
    terms = [reconstruction_error(x, state.generate(v, zs[w]))
             for v, x in enumerate(xs) for w in range(len(xs)) if w != v]
    return sum(terms) / (len(xs) - 1)


def train_step1(session: Session):
    """Autoencode paired samples only, then place centroids on their fused codes."""
    cfg, state = session.config, session.state
    paired = session.split.paired_idx
    k = session.dataset.k
    if len(paired) < k:
        raise TrainingError(f"only {len(paired)} paired samples for k={k} clusters")
    opt = _adam(list(state.encoder_parameters()) + list(state.generator_parameters()),
                cfg.learning_rate)
    state.train()
    for epoch in range(cfg.epochs(1)):
        for b in session.batches(paired):
            xs = [x[b] for x in session.views]
            session.counters["step1_rows"] += len(b) * len(xs)
            zs = [state.encode(v, x) for v, x in enumerate(xs)]
            l_ae = autoencoder_loss(xs, [state.generate(v, z) for v, z in enumerate(zs)])
            loss = l_ae
            if cfg.paired_translation > 0:
                l_tr = translation_loss(state, xs, zs)
                loss = loss + cfg.paired_translation * l_tr
                session.log.add(L_TR=l_tr.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
            session.log.add(L_AE=l_ae.item(), total=loss.item())
        session.log.end_epoch(1, epoch)
    pidx = torch.from_numpy(np.array(paired))
    paired_views = [x[pidx] for x in session.views]
    if cfg.fusion_init != "average":
        with torch.no_grad():
            init_projection_pca(state.fusion, [state.encode(v, x) for v, x in enumerate(paired_views)],
                                balance_views=cfg.fusion_init == "pca_balanced")
    z = common_representation(state, paired_views)
    session.centroids = cl.init_centroids(z, k, cfg.seed, n_init=cfg.kmeans_n_init)
    return state, session.centroids


# step 2 -----------------------------------------------------------------


def pseudo_pair(session: Session) -> list[torch.Tensor]:
    """Fill every missing (sample, view) entry with a randomly drawn observed
    sample of that view; redrawn every epoch."""
    filled = []
    for v, x in enumerate(session.views):
        seen = np.flatnonzero(session.observed[:, v])
        missing = np.flatnonzero(~session.observed[:, v])
        xv = x.clone()
        if len(missing):
            donors = session.rng.choice(seen, size=len(missing), replace=True)
            xv[missing] = x[donors]
        filled.append(xv)
    return filled


def _fake_views(state: ModelState, zs, v: int) -> torch.Tensor:
    return torch.cat([state.generate(v, z) for w, z in enumerate(zs) if w != v])


def _cycle_terms(state: ModelState, xs, zs) -> list[torch.Tensor]:
    terms = []
    for v, (x, z) in enumerate(zip(xs, zs)):
        for w in range(len(xs)):
            if w != v:
                back = state.generate(v, state.encode(w, state.generate(w, z)))
                terms.append(cycle_loss(x, back))
    return terms


def _discriminator_update(state, d_opt, real_list, zs, session) -> float:
    d_total = 0.0
    with torch.no_grad():
        fakes = [_fake_views(state, zs, v) for v in range(state.V)]
    d_losses = []
    for v in range(state.V):
        d_loss, _ = gan_losses(state.discriminate(v, real_list[v]), state.discriminate(v, fakes[v]))
        d_losses.append(d_loss)
    d_sum = sum(d_losses)
    d_opt.zero_grad()
    d_sum.backward()
    d_opt.step()
    d_total = d_sum.item()
    return d_total


def _generator_terms(state, xs, zs):
    g_terms = []
    for v in range(state.V):
        probs = state.discriminate(v, _fake_views(state, zs, v))
        _, g_loss = gan_losses(torch.ones_like(probs), probs)
        g_terms.append(g_loss)
    return g_terms, _cycle_terms(state, xs, zs)


@torch.no_grad()
def impute_missing(session: Session) -> list[torch.Tensor]:
    """Generate every missing view of every unpaired sample from its retained view."""
    state = session.state
    completed = [x.clone() for x in session.views]
    for w in range(state.V):
        rows = np.array([i for i, r in session.split.unpaired.items() if r == w], dtype=np.int64)
        if len(rows) == 0:
            continue
        z = state.encode(w, session.views[w][rows])
        for v in range(state.V):
            if v != w:
                completed[v][rows] = state.generate(v, z)
                session.counters["imputations"] += len(rows)
    return completed


def train_step2(session: Session):
    """Adversarial training of generators and discriminators on all samples,
    then imputation of the missing views."""
    cfg, state = session.config, session.state
    weights = cfg.effective_weights()
    n = session.dataset.N
    epochs = cfg.epochs(2) if cfg.ablation_mode != "AE" and session.split.unpaired else 0
    if cfg.ablation_mode == "AE":
        epochs = 0
    if epochs:
        g_opt = _adam(state.generator_parameters(), cfg.learning_rate)
        d_opt = _adam(state.discriminator_parameters(), cfg.learning_rate)
        state.train()
        for p in state.encoder_parameters():
            p.requires_grad_(False)
        try:
            for epoch in range(epochs):
                filled = pseudo_pair(session)
                for b in session.batches(np.arange(n)):
                    xs = [x[b] for x in filled]
                    zs = [state.encode(v, x) for v, x in enumerate(xs)]
                    d_val = _discriminator_update(state, d_opt, xs, zs, session)
                    g_terms, c_terms = _generator_terms(state, xs, zs)
                    l_at = adversarial_training_loss(g_terms, c_terms, weights.cycle)
                    g_opt.zero_grad()
                    l_at.backward()
                    # discriminator grads from the generator pass are discarded
                    g_opt.step()
                    session.log.add(
                        d_loss=d_val,
                        g_loss=float(sum(t.item() for t in g_terms)),
                        L_cyc=float(sum(t.item() for t in c_terms)),
                        total=l_at.item(),
                    )
                session.log.end_epoch(2, epoch)
        finally:
            for p in state.encoder_parameters():
                p.requires_grad_(True)
            for p in state.discriminator_parameters():
                p.grad = None
    session.completed = impute_missing(session)
    return state, session.completed


# step 3 -----------------------------------------------------------------


def _refresh_imputed(session: Session) -> None:
    saved = session.counters["imputations"]
    session.completed = impute_missing(session)
    session.counters["imputations"] = saved


def train_step3(session: Session, on_epoch=None):
    """Optimize the full weighted objective on the completed data.

    ``on_epoch(session, epoch, z, q)`` is called with the codes and soft
    assignments computed at the start of every epoch.
    """
    cfg, state = session.config, session.state
    if session.completed is None or session.centroids is None:
        raise TrainingError("steps 1 and 2 must run before step 3")
    weights = cfg.effective_weights()
    n = session.dataset.N
    observed = torch.from_numpy(session.observed)
    mu = torch.nn.Parameter(torch.as_tensor(session.centroids, dtype=torch.float32))
    main_params = (
        list(state.encoder_parameters())
        + list(state.generator_parameters())
        # beta only: the projection stays at its step-1 value. Adam would
        # otherwise move it at full speed on the KL gradient alone, whatever
        # lambda3 is, and the clusters collapse.
        + [state.fusion.raw_weights]
    )
    if weights.clustering > 0:
        main_params.append(mu)
    opt = _adam(main_params, cfg.learning_rate)
    d_opt = _adam(state.discriminator_parameters(), cfg.learning_rate) if weights.adversarial > 0 else None
    cstate = cl.ClusterState(centroids=mu.detach(), alpha=cfg.alpha)

    for epoch in range(cfg.epochs(3)):
        z_all = common_representation(state, session.completed)
        if cfg.refresh_centroids:
            mu.data.copy_(torch.as_tensor(cl.refine_centroids(z_all, mu.detach()),
                                          dtype=torch.float32))
        q_all = cl.soft_assign(z_all, mu.detach(), cfg.alpha)
        if cl.reseed_empty_centroids(z_all, mu.data, q_all):
            q_all = cl.soft_assign(z_all, mu.detach(), cfg.alpha)
        p_all = cl.target_distribution(q_all)
        if on_epoch is not None:
            on_epoch(session, epoch, z_all, q_all)
        state.train()
        for b in session.batches(np.arange(n)):
            xs = [x[b] for x in session.completed]
            zs = [state.encode(v, x) for v, x in enumerate(xs)]
            d_val = None
            if d_opt is not None:
                real = [session.completed[v][b][observed[b, v]] for v in range(state.V)]
                d_val = _discriminator_update(state, d_opt, real, zs, session)
            recon = [state.generate(v, z) for v, z in enumerate(zs)]
            l_ae = autoencoder_loss(xs, recon)
            zero = l_ae.new_zeros(())
            l_at = l_fu = l_kl = zero
            g_val = c_val = None
            if weights.adversarial > 0:
                g_terms, c_terms = _generator_terms(state, xs, zs)
                l_at = adversarial_training_loss(g_terms, c_terms, weights.cycle)
                g_val = float(sum(t.item() for t in g_terms))
                c_val = float(sum(t.item() for t in c_terms))
            z = fuse(zs, state.fusion)
            if weights.fusion > 0:
                # minimized over beta only
                l_fu = fusion_loss(zs, state.fusion, reduction="mean", weights_only=True)
            if weights.clustering > 0:
                q = cl.soft_assign(z, mu, cfg.alpha)
                l_kl = cl.kl_clustering_loss(p_all[b], q, reduction="mean")
            loss = total_objective(l_ae, l_at, l_fu, l_kl, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for p in state.discriminator_parameters():
                p.grad = None
            entry = dict(L_AE=l_ae.item(), L_FU=l_fu.item(), L_KL=l_kl.item(), total=loss.item())
            if d_val is not None:
                entry.update(d_loss=d_val, g_loss=g_val, L_cyc=c_val)
            session.log.add(**entry)
        session.log.end_epoch(3, epoch)
        _refresh_imputed(session)

    z_all = common_representation(state, session.completed)
    if weights.clustering == 0 and cfg.refresh_centroids:
        # no KL gradient moved the centroids during the last epoch
        mu.data.copy_(torch.as_tensor(cl.refine_centroids(z_all, mu.detach()),
                                      dtype=torch.float32))
    cstate.centroids = mu.detach().clone()
    cstate.q = cl.soft_assign(z_all, cstate.centroids, cfg.alpha)
    cstate.p = cl.target_distribution(cstate.q)
    return state, z_all, cstate


# pipeline ---------------------------------------------------------------


@dataclass
class RunOutput:
    result: cl.ClusterResult
    session: Session
    z: torch.Tensor
    cluster_state: cl.ClusterState


def fit(dataset: MultiViewDataset, split: PartialSplit, config: TrainConfig) -> RunOutput:
    """Run the three training steps and evaluate the final assignments."""
    session = new_session(dataset, split, config)
    train_step1(session)
    train_step2(session)
    _, z, cstate = train_step3(session)
    labels = cl.assign_clusters(cstate.q)
    result = cl.ClusterResult.evaluate(
        labels, dataset.labels, ratio=split.impartial_ratio, seed=config.seed,
        mode=config.ablation_mode,
    )
    result.extra.update(
        beta=[float(b) for b in session.state.fusion.beta().detach()],
        n_paired=int(len(split.paired_idx)),
        unpaired_per_view=split.view_counts(),
        imputations=session.counters["imputations"],
        dataset=dataset.name,
    )
    return RunOutput(result, session, z, cstate)


def run_pipeline(dataset: MultiViewDataset, ratio: float, seed: int, config: TrainConfig,
                 out_dir=None, split: PartialSplit | None = None,
                 data_path=None) -> cl.ClusterResult:
    """Mask, train, cluster and evaluate; optionally write a run directory.

    ``config.seed`` is overridden by ``seed`` so mask and training share it.
    """
    started = time.perf_counter()
    if split is None:
        split = make_partial_split(dataset, ratio, seed)
    if config.seed != seed:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
    out = fit(dataset, split, config)
    out.result.extra["runtime_s"] = round(time.perf_counter() - started, 3)
    if out_dir is not None:
        write_run(Path(out_dir), dataset, split, config, out, data_path=data_path)
    log.info("ratio=%.2f seed=%d mode=%s acc=%.4f nmi=%.4f purity=%.4f", split.impartial_ratio,
             seed, config.ablation_mode, out.result.acc, out.result.nmi, out.result.purity)
    return out.result


def write_run(run_dir: Path, dataset: MultiViewDataset, split: PartialSplit,
              config: TrainConfig, out: RunOutput, data_path=None) -> Path:
    from .samples import dump_generated

    if run_dir.exists() and any(run_dir.iterdir()):
        log.warning("overwriting existing run directory %s", run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict()
    cfg["network"] = asdict(out.session.state.config)
    cfg["dataset"] = {"name": dataset.name, "N": dataset.N, "V": dataset.V, "dims": dataset.dims,
                      "k": dataset.k}
    if data_path is not None:
        cfg["dataset"]["path"] = str(Path(data_path).resolve())
    (run_dir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    split.save(run_dir / "mask.json")
    save_checkpoint(out.session.state, run_dir / "checkpoint.bin",
                    extra={"centroids": out.cluster_state.centroids.tolist()})
    out.session.log.write(run_dir / "train_log.csv")
    (run_dir / "metrics.json").write_text(json.dumps(out.result.metrics(), indent=2) + "\n")
    imputed = run_dir / "imputed"
    imputed.mkdir(exist_ok=True)
    for v, x in enumerate(out.session.completed):
        np.savetxt(imputed / f"view_{v}.csv", x.numpy(), delimiter=",", fmt="%.8g")
    np.savetxt(run_dir / "labels_pred.csv", out.result.labels, fmt="%d")
    if dataset.image_shapes:
        for v in dataset.image_shapes:
            try:
                dump_generated(out.session.state, dataset, split, v, 8,
                               run_dir / "generated_samples")
            except ValueError as exc:
                log.info("skipping sample dump for view %d: %s", v, exc)
    return run_dir


def run_baseline(dataset: MultiViewDataset, split: PartialSplit, config: TrainConfig
                 ) -> cl.ClusterResult:
    """Mean-impute the missing views, autoencode all samples with the same
    networks and fusion initialization, and run k-means on the fused codes.
    No adversarial training."""
    filled = mean_impute(dataset, split)
    session = new_session(filled, split, config)
    state, cfg = session.state, config
    opt = _adam(list(state.encoder_parameters()) + list(state.generator_parameters()),
                cfg.learning_rate)
    everyone = np.arange(dataset.N)
    for epoch in range(cfg.epochs(1)):
        for b in session.batches(everyone):
            xs = [x[b] for x in session.views]
            recon = [state.generate(v, state.encode(v, x)) for v, x in enumerate(xs)]
            loss = autoencoder_loss(xs, recon)
            opt.zero_grad()
            loss.backward()
            opt.step()
            session.log.add(L_AE=loss.item(), total=loss.item())
        session.log.end_epoch(1, epoch)
    if cfg.fusion_init != "average":
        with torch.no_grad():
            init_projection_pca(state.fusion, [state.encode(v, x) for v, x in enumerate(session.views)],
                                balance_views=cfg.fusion_init == "pca_balanced")
    z = common_representation(state, session.views)
    mu = cl.init_centroids(z, dataset.k, cfg.seed, n_init=cfg.kmeans_n_init)
    q = cl.soft_assign(z, torch.as_tensor(mu, dtype=torch.float32), cfg.alpha)
    return cl.ClusterResult.evaluate(cl.assign_clusters(q), dataset.labels,
                                     ratio=split.impartial_ratio, seed=cfg.seed, mode="baseline")
