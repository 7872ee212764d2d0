"""
PruneGNN — Threshold GNN
Message passing over the pruned interference graph, the negative weighted
sum-rate loss, unsupervised training, timed inference and model files.

Layer l (parameters shared across layers):
    m_v   = [x_v, p_v / P_max]
    a_v   = SUM_{u in N(v)} f_A([m_u, e_uv])
    p_v   = P_max · sigmoid(f_C([a_v, m_v]))
"""

import json
import time
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from config.settings import GNN_CONFIG, MODEL_SCHEMA, MODEL_VERSION, TIMING_CONFIG, TRAINING_CONFIG
from engine.errors import (
    DatasetSchemaError,
    DimensionError,
    StaleModelError,
    TrainingDivergedError,
)
from engine.graph import InterferenceGraph, batch_graphs, build_graph, edge_feature_dim, vertex_feature_dim
from engine.metrics import AllocationResult, evaluate
from engine.neuralnet import Adam, Mlp, Tensor, concat, gather, segment_sum
from engine.stochgeo import ThresholdSpec

LN2 = float(np.log(2.0))


# ══════════════════════════════════════════════
# FEATURE SCALING
# ══════════════════════════════════════════════

@dataclass
class FeatureScaler:
    """Per-column z-score of vertex and edge features, fitted on training graphs."""

    vertex_mean: np.ndarray
    vertex_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    STD_FLOOR = 1e-12

    @classmethod
    def identity(cls, encoding: str) -> "FeatureScaler":
        fv, fe = vertex_feature_dim(encoding), edge_feature_dim(encoding)
        return cls(np.zeros(fv), np.ones(fv), np.zeros(fe), np.ones(fe))

    @classmethod
    def fit(cls, graphs) -> "FeatureScaler":
        vertex = np.vstack([g.vertex_features for g in graphs])
        edge = np.vstack([g.edge_features for g in graphs])
        if edge.shape[0] == 0:
            fe = graphs[0].edge_features.shape[1]
            edge_mean, edge_std = np.zeros(fe), np.ones(fe)
        else:
            edge_mean, edge_std = edge.mean(axis=0), cls._floor(edge.std(axis=0))
        return cls(vertex.mean(axis=0), cls._floor(vertex.std(axis=0)), edge_mean, edge_std)

    @classmethod
    def _floor(cls, std: np.ndarray) -> np.ndarray:
        return np.where(std < cls.STD_FLOOR, 1.0, std)

    def transform(self, g: InterferenceGraph):
        if g.vertex_features.shape[1] != self.vertex_mean.size or g.edge_features.shape[1] != self.edge_mean.size:
            raise StaleModelError(
                f"feature layout ({g.vertex_features.shape[1]}, {g.edge_features.shape[1]}) does not match "
                f"the model's normalization statistics ({self.vertex_mean.size}, {self.edge_mean.size})"
            )
        return (g.vertex_features - self.vertex_mean) / self.vertex_std, (g.edge_features - self.edge_mean) / self.edge_std

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("vertex_mean", "vertex_std", "edge_mean", "edge_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("vertex_mean", "vertex_std", "edge_mean", "edge_std")))


# ══════════════════════════════════════════════
# MODEL
# ══════════════════════════════════════════════

class GnnModel:
    def __init__(
        self,
        encoding: str = GNN_CONFIG["channel_encoding"],
        aggregate_hidden=tuple(GNN_CONFIG["aggregate_hidden"]),
        combine_hidden=tuple(GNN_CONFIG["combine_hidden"]),
        num_layers: int = GNN_CONFIG["num_layers"],
        seed: int = TRAINING_CONFIG["seed"],
        scaler: Optional[FeatureScaler] = None,
    ):
        if num_layers < 1:
            raise DimensionError(f"num_layers must be >= 1, got {num_layers}")
        if list(combine_hidden)[-1] != 1:
            raise DimensionError("f_C must end in a single output")
        self.encoding = encoding
        self.num_layers = int(num_layers)
        self.seed = int(seed)
        self.message_dim = vertex_feature_dim(encoding) + 1
        self.edge_dim = edge_feature_dim(encoding)
        self.f_A = Mlp([self.message_dim + self.edge_dim, *aggregate_hidden], "relu", seed=self.seed)
        self.f_C = Mlp([aggregate_hidden[-1] + self.message_dim, *combine_hidden], "sigmoid", seed=self.seed + 1)
        self.scaler = scaler or FeatureScaler.identity(encoding)
        self.config_hash = ""
        self.trained_spec = ""      # str(ThresholdSpec) set by train()

    def architecture(self) -> dict:
        return {
            "encoding": self.encoding,
            "aggregate_dims": self.f_A.layer_dims,
            "combine_dims": self.f_C.layer_dims,
            "num_layers": self.num_layers,
        }

    def parameters(self) -> list:
        return self.f_A.parameters() + self.f_C.parameters()

    def zero_grad(self):
        self.f_A.zero_grad()
        self.f_C.zero_grad()

    def check_graph(self, g: InterferenceGraph):
        if g.encoding != self.encoding:
            raise StaleModelError(f"graph uses '{g.encoding}' channel encoding, model expects '{self.encoding}'")

    def check_compatible(self, spec: Optional[ThresholdSpec] = None, config_hash: Optional[str] = None):
        """Raise StaleModelError if the model was trained under another pruning rule or config."""
        trained_kind = self.trained_spec.partition(":")[0]
        if spec is not None and trained_kind and trained_kind != spec.kind.value:
            raise StaleModelError(f"model was trained with {self.trained_spec}, asked to run with {spec}")
        if config_hash and self.config_hash and config_hash != self.config_hash:
            raise StaleModelError(f"model config {self.config_hash} does not match {config_hash}")

    def forward(self, g: InterferenceGraph) -> Tensor:
        """Differentiable (V, 1) powers."""
        self.check_graph(g)
        x_np, e_np = self.scaler.transform(g)
        x, e = Tensor(x_np), Tensor(e_np)
        src, dst, v = g.sources, g.targets, g.num_vertices
        p = Tensor(np.full((v, 1), g.p_max))
        for _ in range(self.num_layers):
            m = concat([x, p / g.p_max], axis=1)
            messages = self.f_A(concat([gather(m, src), e], axis=1))
            aggregate = segment_sum(messages, dst, v)
            p = self.f_C(concat([aggregate, m], axis=1)) * g.p_max
        return p

    def __call__(self, g: InterferenceGraph) -> np.ndarray:
        return self.forward(g).data[:, 0]


def gnn_forward(model: GnnModel, g: InterferenceGraph) -> np.ndarray:
    return model(g)


# ══════════════════════════════════════════════
# LOSS
# ══════════════════════════════════════════════

class LossContext:
    """Constant tensors of the sum-rate loss for a batch of instances in vertex order."""

    def __init__(self, nets):
        nets = list(nets) if isinstance(nets, (list, tuple)) else [nets]
        offsets = np.cumsum([0] + [n.num_pairs for n in nets[:-1]])
        src, dst, cross = [], [], []
        for net, off in zip(nets, offsets):
            t = net.num_pairs
            j, v = np.nonzero(~np.eye(t, dtype=bool))
            src.append(j + off)
            dst.append(v + off)
            cross.append(net.gains[j, v])
        self.num_instances = len(nets)
        self.num_vertices = int(sum(n.num_pairs for n in nets))
        self.src = np.concatenate(src).astype(np.int64)
        self.dst = np.concatenate(dst).astype(np.int64)
        self.cross_gain = Tensor(np.concatenate(cross)[:, None])
        self.direct_gain = Tensor(np.concatenate([n.direct_gains for n in nets])[:, None])
        self.weights = Tensor(np.concatenate([n.weights for n in nets])[:, None])
        self.noise = Tensor(np.concatenate([np.full(n.num_pairs, n.noise_power) for n in nets])[:, None])


def sum_rate_loss(powers, nets) -> Tensor:
    """−(1/B) Σ_instances Σ_t w_t log2(1 + SINR_t); `nets` is one instance or a batch."""
    ctx = nets if isinstance(nets, LossContext) else LossContext(nets)
    p = powers if isinstance(powers, Tensor) else Tensor(powers)
    if p.data.ndim == 1:
        p = p.reshape(-1, 1)
    if p.data.shape != (ctx.num_vertices, 1):
        raise DimensionError(f"expected {ctx.num_vertices} powers, got shape {p.data.shape}")
    interference = segment_sum(gather(p, ctx.src) * ctx.cross_gain, ctx.dst, ctx.num_vertices)
    sinr = p * ctx.direct_gain / (interference + ctx.noise)
    rate = (sinr + 1.0).log() / LN2
    return -(ctx.weights * rate).sum() / float(ctx.num_instances)


# ══════════════════════════════════════════════
# TRAINING
# ══════════════════════════════════════════════

def _batches(n: int, size: int, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def train(model: GnnModel, instances, spec: ThresholdSpec, cfg: Optional[dict] = None,
          eval_instances=None, log_path=None, verbose: bool = True):
    """
    Minimize the negative sum rate with Adam over shuffled mini-batches.
    Returns (model, log) where log has columns epoch, loss, eval_sum_rate.
    """
    cfg = {**TRAINING_CONFIG, **(cfg or {})}
    if not instances:
        raise DimensionError("training needs a non-empty dataset")

    graphs = [build_graph(net, spec, model.encoding) for net in instances]
    model.scaler = FeatureScaler.fit(graphs)
    model.trained_spec = str(spec)
    optimizer = Adam(model.parameters(), lr=cfg["learning_rate"], beta1=cfg["beta1"],
                     beta2=cfg["beta2"], eps=cfg["eps"])
    rng = np.random.default_rng(cfg["seed"])
    rows = []

    for epoch in tqdm(range(1, cfg["epochs"] + 1), desc=f"Training {spec}", disable=not verbose):
        total, seen = 0.0, 0
        for idx in _batches(len(instances), cfg["batch_size"], rng):
            batch = batch_graphs([graphs[i] for i in idx])
            loss = sum_rate_loss(model.forward(batch), [instances[i] for i in idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"loss became {loss.data} at epoch {epoch}")
            model.zero_grad()
            loss.backward()
            optimizer.step()
            if not all(np.all(np.isfinite(p.data)) for p in model.parameters()):
                raise TrainingDivergedError(f"parameters became non-finite at epoch {epoch}")
            total += float(loss.data) * len(idx)
            seen += len(idx)

        eval_rate = evaluate_model(model, eval_instances, spec) if eval_instances else float("nan")
        rows.append({"epoch": epoch, "loss": total / seen, "eval_sum_rate": eval_rate})

    log = pd.DataFrame(rows, columns=["epoch", "loss", "eval_sum_rate"])
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(log_path, index=False)
    return model, log


# ══════════════════════════════════════════════
# INFERENCE
# ══════════════════════════════════════════════

def predict_batch(model: GnnModel, nets, spec: ThresholdSpec, batch_size: int = TRAINING_CONFIG["batch_size"]) -> list:
    """Per-instance power vectors, computed over disjoint-union batches."""
    out = []
    for idx in _batches(len(nets), batch_size):
        graphs = [build_graph(nets[i], spec, model.encoding) for i in idx]
        powers = model(batch_graphs(graphs))
        offsets = np.cumsum([0] + [g.num_vertices for g in graphs])
        out.extend(powers[a:b] for a, b in zip(offsets[:-1], offsets[1:]))
    return out


def evaluate_model(model: GnnModel, instances, spec: ThresholdSpec) -> float:
    """Mean weighted sum rate over a set of instances."""
    powers = predict_batch(model, instances, spec)
    return float(np.mean([evaluate(net, p).weighted_sum_rate for net, p in zip(instances, powers)]))


def allocate(model: GnnModel, net, spec: ThresholdSpec, name: str = "gnn") -> AllocationResult:
    start = time.perf_counter()
    g = build_graph(net, spec, model.encoding)
    built = time.perf_counter()
    powers = model(g)
    done = time.perf_counter()
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate,
                            inference_time=done - built, algorithm=name, graph_time=built - start)


def infer_timed(model: GnnModel, net, spec: ThresholdSpec,
                repeats: int = TIMING_CONFIG["repeats"], warmups: int = TIMING_CONFIG["warmups"],
                name: str = "gnn") -> AllocationResult:
    """Median forward time over `repeats` runs after `warmups`; graph build timed separately."""
    forward_times, graph_times = [], []
    powers = None
    for i in range(warmups + repeats):
        start = time.perf_counter()
        g = build_graph(net, spec, model.encoding)
        built = time.perf_counter()
        powers = model(g)
        done = time.perf_counter()
        if i >= warmups:
            graph_times.append(built - start)
            forward_times.append(done - built)
    return AllocationResult(
        powers, evaluate(net, powers).weighted_sum_rate,
        inference_time=float(np.median(forward_times)) if forward_times else 0.0,
        algorithm=name,
        graph_time=float(np.median(graph_times)) if graph_times else 0.0,
    )


@dataclass
class BatchTiming:
    forward_per_instance: float
    graph_per_instance: float
    batch_size: int
    num_instances: int
    edges_per_instance: float
    repeats: int
    warmups: int


def timing_batch_size(edges_per_instance: float, max_batch: int = TIMING_CONFIG["max_batch"],
                      edge_budget: int = TIMING_CONFIG["edge_budget"]) -> int:
    return int(max(1, min(max_batch, edge_budget // max(1, int(edges_per_instance)))))


def infer_timed_batch(model: GnnModel, nets, spec: ThresholdSpec,
                      repeats: int = TIMING_CONFIG["repeats"], warmups: int = TIMING_CONFIG["warmups"],
                      max_batch: int = TIMING_CONFIG["max_batch"],
                      edge_budget: int = TIMING_CONFIG["edge_budget"]) -> BatchTiming:
    """
    Forward time per instance with instances packed into disjoint-union batches
    sized so that each batch stays under `edge_budget` edges.
    """
    start = time.perf_counter()
    graphs = [build_graph(net, spec, model.encoding) for net in nets]
    graph_time = (time.perf_counter() - start) / len(nets)

    edges = float(np.mean([g.num_edges for g in graphs]))
    size = timing_batch_size(edges, max_batch, edge_budget)
    batches = [batch_graphs([graphs[i] for i in idx]) for idx in _batches(len(graphs), size)]

    times = []
    for i in range(warmups + repeats):
        start = time.perf_counter()
        for b in batches:
            model(b)
        elapsed = time.perf_counter() - start
        if i >= warmups:
            times.append(elapsed / len(nets))
    return BatchTiming(float(np.median(times)), graph_time, size, len(nets), edges, repeats, warmups)


# ══════════════════════════════════════════════
# MODEL FILES
# ══════════════════════════════════════════════

def save_model(model: GnnModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        **model.architecture(),
        "seed": model.seed,
        "config_hash": model.config_hash,
        "trained_spec": model.trained_spec,
        "scaler": model.scaler.to_dict(),
    }
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header)),
                 f_A=model.f_A.flat_parameters(), f_C=model.f_C.flat_parameters())
    return path


def load_model(path, spec: Optional[ThresholdSpec] = None, config_hash: Optional[str] = None) -> GnnModel:
    """Read a model file; with `spec` or `config_hash` given, refuse a model trained for something else."""
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            flat_a, flat_c = data["f_A"], data["f_C"]
    except (KeyError, ValueError, OSError, zipfile.BadZipFile) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise DatasetSchemaError(f"{path}: not a readable model file ({e})") from e
    if header.get("schema") != MODEL_SCHEMA or header.get("version") != MODEL_VERSION:
        raise DatasetSchemaError(f"{path}: unsupported model schema {header.get('schema')} v{header.get('version')}")

    model = GnnModel(
        encoding=header["encoding"],
        aggregate_hidden=header["aggregate_dims"][1:],
        combine_hidden=header["combine_dims"][1:],
        num_layers=header["num_layers"],
        seed=header["seed"],
        scaler=FeatureScaler.from_dict(header["scaler"]),
    )
    if model.f_A.layer_dims != header["aggregate_dims"] or model.f_C.layer_dims != header["combine_dims"]:
        raise StaleModelError(f"{path}: stored layer dims do not match the '{header['encoding']}' feature layout")
    try:
        model.f_A.load_flat_parameters(flat_a)
        model.f_C.load_flat_parameters(flat_c)
    except DimensionError as e:
        raise StaleModelError(f"{path}: {e}") from e
    model.config_hash = header.get("config_hash", "")
    model.trained_spec = header.get("trained_spec", "")
    model.check_compatible(spec, config_hash)
    return model
