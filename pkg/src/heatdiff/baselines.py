"""Per-pixel tabular regressors implemented from scratch.

All models consume z-score-standardized features (statistics frozen from the
training set).  Trees search splits over 32 per-feature quantile candidates
with vectorized histogram scans; the forest uses bootstrap rows and
ceil(sqrt(n_features)) candidate features per node, boosting fits
least-squares residuals with shrinkage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataprep import TabularSet
from .errors import ConfigError, StateError
from .grids import Raster, SceneSample
from .nn import Adam
from .nn.autodiff import Tensor, linear, mse_loss, silu

N_SPLIT_BINS = 32
RIDGE_ALPHA = 0.1
FOREST_TREES = 100
FOREST_DEPTH = 10
GBDT_STAGES = 100
GBDT_DEPTH = 10
GBDT_SHRINKAGE = 0.1
MLP_LAYERS = (64, 128, 64)
MLP_LR = 1e-3
MLP_EPOCHS = 200
MLP_BATCH = 256

BASELINE_KINDS = ("ridge_linear", "mlp", "random_forest", "gbdt")


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.where(std > 0, std, 1.0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float64)


class _Tree:
    """CART regression tree over pre-binned features (flat array layout)."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def fit(self, bins: np.ndarray, edges: list[np.ndarray], y: np.ndarray,
            max_depth: int, n_candidates: int, rng: np.random.Generator,
            min_leaf: int = 2) -> None:
        n_features = bins.shape[1]
        root = self._new_node()
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            yv = y[idx]
            self.value[node] = float(yv.mean())
            if depth >= max_depth or len(idx) < 2 * min_leaf or np.ptp(yv) == 0.0:
                continue
            if n_candidates < n_features:
                feats = np.sort(rng.choice(n_features, n_candidates, replace=False))
            else:
                feats = np.arange(n_features)
            best = (0.0, -1, -1)  # (gain proxy, feature, bin)
            total_sum = yv.sum()
            n = len(idx)
            base = total_sum * total_sum / n
            for f in feats:
                b = bins[idx, f]
                counts = np.bincount(b, minlength=N_SPLIT_BINS).astype(np.float64)
                sums = np.bincount(b, weights=yv, minlength=N_SPLIT_BINS)
                c_left = np.cumsum(counts)[:-1]
                s_left = np.cumsum(sums)[:-1]
                c_right = n - c_left
                ok = (c_left >= min_leaf) & (c_right >= min_leaf)
                if not ok.any():
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    score = s_left**2 / c_left + (total_sum - s_left) ** 2 / c_right
                score = np.where(ok, score, -np.inf)
                k = int(np.argmax(score))
                gain = score[k] - base
                if gain > best[0] + 1e-12:
                    best = (gain, int(f), k)
            if best[1] < 0:
                continue
            _, f, k = best
            mask = bins[idx, f] <= k
            left_idx, right_idx = idx[mask], idx[~mask]
            if len(left_idx) == 0 or len(right_idx) == 0:
                continue
            self.feature[node] = f
            self.threshold[node] = float(edges[f][k])
            left = self._new_node()
            right = self._new_node()
            self.left[node] = left
            self.right[node] = right
            stack.append((right, right_idx, depth + 1))
            stack.append((left, left_idx, depth + 1))

    def predict(self, x: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        value = np.asarray(self.value)
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            internal = feature[node] >= 0
            if not internal.any():
                break
            idx = np.flatnonzero(internal)
            f = feature[node[idx]]
            goes_left = x[idx, f] <= threshold[node[idx]]
            node[idx] = np.where(goes_left, left[node[idx]], right[node[idx]])
        return value[node]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "feature": np.asarray(self.feature, dtype=np.int32),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int32),
            "right": np.asarray(self.right, dtype=np.int32),
            "value": np.asarray(self.value, dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "_Tree":
        t = cls()
        t.feature = arrays["feature"].tolist()
        t.threshold = arrays["threshold"].tolist()
        t.left = arrays["left"].tolist()
        t.right = arrays["right"].tolist()
        t.value = arrays["value"].tolist()
        return t


def quantile_bins(x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Per-feature bin codes (uint8) and the candidate split edges."""
    n, f = x.shape
    qs = np.arange(1, N_SPLIT_BINS) / N_SPLIT_BINS
    bins = np.empty((n, f), dtype=np.uint8)
    edges = []
    for j in range(f):
        e = np.unique(np.quantile(x[:, j], qs))
        edges.append(e)
        bins[:, j] = np.searchsorted(e, x[:, j], side="left").astype(np.uint8)
    return bins, edges


@dataclass
class BaselineModel:
    """One of the four tabular regressors; ``fit`` before ``predict``."""

    kind: str
    alpha: float = RIDGE_ALPHA
    n_trees: int = FOREST_TREES
    max_depth: int = FOREST_DEPTH
    n_stages: int = GBDT_STAGES
    shrinkage: float = GBDT_SHRINKAGE
    layers: tuple[int, ...] = MLP_LAYERS
    lr: float = MLP_LR
    epochs: int = MLP_EPOCHS
    batch_size: int = MLP_BATCH
    fitted: bool = False
    scaler: Standardizer | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {self.kind!r}; expected one of {BASELINE_KINDS}")
        for name in ("alpha", "n_trees", "max_depth", "n_stages", "shrinkage", "lr", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def fit(model: BaselineModel, data: TabularSet, seed: int = 0) -> BaselineModel:
    """Fit in place and return the model; deterministic given the seed."""
    if data.n_rows == 0:
        raise ConfigError("cannot fit a baseline on an empty table")
    x_raw = data.features.astype(np.float64)
    y = data.targets.astype(np.float64)
    model.scaler = Standardizer.fit(x_raw)
    x = model.scaler.apply(x_raw)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 300]))

    if model.kind == "ridge_linear":
        _fit_ridge(model, x, y)
    elif model.kind == "mlp":
        _fit_mlp(model, x, y, seed)
    elif model.kind == "random_forest":
        _fit_forest(model, x, y, rng)
    else:
        _fit_gbdt(model, x, y, rng)
    model.fitted = True
    return model


def _fit_ridge(model: BaselineModel, x: np.ndarray, y: np.ndarray) -> None:
    n, f = x.shape
    y_mean = y.mean()
    gram = x.T @ x + model.alpha * np.eye(f)
    coef = np.linalg.solve(gram, x.T @ (y - y_mean))
    model.params = {"coef": coef, "intercept": np.array([y_mean])}


def _fit_mlp(model: BaselineModel, x: np.ndarray, y: np.ndarray, seed: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 301]))
    y_mean, y_std = y.mean(), max(y.std(), 1e-9)
    yn = (y - y_mean) / y_std
    sizes = (x.shape[1], *model.layers, 1)
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = Tensor(rng.normal(0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)).astype(np.float32),
                   requires_grad=True)
        b = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True)
        weights.append((w, b))
    params = {f"l{i}.{n}": t for i, (w, b) in enumerate(weights) for n, t in (("w", w), ("b", b))}
    opt = Adam(params, lr=model.lr)

    def forward(batch: np.ndarray) -> Tensor:
        h = Tensor(batch.astype(np.float32))
        for i, (w, b) in enumerate(weights):
            h = linear(h, w, b)
            if i < len(weights) - 1:
                h = silu(h)
        return h

    n = len(yn)
    for _ in range(model.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, model.batch_size):
            idx = order[lo : lo + model.batch_size]
            opt.zero_grad()
            out = forward(x[idx])
            loss = mse_loss(out, yn[idx].astype(np.float32)[:, None])
            loss.backward()
            opt.step()
    model.params = {
        "y_mean": np.array([y_mean]),
        "y_std": np.array([y_std]),
        **{name: t.data for name, t in params.items()},
    }


def _fit_forest(model: BaselineModel, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> None:
    bins, edges = quantile_bins(x)
    n = len(y)
    n_candidates = int(np.ceil(np.sqrt(x.shape[1])))
    trees = []
    for _ in range(model.n_trees):
        rows = rng.integers(0, n, size=n)
        tree = _Tree()
        tree.fit(bins[rows], edges, y[rows], model.max_depth, n_candidates, rng)
        trees.append(tree)
    model.params = {"trees": trees}


def _fit_gbdt(model: BaselineModel, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> None:
    bins, edges = quantile_bins(x)
    base = float(y.mean())
    residual = y - base
    trees = []
    train_losses = []
    for _ in range(model.n_stages):
        tree = _Tree()
        tree.fit(bins, edges, residual, model.max_depth, x.shape[1], rng)
        pred = tree.predict(x)
        residual = residual - model.shrinkage * pred
        trees.append(tree)
        train_losses.append(float((residual**2).mean()))
    model.params = {"trees": trees, "base": np.array([base]), "train_losses": np.array(train_losses)}


def predict(model: BaselineModel, data: TabularSet) -> np.ndarray:
    """Per-row temperature predictions in degC."""
    if not model.fitted:
        raise StateError(f"baseline {model.kind} used before fit")
    x = model.scaler.apply(data.features.astype(np.float64))
    if model.kind == "ridge_linear":
        return x @ model.params["coef"] + model.params["intercept"][0]
    if model.kind == "mlp":
        h = x
        i = 0
        while f"l{i}.w" in model.params:
            h = h @ model.params[f"l{i}.w"] + model.params[f"l{i}.b"]
            if f"l{i+1}.w" in model.params:
                h = h * (1.0 / (1.0 + np.exp(-h)))
            i += 1
        return h[:, 0] * model.params["y_std"][0] + model.params["y_mean"][0]
    if model.kind == "random_forest":
        preds = np.stack([t.predict(x) for t in model.params["trees"]])
        return preds.mean(axis=0)
    acc = np.full(len(x), model.params["base"][0])
    for t in model.params["trees"]:
        acc += model.shrinkage * t.predict(x)
    return acc


def predictions_to_rasters(
    data: TabularSet, preds: np.ndarray, scenes: list[SceneSample]
) -> list[Raster]:
    """Reassemble per-row predictions into per-scene rasters via provenance."""
    out = []
    for i, s in enumerate(scenes):
        h, w = s.ta.height, s.ta.width
        vals = np.zeros((h * w,), dtype=np.float32)
        mask = np.zeros((h * w,), dtype=bool)
        rows = data.scene_index == i
        vals[data.pixel_index[rows]] = preds[rows]
        mask[data.pixel_index[rows]] = True
        out.append(Raster(vals.reshape(h, w, 1), s.ta.gsd, mask.reshape(h, w)))
    return out


def save_baseline(model: BaselineModel, path: str | Path) -> None:
    """Named-parameter archive (numpy .npz with a JSON config entry)."""
    if not model.fitted:
        raise StateError("cannot save an unfitted baseline")
    arrays: dict[str, np.ndarray] = {}
    config = {
        "kind": model.kind,
        "alpha": model.alpha,
        "n_trees": model.n_trees,
        "max_depth": model.max_depth,
        "n_stages": model.n_stages,
        "shrinkage": model.shrinkage,
        "layers": list(model.layers),
        "lr": model.lr,
        "epochs": model.epochs,
        "batch_size": model.batch_size,
    }
    arrays["scaler_mean"] = model.scaler.mean
    arrays["scaler_std"] = model.scaler.std
    for name, val in model.params.items():
        if name == "trees":
            for i, tree in enumerate(val):
                for aname, arr in tree.to_arrays().items():
                    arrays[f"tree{i}_{aname}"] = arr
            arrays["n_saved_trees"] = np.array([len(val)])
        else:
            arrays[name] = np.asarray(val)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __config__=np.frombuffer(json.dumps(config).encode(), dtype=np.uint8), **arrays)


def load_baseline(path: str | Path) -> BaselineModel:
    with np.load(path) as npz:
        config = json.loads(bytes(npz["__config__"].tobytes()).decode())
        model = BaselineModel(
            kind=config["kind"],
            alpha=config["alpha"],
            n_trees=config["n_trees"],
            max_depth=config["max_depth"],
            n_stages=config["n_stages"],
            shrinkage=config["shrinkage"],
            layers=tuple(config["layers"]),
            lr=config["lr"],
            epochs=config["epochs"],
            batch_size=config["batch_size"],
        )
        model.scaler = Standardizer(mean=npz["scaler_mean"], std=npz["scaler_std"])
        params: dict = {}
        if "n_saved_trees" in npz:
            trees = []
            for i in range(int(npz["n_saved_trees"][0])):
                trees.append(
                    _Tree.from_arrays({n: npz[f"tree{i}_{n}"] for n in ("feature", "threshold", "left", "right", "value")})
                )
            params["trees"] = trees
        for key in npz.files:
            if key.startswith(("tree", "__config__", "scaler_", "n_saved_trees")):
                continue
            params[key] = npz[key]
        model.params = params
        model.fitted = True
    return model
