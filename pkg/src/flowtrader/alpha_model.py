"""Multi-horizon alpha regression: an MLP from OFI vectors to six alphas.

Training follows the usual supervised recipe: standardize features with
training-split statistics, minimize MSE plus an L2 weight penalty with
Adam, validate once per epoch, and keep the parameters from the best
validation epoch (early stopping on a patience counter).  Evaluation
reports per-horizon out-of-sample R^2 against a constant benchmark:

    R2_OS,h = 100 * (1 - MSE_model,h / MSE_benchmark,h)

where the benchmark always predicts the supplied per-horizon mean.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .errors import DivergenceError
from .labeling import DatasetSplit, LabeledExample
from .nets import Adam, Mlp, mse_loss
from .store import read_blob, write_blob

N_FEATURES = 10
N_HORIZONS = 6

GRID_WIDTHS = (512, 1024, 2048)
GRID_LEARNING_RATES = (1e-5, 1e-4)
GRID_PATIENCES = (5, 10)
GRID_BATCH_SIZES = (128, 256, 512)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: 10 inputs, rectifier hiddens, 6 identity outputs."""

    hidden_layers: tuple = (2048, 2048, 2048, 2048)
    input_dim: int = N_FEATURES
    output_dim: int = N_HORIZONS

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim != N_FEATURES or self.output_dim != N_HORIZONS:
            raise ValueError(
                f"alpha models map {N_FEATURES} features to {N_HORIZONS} horizons"
            )
        if len(self.hidden_layers) < 1 or any(w <= 0 for w in self.hidden_layers):
            raise ValueError(f"hidden layers must all be positive, got {self.hidden_layers}")

    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 256
    patience: int = 5
    max_epochs: int = 100
    l2_lambda: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate and batch_size must be positive")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


@dataclass
class TrainSummary:
    epochs_run: int
    best_epoch: int
    train_mse: float  # epoch-mean batch loss at the best epoch (includes L2 term)
    val_mse: float  # best validation MSE (data term only)
    train_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


@dataclass
class AlphaModel:
    spec: MlpSpec
    net: Mlp
    norm_mean: np.ndarray
    norm_std: np.ndarray
    summary: TrainSummary | None = None


@dataclass
class EvalReport:
    """Per-horizon test metrics plus their cross-horizon averages."""

    rmse: np.ndarray
    label_std: np.ndarray
    r2_os_pct: np.ndarray
    avg_rmse: float
    avg_label_std: float
    avg_r2_os_pct: float
    n_examples: int


class EarlyStopper:
    """Counts consecutive non-improving epochs; stops at `patience` of them."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, val_mse: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop) for this epoch's validation MSE."""
        if val_mse < self.best:
            self.best = val_mse
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


def init_model(spec: MlpSpec, seed: int) -> AlphaModel:
    """Fresh model with pass-through normalization."""
    return AlphaModel(
        spec=spec,
        net=Mlp.init(spec.dims(), seed=seed, output="identity"),
        norm_mean=np.zeros(N_FEATURES),
        norm_std=np.ones(N_FEATURES),
    )


def _safe_std(std: np.ndarray) -> np.ndarray:
    # zero-variance features pass through unscaled
    return np.where(std == 0.0, 1.0, std)


def forward(model: AlphaModel, x) -> np.ndarray:
    """Predict alphas (price units) for one OFI vector or an (N, 10) batch."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != N_FEATURES or arr.ndim not in (1, 2):
        raise ValueError(f"expected (10,) or (N, 10) OFI input, got shape {arr.shape}")
    normed = (arr - model.norm_mean) / _safe_std(model.norm_std)
    return model.net.forward(normed)


def _stack(examples: list[LabeledExample]):
    x = np.array([e.features for e in examples])
    y = np.array([e.label for e in examples])
    return x, y


def train(split: DatasetSplit, spec: MlpSpec, cfg: TrainConfig) -> AlphaModel:
    """Train on the split's train slice, early-stop on its validation slice.

    Batches are taken in chronological order without shuffling, so a fixed
    (data, spec, config) triple always yields bit-identical parameters.
    Returns the model holding the best-validation-epoch snapshot.
    """
    if not split.train or not split.validation:
        raise ValueError("train and validation slices must be non-empty")
    x_train, y_train = _stack(split.train)
    x_val, y_val = _stack(split.validation)

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    xn_train = (x_train - mean) / _safe_std(std)
    xn_val = (x_val - mean) / _safe_std(std)

    net = Mlp.init(spec.dims(), seed=cfg.seed, output="identity")
    adam = Adam(cfg.learning_rate)
    stopper = EarlyStopper(cfg.patience)
    best_net = net.copy()
    best_epoch = 0
    train_history: list[float] = []
    val_history: list[float] = []

    n = xn_train.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            xb = xn_train[start : start + cfg.batch_size]
            yb = y_train[start : start + cfg.batch_size]
            loss, grads = mse_loss(net, xb, yb, cfg.l2_lambda)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            adam.step(net.params(), grads)
            batch_losses.append(loss)
        train_history.append(float(np.mean(batch_losses)))

        val_pred = net.forward(xn_val)
        val_mse = float(np.mean((val_pred - y_val) ** 2))
        if not np.isfinite(val_mse):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        val_history.append(val_mse)

        improved, should_stop = stopper.update(val_mse)
        if improved:
            best_net = net.copy()
            best_epoch = epoch
        if should_stop:
            break

    summary = TrainSummary(
        epochs_run=len(val_history),
        best_epoch=best_epoch,
        train_mse=train_history[best_epoch - 1],
        val_mse=val_history[best_epoch - 1],
        train_history=train_history,
        val_history=val_history,
    )
    return AlphaModel(spec=spec, net=best_net, norm_mean=mean, norm_std=std, summary=summary)


def r2_out_of_sample(predictions, labels, benchmark_mean) -> np.ndarray:
    """Per-horizon R2_OS in percent against a constant-mean benchmark."""
    pred = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    bench = np.asarray(benchmark_mean, dtype=np.float64)
    mse_model = np.mean((pred - y) ** 2, axis=0)
    mse_bench = np.mean((bench - y) ** 2, axis=0)
    if np.any(mse_bench == 0.0):
        flat = np.nonzero(mse_bench == 0.0)[0]
        raise ValueError(
            f"benchmark MSE is zero at horizon(s) {', '.join(str(h + 1) for h in flat)}; "
            "R2 against it is undefined"
        )
    return 100.0 * (1.0 - mse_model / mse_bench)


def evaluate(model: AlphaModel, test: list[LabeledExample], benchmark_mean) -> EvalReport:
    """Score a model on held-out examples against the constant benchmark."""
    if not test:
        raise ValueError("test slice must be non-empty")
    x, y = _stack(test)
    pred = forward(model, x)
    r2 = r2_out_of_sample(pred, y, benchmark_mean)
    rmse = np.sqrt(np.mean((pred - y) ** 2, axis=0))
    label_std = y.std(axis=0)
    return EvalReport(
        rmse=rmse,
        label_std=label_std,
        r2_os_pct=r2,
        avg_rmse=float(rmse.mean()),
        avg_label_std=float(label_std.mean()),
        avg_r2_os_pct=float(r2.mean()),
        n_examples=len(test),
    )


def benchmark_mean_of(examples: list[LabeledExample]) -> np.ndarray:
    """Per-horizon label mean, the constant benchmark's prediction."""
    if not examples:
        raise ValueError("need at least one example")
    return np.array([e.label for e in examples]).mean(axis=0)


def tuning_grid(base: TrainConfig) -> list[tuple[MlpSpec, TrainConfig]]:
    """The 36-cell tuning grid: three widths (four layers deep) crossed with
    two learning rates, two patience values, and three batch sizes, in that
    nesting order."""
    cells = []
    for width, lr, patience, batch in product(
        GRID_WIDTHS, GRID_LEARNING_RATES, GRID_PATIENCES, GRID_BATCH_SIZES
    ):
        spec = MlpSpec(hidden_layers=(width,) * 4)
        cfg = TrainConfig(
            learning_rate=lr,
            batch_size=batch,
            patience=patience,
            max_epochs=base.max_epochs,
            l2_lambda=base.l2_lambda,
            seed=base.seed,
        )
        cells.append((spec, cfg))
    return cells


@dataclass
class GridSearchResult:
    rows: list[dict]
    best_index: int
    best_model: AlphaModel


def grid_search(split: DatasetSplit, grid, jobs: int = 1) -> GridSearchResult:
    """Train every cell, rank by best validation MSE, first cell wins ties.

    Diverged cells are recorded with status 'diverged' and skipped for the
    ranking.  Cells are independent, so `jobs` > 1 runs them on a thread
    pool without changing any result.
    """
    if not grid:
        raise ValueError("grid must contain at least one cell")

    def run_cell(cell):
        spec, cfg = cell
        try:
            model = train(split, spec, cfg)
        except DivergenceError as exc:
            return None, str(exc)
        return model, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, grid))
    else:
        outcomes = [run_cell(cell) for cell in grid]

    rows = []
    best_index = -1
    best_model = None
    best_val = np.inf
    for i, ((spec, cfg), (model, error)) in enumerate(zip(grid, outcomes)):
        row = {
            "hidden_layers": "x".join(str(w) for w in spec.hidden_layers),
            "learning_rate": cfg.learning_rate,
            "patience": cfg.patience,
            "batch_size": cfg.batch_size,
            "status": "ok" if model is not None else "diverged",
            "val_mse": model.summary.val_mse if model is not None else None,
            "epochs_run": model.summary.epochs_run if model is not None else None,
        }
        rows.append(row)
        if model is not None and model.summary.val_mse < best_val:
            best_val = model.summary.val_mse
            best_index = i
            best_model = model
    if best_model is None:
        raise DivergenceError("every grid cell diverged")
    return GridSearchResult(rows=rows, best_index=best_index, best_model=best_model)


MODEL_KIND = "alpha-model"


def save_model(path, model: AlphaModel) -> None:
    """Write the self-describing model file; round-trips bit-exactly."""
    meta = {
        "spec": {"hidden_layers": list(model.spec.hidden_layers)},
        "summary": asdict(model.summary) if model.summary is not None else None,
    }
    arrays = {"norm_mean": model.norm_mean, "norm_std": model.norm_std}
    for l, (w, b) in enumerate(zip(model.net.weights, model.net.biases)):
        arrays[f"w{l}"] = w
        arrays[f"b{l}"] = b
    write_blob(path, MODEL_KIND, meta, arrays)


def load_model(path) -> AlphaModel:
    _, meta, arrays = read_blob(path, expect_kind=MODEL_KIND)
    spec = MlpSpec(hidden_layers=tuple(meta["spec"]["hidden_layers"]))
    dims = spec.dims()
    net = Mlp(
        dims=dims,
        output="identity",
        weights=[arrays[f"w{l}"] for l in range(len(dims) - 1)],
        biases=[arrays[f"b{l}"] for l in range(len(dims) - 1)],
    )
    summary = TrainSummary(**meta["summary"]) if meta["summary"] is not None else None
    return AlphaModel(
        spec=spec,
        net=net,
        norm_mean=arrays["norm_mean"],
        norm_std=arrays["norm_std"],
        summary=summary,
    )
