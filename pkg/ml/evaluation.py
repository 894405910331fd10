"""
Evaluation drivers: method comparison, fake/real error decomposition,
measurement-size sweeps and restoration-task coverage.

Every driver works per image (parallel over images with joblib threads,
seeded per image index) and aggregates single-threaded into pandas frames,
so numbers do not depend on the worker count.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ml.began import sample_latent
from ml.exceptions import ConfigError, ContractError, DimensionError
from ml.lasso_baseline import LassoConfig, build_dct_dictionary, lasso_reconstruct
from ml.nn import Network, forward
from ml.solver import SolveConfig, gaussian_sensing_matrix, sense, solve_ga, solve_ge
from ml.tensor import Tensor, mse
from utils.charts import save_comparison_grid, save_line_chart
from utils.config import config_hash, from_section
from utils.image_data import ImageSet
from utils.imaging_ops import (AdjustmentOp, adjustment_for, degradation_for, degrade, precondition,
                               rect_mask)

logger = logging.getLogger(__name__)

METHODS = ("lasso", "ga", "ge0", "ge1")
GE_METHODS = ("ge0", "ge1")
REPORT_COLUMNS = ["image_id", "method", "m", "mse", "wall_ms"]


def image_mse(a, b) -> float:
    """Mean squared pixel difference in [-1, 1] units."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.size != b.size:
        raise DimensionError(f"image_mse: {a.shape} vs {b.shape}")
    return mse(Tensor.wrap(a.data.reshape(-1)), Tensor.wrap(b.data.reshape(-1))).item()


def measurement_rate(m: int, image_shape: Sequence[int]) -> float:
    return m / float(np.prod(image_shape))


@dataclass
class EvalConfig:
    n_test: int = 20
    n_fake: int = 20
    methods: List[str] = field(default_factory=lambda: ["lasso", "ga", "ge1"])
    budgets: Dict[str, int] = field(default_factory=lambda: {"lasso": 32, "ga": 8, "ge0": 16, "ge1": 8})
    sweep_budgets: List[int] = field(default_factory=lambda: [4, 8, 16])
    tasks: List[str] = field(default_factory=lambda: ["denoise", "deblur", "superres", "inpaint"])
    sigma: float = 0.4
    blur_sigma: float = 1.0
    blur_size: int = 5
    factor: int = 4
    mask_rect: List[int] = field(default_factory=lambda: [5, 5, 7, 7])
    overcomplete: int = 2
    seed: int = 0
    jobs: int = 1
    solve: SolveConfig = field(default_factory=SolveConfig)
    lasso: LassoConfig = field(default_factory=LassoConfig)

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown} (choose from {', '.join(METHODS)})")
        if self.n_test < 1:
            raise ConfigError(f"n_test must be >= 1, got {self.n_test}")

    @classmethod
    def from_config(cls, config: Dict) -> "EvalConfig":
        runtime = config.get("runtime", {})
        out = from_section(cls, {**config.get("eval", {}), "seed": runtime.get("seed", 0),
                                 "jobs": runtime.get("jobs", 1),
                                 "overcomplete": config.get("lasso", {}).get("overcomplete", 2)})
        out.solve = SolveConfig.from_dict({**config.get("solver", {}), "seed": runtime.get("seed", 0)})
        out.lasso = LassoConfig.from_dict(config.get("lasso", {}))
        return out


@dataclass
class EvalReport:
    """Per-image rows plus the config hash they were produced under."""

    rows: pd.DataFrame
    config_hash: str = ""
    image_shape: Optional[Sequence[int]] = None
    extra: Dict = field(default_factory=dict)

    def summary(self) -> pd.DataFrame:
        grouped = self.rows.groupby("method", sort=False)
        out = grouped.agg(
            m=("m", "first"),
            n=("mse", "size"),
            median=("mse", "median"),
            mean=("mse", "mean"),
            std=("mse", lambda s: float(np.std(s.to_numpy()))),
        ).reset_index()
        if self.image_shape is not None:
            out["rho"] = [measurement_rate(int(m), self.image_shape) for m in out["m"]]
        return out

    def median(self, method: str) -> float:
        return float(self.rows.loc[self.rows["method"] == method, "mse"].median())

    def timings(self) -> Dict[str, float]:
        return {k: float(v) for k, v in self.rows.groupby("method", sort=False)["wall_ms"].sum().items()}

    def save(self, outdir: str, prefix: str = "") -> Dict[str, str]:
        """per_image.csv and summary.csv (no wall times, so reruns are byte-identical) plus report.json."""
        os.makedirs(outdir, exist_ok=True)
        paths = {
            "per_image": os.path.join(outdir, f"{prefix}per_image.csv"),
            "summary": os.path.join(outdir, f"{prefix}summary.csv"),
            "report": os.path.join(outdir, f"{prefix}report.json"),
        }
        self.rows.drop(columns=["wall_ms"], errors="ignore").to_csv(paths["per_image"], index=False)
        summary = self.summary()
        summary.to_csv(paths["summary"], index=False)
        with open(paths["report"], "w", encoding="utf-8") as f:
            json.dump({"config_hash": self.config_hash, "summary": summary.to_dict(orient="records"),
                       **self.extra}, f, indent=2, sort_keys=True)
        return paths


@dataclass
class Models:
    """Frozen networks available to the evaluation drivers."""

    generator: Optional[Network] = None
    encoders: Dict[str, Network] = field(default_factory=dict)


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, 1000.0 * (time.perf_counter() - start)


def _solve_config(base: SolveConfig, seed: int) -> SolveConfig:
    return SolveConfig(lam=base.lam, iterations=base.iterations, restarts=base.restarts,
                       learning_rate=base.learning_rate, seed=seed, jobs=1)


def _reconstruct(method: str, x: Tensor, index: int, budget: int, models: Models, config: EvalConfig,
                 sensing: Optional[Tensor], dictionary) -> Tensor:
    seed = config.seed + index
    if method == "lasso":
        x_hat, _ = lasso_reconstruct(x, budget, dictionary, config.lasso, seed)
        return x_hat
    if method == "ga":
        return solve_ga(sense(sensing, x), sensing, models.generator, _solve_config(config.solve, seed)).x_hat
    EN = models.encoders[method]
    return solve_ge(forward(EN, x), EN, models.generator, AdjustmentOp("identity"),
                    _solve_config(config.solve, seed)).x_hat


def _method_budget(method: str, models: Models, budgets: Dict[str, int]) -> int:
    if method in GE_METHODS:
        return int(models.encoders[method].spec.output_shape[0])
    if method not in budgets:
        raise ConfigError(f"no measurement budget configured for '{method}'")
    return int(budgets[method])


def compare_methods(test_set: ImageSet, methods: Sequence[str], budgets: Dict[str, int], models: Models,
                    config: EvalConfig, outdir: Optional[str] = None) -> EvalReport:
    """Run every method on every test image at its measurement budget."""
    if len(test_set) == 0:
        raise ContractError("comparison needs at least one test image")
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method '{method}'")
        if method != "lasso" and models.generator is None:
            raise ConfigError(f"method '{method}' needs a generator checkpoint")
        if method in GE_METHODS and method not in models.encoders:
            raise ConfigError(f"method '{method}' needs an encoder checkpoint")

    image_shape = test_set.image_shape
    n = int(np.prod(image_shape))
    plan = [(method, _method_budget(method, models, budgets)) for method in methods]
    sensing = {m: gaussian_sensing_matrix(b, n, config.seed) for m, b in plan if m == "ga"}
    dictionary = None
    if "lasso" in methods:
        dictionary = build_dct_dictionary(image_shape[1], image_shape[2], config.overcomplete, image_shape[0])

    def _one(i: int):
        x = test_set[i]
        out = []
        for method, budget in plan:
            x_hat, ms = _timed(_reconstruct, method, x, i, budget, models, config, sensing.get(method), dictionary)
            out.append(({"image_id": i, "method": method, "m": budget, "mse": image_mse(x_hat, x),
                         "wall_ms": ms}, x_hat.data))
        return out

    results = Parallel(n_jobs=config.jobs, prefer="threads")(delayed(_one)(i) for i in range(len(test_set)))
    rows = pd.DataFrame([row for per_image in results for row, _ in per_image], columns=REPORT_COLUMNS)
    report = EvalReport(rows, config_hash(_hash_view(config)), image_shape,
                        {"seed": config.seed, "methods": list(methods)})

    for _, r in report.summary().iterrows():
        logger.info(f"{r['method']}: m={r['m']} median mse={r['median']:.5f} mean={r['mean']:.5f} std={r['std']:.5f}")
    if outdir:
        grid = {"original": test_set.images}
        for j, (method, _) in enumerate(plan):
            grid[method] = np.stack([per_image[j][1] for per_image in results])
        save_comparison_grid(grid, os.path.join(outdir, "comparison.png"))
    return report


def _hash_view(config: EvalConfig) -> Dict:
    view = {k: v for k, v in config.__dict__.items() if k not in ("solve", "lasso", "jobs")}
    view["solve"] = config.solve.to_dict()
    view["lasso"] = dict(config.lasso.__dict__)
    return view


class Decomposition(NamedTuple):
    fake_mse: float
    real_mse: float
    ratio: float
    report: EvalReport


def error_decomposition(G: Network, EN: Network, solve_config: SolveConfig, real_test: ImageSet,
                        n_fake: int, seed: int, jobs: int = 1) -> Decomposition:
    """Median GE recovery error on in-range targets G(z0) versus real held-out targets."""
    if n_fake < 1:
        raise ContractError(f"error decomposition needs n_fake >= 1, got {n_fake}")
    if len(real_test) == 0:
        raise ContractError("error decomposition needs real test images")
    target_hash = G.parameter_hash()
    fakes = forward(G, sample_latent(n_fake, G.spec.input_shape[0], np.random.default_rng(seed))).data
    identity = AdjustmentOp("identity")

    def _recover(kind: str, i: int, x: Tensor):
        if G.parameter_hash() != target_hash:
            raise ContractError("generator changed between target construction and solving")
        cfg = _solve_config(solve_config, seed + i)
        result, ms = _timed(solve_ge, forward(EN, x), EN, G, identity, cfg)
        return {"image_id": i, "method": kind, "m": EN.spec.output_shape[0],
                "mse": image_mse(result.x_hat, x), "wall_ms": ms}

    jobs_list = [("fake", i, Tensor.wrap(fakes[i])) for i in range(n_fake)]
    jobs_list += [("real", i, real_test[i]) for i in range(len(real_test))]
    rows = Parallel(n_jobs=jobs, prefer="threads")(delayed(_recover)(*job) for job in jobs_list)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)

    fake_mse = float(frame.loc[frame["method"] == "fake", "mse"].median())
    real_mse = float(frame.loc[frame["method"] == "real", "mse"].median())
    ratio = fake_mse / real_mse if real_mse > 0 else float("inf")
    report = EvalReport(frame, config_hash({"solve": solve_config.to_dict(), "n_fake": n_fake, "seed": seed}),
                        real_test.image_shape,
                        {"fake_mse": fake_mse, "real_mse": real_mse, "ratio": ratio, "generator_hash": target_hash})
    logger.info(f"decomposition: fake median mse={fake_mse:.6f} real median mse={real_mse:.6f} ratio={ratio:.4f}")
    return Decomposition(fake_mse, real_mse, ratio, report)


def sweep_measurements(budgets: Sequence[int], encoder_for: Callable[[int], Network], G: Network,
                       test_set: ImageSet, config: EvalConfig, outdir: Optional[str] = None) -> pd.DataFrame:
    """Median GE error per measurement size; ``encoder_for(m)`` trains or loads the m-wide encoder."""
    if not budgets:
        raise ConfigError("sweep needs at least one measurement budget")
    rows = []
    for m in budgets:
        EN = encoder_for(int(m))
        if EN.spec.output_shape[0] != m:
            raise DimensionError(f"encoder for m={m} produces {EN.spec.output_shape[0]} measurements")
        report = compare_methods(test_set, [EN.spec.label.lower()], {}, Models(G, {EN.spec.label.lower(): EN}),
                                 config)
        rows.append({"m": int(m), "rho": measurement_rate(int(m), test_set.image_shape),
                     "median_mse": report.median(EN.spec.label.lower()),
                     "mean_mse": float(report.rows["mse"].mean())})
        logger.info(f"sweep m={m}: median mse={rows[-1]['median_mse']:.6f}")
    curve = pd.DataFrame(rows, columns=["m", "rho", "median_mse", "mean_mse"])
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        curve.to_csv(os.path.join(outdir, "sweep.csv"), index=False)
        save_line_chart(curve["m"].tolist(), {"median MSE": curve["median_mse"].tolist()},
                        os.path.join(outdir, "sweep.svg"), xlabel="measurements m", ylabel="median MSE",
                        title="GE reconstruction loss vs measurement size")
    return curve


def evaluate_tasks(G: Network, EN: Network, test_set: ImageSet, tasks: Sequence[str], config: EvalConfig,
                   outdir: Optional[str] = None) -> pd.DataFrame:
    """Degrade, precondition and restore each test image per task; compare against the degraded input."""
    image_shape = test_set.image_shape
    per_task = {}
    for task in tasks:
        mask = rect_mask(image_shape, config.mask_rect) if task == "inpaint" else None
        S = adjustment_for(task, mask)

        def _one(i: int, task=task, mask=mask, S=S):
            x = test_set[i]
            spec = degradation_for(task, config.sigma, config.blur_sigma, config.blur_size, config.factor,
                                   mask=mask, seed=config.seed + i)
            aligned = precondition(degrade(x, spec), spec)
            result = solve_ge(forward(EN, aligned), EN, G, S, _solve_config(config.solve, config.seed + i))
            restored, degraded = image_mse(result.x_hat, x), image_mse(aligned, x)
            row = {"image_id": i, "task": task, "mse_restored": restored, "mse_degraded": degraded,
                   "improved": restored < degraded}
            return row, aligned.data, result.x_hat.data

        per_task[task] = Parallel(n_jobs=config.jobs, prefer="threads")(
            delayed(_one)(i) for i in range(len(test_set)))
        if outdir:
            save_comparison_grid({"original": test_set.images,
                                  "degraded": np.stack([a for _, a, _ in per_task[task]]),
                                  "GE": np.stack([h for _, _, h in per_task[task]])},
                                 os.path.join(outdir, f"{task}.png"))

    rows = pd.DataFrame([row for task in tasks for row, _, _ in per_task[task]],
                        columns=["image_id", "task", "mse_restored", "mse_degraded", "improved"])
    for task, frame in rows.groupby("task", sort=False):
        baseline = "bicubic" if task == "superres" else "degraded"
        logger.info(f"{task}: median restored={frame['mse_restored'].median():.5f} "
                    f"{baseline}={frame['mse_degraded'].median():.5f} improved={frame['improved'].mean():.0%}")
    return rows


def task_summary(rows: pd.DataFrame) -> pd.DataFrame:
    return rows.groupby("task", sort=False).agg(
        n=("image_id", "size"),
        median_restored=("mse_restored", "median"),
        median_degraded=("mse_degraded", "median"),
        improved_fraction=("improved", "mean"),
    ).reset_index()
