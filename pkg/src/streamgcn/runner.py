"""Experiment orchestration: flat-file configuration, seeded replications,
the first-tasks hyperparameter-selection protocol, the offline joint upper
bound, and report emission.

Reports are deterministic: metrics.json, anytime.csv, and perf_matrix.csv are
byte-identical across repeated runs of the same config and seeds. Timing and
touched-node stats go to a separate run_stats.json, which is excluded from
that guarantee.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .datasets import SbmSpec, StaticDataset, gen_sbm, load_dataset
from .evaluation import (AnytimeTrace, PerformanceMatrix, anytime_ap,
                         average_anytime, average_forgetting,
                         average_performance, evaluate_tasks)
from .graph import TEST, TRAIN, UNLABELED, VAL, GrowingGraph
from .linalg import AdamState, softmax_cross_entropy
from .models import GcnModel, MlpModel, OutputHead
from .strategies import (AGemStrategy, BareStrategy, ConfigurationError,
                         ErStrategy, EwcStrategy, LwfStrategy, MasStrategy,
                         PdgnnStrategy, SsmStrategy, TwpStrategy)
from .streams import NodeStream, TaskSchedule, build_class_incremental, \
    build_time_incremental

STRATEGY_NAMES = ("bare", "er", "agem", "ewc", "mas", "lwf", "twp",
                  "pdgnn", "ssm-er", "ssm-agem")


class ConfigError(ValueError):
    """Bad configuration file, key, or value."""


@dataclass
class RunConfig:
    """One experiment, flat and file-serializable. Comma lists stay strings
    so every key round-trips through ``key = value`` lines."""

    # dataset: a directory in the ingestion format, or a generated block model
    dataset_dir: str = ""
    sbm_classes: int = 10
    sbm_per_class: int = 200
    sbm_p_in: float = 0.1
    sbm_p_out: float = 0.005
    sbm_dim: int = 32
    sbm_separation: float = 4.0
    sbm_noise: float = 1.0
    sbm_seed: int = 0
    # stream construction
    stream: str = "class"            # class | time
    classes_per_task: int = 2
    eval_tasks: int = 10             # time-incremental eval intervals
    split_seed: int = 0
    boundary_frac: float = 0.2
    boundary_override: int = -1      # -1: use boundary_frac rule
    # training
    strategy: str = "bare"
    batch_size: int = 10
    fanouts: str = "10,10"           # per-hop caps, or "full"
    layers: int = 2
    hidden: int = 256
    bias: bool = False
    lr: float = 1e-3
    passes: int = 1
    # replay family
    memory_proportion: int = 1
    buffer_capacity: int = 1000
    # regularization family
    penalty_lambda: float = 1.0      # EWC / MAS
    lwf_lambda: float = 1.0
    lwf_temperature: float = 2.0
    lwf_update_every: int = 1
    twp_lambda_loss: float = 100.0
    twp_lambda_topology: float = 100.0
    twp_beta: float = 0.01
    # decoupled / subgraph replay
    ssm_budgets: str = "10,10"
    sgc_depth: int = -1              # -1: match layer count
    # evaluation
    seeds: str = "0,1,2,3,4"
    eval_stride: int = 1
    eval_fanouts: str = "full"
    metric: str = "accuracy"         # accuracy | f1
    positive_class: int = 1
    # joint upper bound
    joint_epochs: int = 200
    joint_patience: int = 20

    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.split(",") if s.strip() != ""]

    def fanout_tuple(self) -> tuple:
        return _parse_fanouts(self.fanouts, self.layers)

    def eval_fanout_tuple(self) -> tuple | None:
        if self.eval_fanouts.strip() == "full":
            return None
        return _parse_fanouts(self.eval_fanouts, self.layers)

    def budget_tuple(self) -> tuple[int, int]:
        parts = [int(p) for p in self.ssm_budgets.split(",")]
        if len(parts) != 2:
            raise ConfigError("ssm_budgets must be two comma-separated ints")
        return parts[0], parts[1]

    def depth(self) -> int:
        return self.layers if self.sgc_depth < 0 else self.sgc_depth


def _parse_fanouts(text: str, layers: int) -> tuple:
    text = text.strip()
    if text == "full":
        return tuple([None] * layers)
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != layers:
        raise ConfigError(f"need {layers} fan-outs, got {text!r}")
    return tuple(None if p == "full" else int(p) for p in parts)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    t = _FIELD_TYPES[key]
    raw = raw.strip()
    if t == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def load_config(path: str) -> RunConfig:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            values[key.strip()] = _coerce(key.strip(), raw)
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, raw = item.split("=", 1)
        cfg = replace(cfg, **{key.strip(): _coerce(key.strip(), raw)})
    return cfg


def config_text(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def materialize_dataset(cfg: RunConfig, scratch_dir: str | None = None
                        ) -> StaticDataset:
    if cfg.dataset_dir:
        return load_dataset(cfg.dataset_dir)
    spec = SbmSpec(classes=cfg.sbm_classes, per_class=cfg.sbm_per_class,
                   p_in=cfg.sbm_p_in, p_out=cfg.sbm_p_out,
                   feature_dim=cfg.sbm_dim, separation=cfg.sbm_separation,
                   noise=cfg.sbm_noise, seed=cfg.sbm_seed)
    if scratch_dir is None:
        import tempfile

        scratch_dir = tempfile.mkdtemp(prefix="sbm_")
    return gen_sbm(spec, scratch_dir)


def build_stream(cfg: RunConfig, dataset: StaticDataset
                 ) -> tuple[NodeStream, TaskSchedule]:
    override = None if cfg.boundary_override < 0 else cfg.boundary_override
    if cfg.stream == "class":
        stream, schedule, _ = build_class_incremental(
            dataset, classes_per_task=cfg.classes_per_task,
            split_seed=cfg.split_seed, batch_size=cfg.batch_size,
            boundary_frac=cfg.boundary_frac, boundary_override=override)
    elif cfg.stream == "time":
        stream, schedule, _ = build_time_incremental(
            dataset, eval_tasks=cfg.eval_tasks, split_seed=cfg.split_seed,
            batch_size=cfg.batch_size, boundary_frac=cfg.boundary_frac,
            boundary_override=override)
    else:
        raise ConfigError(f"unknown stream kind {cfg.stream!r}")
    return stream, schedule


def build_strategy(cfg: RunConfig, dataset: StaticDataset, seed: int):
    if cfg.strategy not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    ss = np.random.SeedSequence([int(seed), 0xC0FFEE])
    rng_init, rng_samp = (np.random.default_rng(c) for c in ss.spawn(2))
    fanouts = cfg.fanout_tuple()
    head = OutputHead(dataset.num_classes)

    if cfg.strategy == "pdgnn":
        mlp = MlpModel(dataset.feature_dim, cfg.hidden, dataset.num_classes,
                       bias=cfg.bias, rng=rng_init)
        opt = AdamState(mlp.params, lr=cfg.lr)
        return PdgnnStrategy(mlp, head, opt, rng_samp, cfg.batch_size,
                             fanouts, passes=cfg.passes, sgc_depth=cfg.depth(),
                             buffer_capacity=cfg.buffer_capacity,
                             memory_proportion=cfg.memory_proportion)

    model = GcnModel(dataset.feature_dim, cfg.hidden, dataset.num_classes,
                     layers=cfg.layers, bias=cfg.bias, rng=rng_init)
    opt = AdamState(model.params, lr=cfg.lr)
    common = dict(batch_size=cfg.batch_size, fanouts=fanouts, passes=cfg.passes)
    if cfg.strategy == "bare":
        return BareStrategy(model, head, opt, rng_samp, **common)
    if cfg.strategy == "er":
        return ErStrategy(model, head, opt, rng_samp,
                          buffer_capacity=cfg.buffer_capacity,
                          memory_proportion=cfg.memory_proportion, **common)
    if cfg.strategy == "agem":
        return AGemStrategy(model, head, opt, rng_samp,
                            buffer_capacity=cfg.buffer_capacity,
                            memory_proportion=cfg.memory_proportion, **common)
    if cfg.strategy == "ewc":
        return EwcStrategy(model, head, opt, rng_samp,
                           penalty_lambda=cfg.penalty_lambda, **common)
    if cfg.strategy == "mas":
        return MasStrategy(model, head, opt, rng_samp,
                           penalty_lambda=cfg.penalty_lambda, **common)
    if cfg.strategy == "lwf":
        return LwfStrategy(model, head, opt, rng_samp,
                           distill_lambda=cfg.lwf_lambda,
                           temperature=cfg.lwf_temperature,
                           update_every=cfg.lwf_update_every, **common)
    if cfg.strategy == "twp":
        return TwpStrategy(model, head, opt, rng_samp,
                           lambda_loss=cfg.twp_lambda_loss,
                           lambda_topology=cfg.twp_lambda_topology,
                           beta=cfg.twp_beta, **common)
    mode = "er" if cfg.strategy == "ssm-er" else "agem"
    return SsmStrategy(model, head, opt, rng_samp, mode=mode,
                       buffer_capacity=cfg.buffer_capacity,
                       memory_proportion=cfg.memory_proportion,
                       budgets=cfg.budget_tuple(), **common)


@dataclass
class SeedResult:
    seed: int
    matrix: PerformanceMatrix
    trace: AnytimeTrace
    ap: float
    af: float | None
    aap: float
    max_touched: int
    touched_bound: int | None
    agem_min_dot: float | None
    batch_seconds: list[float] = field(default_factory=list)
    skipped_batches: int = 0


@dataclass
class ExperimentReport:
    config: RunConfig
    results: list[SeedResult]

    def metric_summary(self) -> dict:
        def agg(values):
            clean = [v for v in values if v is not None]
            return {
                "per_seed": values,
                "mean": float(np.mean(clean)) if clean else None,
                "std": float(np.std(clean)) if clean else None,
            }

        return {
            "strategy": self.config.strategy,
            "seeds": [r.seed for r in self.results],
            "ap": agg([r.ap for r in self.results]),
            "af": agg([r.af for r in self.results]),
            "aap": agg([r.aap for r in self.results]),
        }


def run_stream_once(cfg: RunConfig, dataset: StaticDataset, seed: int,
                    stream: NodeStream | None = None,
                    schedule: TaskSchedule | None = None,
                    record_matrix: bool = True) -> tuple[SeedResult, object, GrowingGraph]:
    """Drive one strategy over the stream once; returns the per-seed result,
    the trained strategy, and the final graph."""
    if stream is None or schedule is None:
        stream, schedule = build_stream(cfg, dataset)
    else:
        stream = stream.prefix(len(stream))  # private cursor
    stream.reset()

    graph = GrowingGraph(dataset.feature_dim, dataset.num_classes)
    strategy = build_strategy(cfg, dataset, seed)
    eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    eval_fanouts = cfg.eval_fanout_tuple()

    def predict(g, ids):
        return strategy.predict(g, ids, fanouts=eval_fanouts, rng=eval_rng)

    bound = strategy.touched_bound()
    matrix = PerformanceMatrix(schedule.num_tasks)
    trace = AnytimeTrace(stride=cfg.eval_stride)
    task_ends = schedule.task_end_batches(cfg.batch_size)
    end_to_tasks: dict[int, list[int]] = {}
    for i, b in enumerate(task_ends):
        end_to_tasks.setdefault(b, []).append(i)

    max_touched = 0
    agem_dots: list[float] = []
    batch_seconds: list[float] = []
    skipped = 0
    batch_index = 0
    num_batches = stream.num_batches
    while not stream.exhausted():
        start = stream.cursor
        events = stream.next_minibatch()
        for offset, ev in enumerate(events):
            graph.ingest(ev, split=int(stream.split_tags[start + offset]))
        batch_ids = np.arange(start, start + len(events))
        t0 = time.perf_counter()
        stats = strategy.process_batch(graph, batch_ids)
        batch_seconds.append(time.perf_counter() - t0)
        batch_index += 1
        if stats.skipped:
            skipped += 1
        else:
            step_max = max(stats.touched)
            max_touched = max(max_touched, step_max)
            if bound is not None and step_max > bound:
                raise AssertionError(
                    f"touched {step_max} nodes, bound {bound}")
            agem_dots.extend(stats.agem_dots)
        is_last = batch_index == num_batches
        if cfg.eval_stride > 0 and (batch_index % cfg.eval_stride == 0 or is_last):
            ap_t = anytime_ap(predict, graph, schedule, VAL,
                              metric=cfg.metric,
                              positive_class=cfg.positive_class)
            if ap_t is not None:
                trace.record(batch_index, ap_t)
        if record_matrix and batch_index in end_to_tasks:
            scores = evaluate_tasks(predict, graph, schedule, TEST,
                                    metric=cfg.metric,
                                    positive_class=cfg.positive_class)
            for row in end_to_tasks[batch_index]:
                matrix.fill_row(row, scores)

    ap = average_performance(matrix) if record_matrix else float("nan")
    af = average_forgetting(matrix) if record_matrix else None
    aap = average_anytime(trace) if trace.values else None
    result = SeedResult(
        seed=seed, matrix=matrix, trace=trace, ap=ap, af=af, aap=aap,
        max_touched=max_touched, touched_bound=bound,
        agem_min_dot=min(agem_dots) if agem_dots else None,
        batch_seconds=batch_seconds, skipped_batches=skipped)
    return result, strategy, graph


def run_experiment(cfg: RunConfig, out_dir: str | None = None
                   ) -> ExperimentReport:
    """Run every seed over the stream once and optionally emit reports."""
    dataset = materialize_dataset(
        cfg, scratch_dir=os.path.join(out_dir, "dataset")
        if (out_dir and not cfg.dataset_dir) else None)
    stream, schedule = build_stream(cfg, dataset)
    results = []
    for seed in cfg.seed_list():
        res, _, _ = run_stream_once(cfg, dataset, seed, stream, schedule)
        results.append(res)
    report = ExperimentReport(config=cfg, results=results)
    if out_dir is not None:
        emit_reports(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# hyperparameter grid protocol


DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "common": {"lr": [1e-2, 1e-3, 1e-4, 1e-5], "passes": [1, 5]},
    "bare": {},
    "er": {"memory_proportion": [1, 2, 3]},
    "agem": {"memory_proportion": [1, 2, 3]},
    "pdgnn": {"memory_proportion": [1, 2, 3]},
    "ewc": {"penalty_lambda": [1e0, 1e2, 1e4, 1e6, 1e8, 1e10]},
    "mas": {"penalty_lambda": [1e0, 1e2, 1e4, 1e6, 1e8, 1e10]},
    "lwf": {"lwf_lambda": [0.1, 1.0, 10.0],
            "lwf_temperature": [0.2, 2.0, 20.0],
            "lwf_update_every": [1, 10, 100]},
    "twp": {"twp_lambda_loss": [1e2, 1e4, 1e6],
            "twp_lambda_topology": [1e2, 1e4, 1e6],
            "twp_beta": [0.001, 0.01, 0.1]},
    "ssm-er": {"ssm_budgets": ["5,5", "10,10", "25,25"]},
    "ssm-agem": {"ssm_budgets": ["5,5", "10,10", "25,25"]},
}


def default_grid(strategy: str) -> dict[str, list]:
    if strategy not in DEFAULT_GRIDS:
        raise ConfigError(f"unknown strategy {strategy!r}")
    grid = dict(DEFAULT_GRIDS["common"])
    grid.update(DEFAULT_GRIDS[strategy])
    return grid


def grid_select(cfg: RunConfig, grid: dict[str, list] | None = None,
                out_dir: str | None = None) -> tuple[dict, list[dict]]:
    """Score every grid point on the first tasks only and return the best.

    Each point runs the normal online protocol over the stream prefix ending
    at the validation-boundary task; the score is the mean validation
    performance over those tasks at the end of the prefix. Ties keep the
    first point in declared grid order.
    """
    if grid is None:
        grid = default_grid(cfg.strategy)
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must list at least one value per key")
    dataset = materialize_dataset(cfg)
    stream, schedule = build_stream(cfg, dataset)
    if schedule.num_tasks < 2:
        raise ConfigError("grid protocol needs at least two tasks")
    boundary = schedule.boundary_index
    prefix_len = schedule.boundaries[boundary - 1]
    prefix = stream.prefix(prefix_len)
    boundary_schedule = _truncate_schedule(schedule, boundary)
    seed = cfg.seed_list()[0]

    keys = list(grid.keys())
    trials = []
    best = None
    for combo in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, combo))
        trial_cfg = replace(cfg, **point)
        res, strategy, graph = run_stream_once(
            trial_cfg, dataset, seed, prefix, boundary_schedule,
            record_matrix=False)
        eval_fanouts = trial_cfg.eval_fanout_tuple()
        eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A2]))
        score = anytime_ap(
            lambda g, ids: strategy.predict(g, ids, fanouts=eval_fanouts,
                                            rng=eval_rng),
            graph, boundary_schedule, VAL, metric=cfg.metric,
            positive_class=cfg.positive_class)
        trials.append({"point": point, "val_ap": score})
        if score is not None and (best is None or score > best[1]):
            best = (point, score)
    if best is None:
        raise ConfigError("no grid point produced a validation score")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "grid_results.json"), "w") as fh:
            json.dump({"trials": trials, "selected": best[0],
                       "selected_val_ap": best[1]},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    return best[0], trials


def _truncate_schedule(schedule: TaskSchedule, boundary: int) -> TaskSchedule:
    return TaskSchedule(
        kind=schedule.kind,
        label_groups=schedule.label_groups[:boundary]
        if schedule.label_groups else None,
        intervals=schedule.intervals[:boundary] if schedule.intervals else None,
        boundaries=schedule.boundaries[:boundary],
        boundary_index=boundary,
    )


# ---------------------------------------------------------------------------
# joint upper bound


def run_joint_upper_bound(cfg: RunConfig, out_dir: str | None = None) -> dict:
    """Offline multi-epoch full-graph training on the final snapshot; the
    reference ceiling for every streaming strategy. Reports test AP over the
    same task partition, per seed."""
    dataset = materialize_dataset(
        cfg, scratch_dir=os.path.join(out_dir, "dataset")
        if (out_dir and not cfg.dataset_dir) else None)
    stream, schedule = build_stream(cfg, dataset)

    per_seed = []
    for seed in cfg.seed_list():
        graph = GrowingGraph(dataset.feature_dim, dataset.num_classes)
        stream.reset()
        while not stream.exhausted():
            start = stream.cursor
            for offset, ev in enumerate(stream.next_minibatch()):
                graph.ingest(ev, split=int(stream.split_tags[start + offset]))

        ss = np.random.SeedSequence([int(seed), 0xC0FFEE])
        rng_init, _ = (np.random.default_rng(c) for c in ss.spawn(2))
        model = GcnModel(dataset.feature_dim, cfg.hidden, dataset.num_classes,
                         layers=cfg.layers, bias=cfg.bias, rng=rng_init)
        head = OutputHead(dataset.num_classes)
        opt = AdamState(model.params, lr=cfg.lr)

        all_ids = np.arange(graph.size)
        labels = graph.labels_of(all_ids)
        splits = graph.splits_of(all_ids)
        train_ids = all_ids[(splits == TRAIN) & (labels != UNLABELED)]
        val_ids = all_ids[(splits == VAL) & (labels != UNLABELED)]
        head.observe(model, labels[train_ids])

        norm, feats = graph.snapshot_operator()
        best_val = -1.0
        best_params = model.params.clone_values()
        stale = 0
        for epoch in range(cfg.joint_epochs):
            logits, cache = model.forward_parts(norm, feats, train_ids)
            loss, dsub = softmax_cross_entropy(
                logits, head.cols_of(labels[train_ids]), head.active_cols)
            model.params.zero_grads()
            model.backward(cache, dsub, seed_rows=train_ids)
            opt.step(model.params)

            v_logits, _ = model.forward_parts(norm, feats, val_ids)
            v_pred = head.predict(v_logits)
            val_acc = float(np.mean(v_pred == labels[val_ids])) \
                if len(val_ids) else 1.0
            if val_acc > best_val:
                best_val = val_acc
                best_params = model.params.clone_values()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.joint_patience:
                    break
        model.params.load_values(best_params)

        def predict(g, ids):
            n, f = g.snapshot_operator()
            lg, _ = model.forward_parts(n, f, np.asarray(ids, dtype=np.int64))
            return head.predict(lg)

        scores = evaluate_tasks(predict, graph, schedule, TEST,
                                metric=cfg.metric,
                                positive_class=cfg.positive_class)
        vals = [v for v in scores.values() if v is not None]
        per_seed.append(float(np.mean(vals)))

    summary = {
        "ap": {"per_seed": per_seed,
               "mean": float(np.mean(per_seed)),
               "std": float(np.std(per_seed))},
        "seeds": cfg.seed_list(),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "joint.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# report emission


def _float_cell(v: float) -> str:
    return repr(float(v))


def write_matrix_csv(matrix: PerformanceMatrix, path: str) -> None:
    t = matrix.num_tasks
    header = "after_task," + ",".join(f"task_{j}" for j in range(t))
    lines = [header]
    for i in range(t):
        cells = [str(i)]
        for j in range(t):
            v = matrix.values[i, j]
            cells.append("" if np.isnan(v) else _float_cell(v))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_anytime_csv(trace: AnytimeTrace, path: str) -> None:
    lines = ["batch_index,ap_value"]
    for b, v in zip(trace.batch_indices, trace.values):
        lines.append(f"{b},{_float_cell(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_reports(report: ExperimentReport, out_dir: str) -> None:
    """Write metrics.json, per-seed and aggregated traces/matrices, the config
    echo, and (non-deterministic) run stats."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(report.metric_summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(config_text(report.config))

    for res in report.results:
        seed_dir = os.path.join(out_dir, f"seed_{res.seed}")
        os.makedirs(seed_dir, exist_ok=True)
        write_matrix_csv(res.matrix, os.path.join(seed_dir, "perf_matrix.csv"))
        write_anytime_csv(res.trace, os.path.join(seed_dir, "anytime.csv"))

    # aggregated views: element-wise mean over seeds
    mats = np.stack([r.matrix.values for r in report.results])
    agg = PerformanceMatrix(report.results[0].matrix.num_tasks)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        agg.values[...] = np.nanmean(mats, axis=0)
    write_matrix_csv(agg, os.path.join(out_dir, "perf_matrix.csv"))

    common = None
    for r in report.results:
        keys = set(r.trace.batch_indices)
        common = keys if common is None else (common & keys)
    agg_trace = AnytimeTrace(stride=report.config.eval_stride)
    for b in sorted(common or []):
        vals = []
        for r in report.results:
            vals.append(r.trace.values[r.trace.batch_indices.index(b)])
        agg_trace.record(b, float(np.mean(vals)))
    write_anytime_csv(agg_trace, os.path.join(out_dir, "anytime.csv"))

    stats = {
        "max_touched_per_seed": [r.max_touched for r in report.results],
        "touched_bound": report.results[0].touched_bound,
        "agem_min_dot": [r.agem_min_dot for r in report.results],
        "skipped_batches": [r.skipped_batches for r in report.results],
        "mean_batch_seconds": [float(np.mean(r.batch_seconds))
                               if r.batch_seconds else None
                               for r in report.results],
        "max_batch_seconds": [float(np.max(r.batch_seconds))
                              if r.batch_seconds else None
                              for r in report.results],
    }
    with open(os.path.join(out_dir, "run_stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
