"""Command-line interface.

Subcommands: ``fit`` trains on user CSV data (with optional domain
adaptation per source), ``sim1``/``sim2``/``sim3-s1``/``sim3-s2`` replay the
simulation benchmarks, and ``sweep-gamma`` traces the source-selection path
over a penalty grid.  Every run writes a manifest with the resolved
configuration so it can be reproduced exactly.

Exit codes: 2 configuration error, 3 data error, 4 optimization failure.
"""

import csv
import json
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import (
    DEFAULT_GAMMA,
    ScenarioSpec,
    run_benchmark,
    write_replications_csv,
    write_summary_csv,
)
from .covblock import OutputData
from .dame import DameConfig, DomainSpec, adapt_source
from .exceptions import ConfigError, DataError, MgcpError, OptimizationError
from .train import TrainConfig, fit as train_fit, predict_fit, select_gamma

SIM_DEFAULT_METHODS = {
    "sim1": ("MGCP-R", "MGCP", "MGCP-RF", "BGCP-R", "GCP", "MGCP-T"),
    "sim2": ("MGCP-R", "MGCP", "MGCP-RF", "BGCP-R", "GCP"),
    "sim3-s1": ("MGCP-R", "MGCP", "MGCP-RF", "BGCP-R", "GCP"),
    "sim3-s2": ("MGCP-R", "MGCP", "MGCP-RF", "BGCP-R", "GCP"),
}
SIM_DEFAULT_REPLICATIONS = {"sim1": 100, "sim2": 100, "sim3-s1": 50, "sim3-s2": 50}


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}")


def _read_csv_dataset(path, expect_response=True):
    """CSV with a header row, feature columns, response column last."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [r for r in reader if r]
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    if header is None or not rows:
        raise DataError(f"data file {path} is empty")
    try:
        values = np.array([[float(v) for v in row] for row in rows])
    except ValueError as err:
        raise DataError(f"non-numeric value in {path}: {err}")
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite value in {path}")
    if expect_response:
        if values.shape[1] < 2:
            raise DataError(
                f"{path} needs at least one feature column and a response column"
            )
        return values[:, :-1], values[:, -1]
    return values, None


def _train_config(section, seed):
    known = {
        "gamma",
        "eta",
        "restarts",
        "max_iterations",
        "convergence_tol",
        "penalty_mode",
        "cv_folds",
        "gamma_grid",
        "jitter",
        "selection_threshold",
        "standardize",
        "screen_draws",
        "screen_iterations",
    }
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown train option(s): {sorted(extra)}")
    if "gamma_grid" in section:
        section = dict(section, gamma_grid=tuple(section["gamma_grid"]))
    return TrainConfig(seed=seed, **section)


def _dame_config(section, seed):
    known = {"n_induced", "n_expand", "bandwidth", "expansion_noise_std"}
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown dame option(s): {sorted(extra)}")
    return DameConfig(seed=seed, **section)


def _domain_spec(section):
    known = {
        "shared_features",
        "source_unique",
        "target_unique_count",
        "target_unique_bounds",
    }
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown domain option(s): {sorted(extra)}")
    if "shared_features" not in section or "target_unique_count" not in section:
        raise ConfigError(
            "a domain section needs shared_features and target_unique_count"
        )
    return DomainSpec(**section)


def _write_manifest(out_dir, command, config_snapshot, seed, outputs):
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": config_snapshot,
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _resolve_config_payload(payload):
    """Accept either a plain config or a manifest wrapping one."""
    if "config" in payload and "command" in payload:
        return payload["config"]
    return payload


def _kernel_json(k):
    return {"alpha": float(k.alpha), "log_lambda": [float(v) for v in k.log_lambda]}


def _theta_json(theta):
    out = {
        "source_kernels": [_kernel_json(k) for k in theta.source_kernels],
        "transfer_kernels": [_kernel_json(k) for k in theta.transfer_kernels],
        "target_kernel": _kernel_json(theta.target_kernel),
        "log_sigmas": [float(v) for v in theta.log_sigmas],
    }
    if theta.shared_kernels is not None:
        out["shared_kernels"] = [_kernel_json(k) for k in theta.shared_kernels]
    return out


def _out_dir(out):
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.group()
@click.version_option(__version__)
def main():
    """Transfer-learning Gaussian process regression with source selection."""


def _load_fit_inputs(config, seed):
    if "target" not in config or "path" not in config.get("target", {}):
        raise ConfigError("config needs target.path")
    tx, ty = _read_csv_dataset(config["target"]["path"])
    target = OutputData(tx, ty, role="target")

    dame_cfg = _dame_config(config.get("dame", {}), seed)
    sources = []
    adapted = []
    for i, entry in enumerate(config.get("sources", [])):
        if "path" not in entry:
            raise ConfigError(f"sources[{i}] needs a path")
        sx, sy = _read_csv_dataset(entry["path"])
        src = OutputData(sx, sy, role=i)
        if "domain" in entry:
            spec = _domain_spec(entry["domain"])
            src = adapt_source(
                src, target, spec, replace(dame_cfg, seed=seed + i)
            )
            src = OutputData(src.inputs, src.responses, role=i)
            adapted.append(i)
        if src.d != target.d:
            raise DataError(
                f"sources[{i}] has {src.d} features but the target has "
                f"{target.d}; add a domain section to adapt it"
            )
        sources.append(src)
    return sources, target, adapted


@main.command("fit")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default="mgcp_out", show_default=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Overrides the config seed.")
def cmd_fit(config_path, out, seed):
    """Fit the regularized model on CSV datasets and write predictions."""
    try:
        payload = _resolve_config_payload(_load_json(config_path))
        run_seed = seed if seed is not None else int(payload.get("seed", 0))
        sources, target, adapted = _load_fit_inputs(payload, run_seed)
        tcfg = _train_config(payload.get("train", {}), run_seed)

        data = sources + [target]
        result = train_fit(data, tcfg)

        if "query" in payload:
            qx, _ = _read_csv_dataset(payload["query"]["path"], expect_response=False)
        else:
            qx = target.inputs
        pred = predict_fit(
            data, result, qx, include_noise=bool(payload.get("include_noise", False))
        )

        out_dir = _out_dir(out)
        outputs = []

        pred_path = out_dir / "predictions.csv"
        with open(pred_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [f"x{j}" for j in range(qx.shape[1])] + ["mean", "std"]
            )
            for row, m, v in zip(qx, pred.mean, pred.variance):
                writer.writerow(
                    [repr(float(v_)) for v_ in row]
                    + [repr(float(m)), repr(float(np.sqrt(v)))]
                )
        outputs.append(pred_path)

        hyper_path = out_dir / "hyperparameters.json"
        with open(hyper_path, "w") as fh:
            json.dump(
                {
                    "theta": _theta_json(result.theta_hat),
                    "objective": result.objective,
                    "standardizers": result.standardizers,
                    "per_restart_objectives": result.per_restart_objectives,
                },
                fh,
                indent=2,
            )
        outputs.append(hyper_path)

        selection_path = out_dir / "selection.json"
        alphas = result.theta_hat.transfer_alphas()
        with open(selection_path, "w") as fh:
            json.dump(
                {
                    "selected_sources": list(result.selected_sources),
                    "selection_threshold": tcfg.selection_threshold,
                    "transfer_alphas": [float(a) for a in alphas],
                    "adapted_sources": adapted,
                },
                fh,
                indent=2,
            )
        outputs.append(selection_path)

        outputs.append(
            _write_manifest(out_dir, "fit", payload, run_seed, outputs)
        )
        click.echo(
            f"fit complete: {len(sources)} source(s), "
            f"selected {sorted(result.selected_sources)}; wrote {out_dir}"
        )
    except ConfigError as err:
        _fail(2, str(err))
    except DataError as err:
        _fail(3, str(err))
    except OptimizationError as err:
        _fail(4, str(err))
    except MgcpError as err:
        _fail(4, str(err))


def _sim_command(case):
    @click.option("--replications", default=None, type=int)
    @click.option("--seed", default=0, show_default=True, type=int)
    @click.option(
        "--methods",
        default=",".join(SIM_DEFAULT_METHODS[case]),
        show_default=True,
        help="Comma-separated method names.",
    )
    @click.option("--out", default="mgcp_out", show_default=True, type=click.Path())
    @click.option("--ne", default=2, show_default=True, type=int,
                  help="Sources per family (sim3 only).")
    @click.option("--gamma", default=DEFAULT_GAMMA, show_default=True, type=float)
    @click.option("--config", "config_path", default=None, type=click.Path(),
                  help="Optional JSON with scenario/train overrides.")
    def command(replications, seed, methods, out, ne, gamma, config_path):
        try:
            overrides = {}
            if config_path:
                overrides = _resolve_config_payload(_load_json(config_path))
            scen_over = {
                k: overrides[k]
                for k in ("n", "n_t", "n_test", "noise_std")
                if k in overrides
            }
            spec = ScenarioSpec(case=case, n_e=ne, seed=seed, **scen_over)
            reps = replications or overrides.get(
                "replications", SIM_DEFAULT_REPLICATIONS[case]
            )
            method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
            train_over = dict(overrides.get("train", {}))
            train_over.setdefault("gamma", gamma)
            train_over.setdefault("restarts", 8)
            train_over.setdefault("max_iterations", 1000)
            train_over.setdefault("screen_draws", 24)
            train_over.setdefault("screen_iterations", 150)
            tmpl = _train_config(train_over, seed)

            result = run_benchmark(spec, method_list, reps, train=tmpl)

            out_dir = _out_dir(out)
            rep_path = out_dir / "replications.csv"
            sum_path = out_dir / "summary.csv"
            write_replications_csv(rep_path, result)
            write_summary_csv(sum_path, result)
            snapshot = {
                "case": case,
                "replications": reps,
                "methods": list(method_list),
                "n_e": ne,
                "scenario": scen_over,
                "train": {**train_over, "gamma": tmpl.gamma},
            }
            _write_manifest(out_dir, case, snapshot, seed, [rep_path, sum_path])
            for row in result.summary():
                click.echo(
                    f"{row['method']}: median MAE "
                    f"{row['median_mae'] if row['median_mae'] is not None else 'n/a'}"
                    f" ({row['failures']} failure(s))"
                )
        except ConfigError as err:
            _fail(2, str(err))
        except DataError as err:
            _fail(3, str(err))
        except OptimizationError as err:
            _fail(4, str(err))
        except MgcpError as err:
            _fail(4, str(err))

    command.__name__ = f"cmd_{case.replace('-', '_')}"
    command.__doc__ = {
        "sim1": "Four 1-d sources, two informative (negative-transfer study).",
        "sim2": "Inconsistent-domain source aligned by expansion (2-d).",
        "sim3-s1": "Many-source scaling study (1-d, 4 families x ne).",
        "sim3-s2": "Five-dimensional study with adapted sources.",
    }[case]
    return command


for _case in ("sim1", "sim2", "sim3-s1", "sim3-s2"):
    main.command(_case)(_sim_command(_case))


@main.command("sweep-gamma")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--grid", default=None,
              help="Comma-separated penalty weights; overrides the config grid.")
@click.option("--out", default="mgcp_out", show_default=True, type=click.Path())
@click.option("--seed", default=None, type=int)
def cmd_sweep_gamma(config_path, grid, out, seed):
    """Trace cross-validated error and the selection path over a gamma grid."""
    try:
        payload = _resolve_config_payload(_load_json(config_path))
        run_seed = seed if seed is not None else int(payload.get("seed", 0))
        sources, target, _ = _load_fit_inputs(payload, run_seed)
        tcfg = _train_config(payload.get("train", {}), run_seed)

        if grid:
            try:
                grid_values = tuple(float(g) for g in grid.split(","))
            except ValueError:
                raise ConfigError(f"--grid must be comma-separated numbers: {grid!r}")
            tcfg = replace(tcfg, gamma_grid=grid_values)
        if not tcfg.gamma_grid:
            raise ConfigError("sweep-gamma needs a nonempty grid (--grid or config)")

        data = sources + [target]
        gamma_best, cv_table = select_gamma(data, tcfg)
        cv_by_gamma = {row["gamma"]: row["cv_mae"] for row in cv_table}

        out_dir = _out_dir(out)
        sweep_path = out_dir / "gamma_sweep.csv"
        q = len(sources)
        with open(sweep_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["gamma", "cv_mae", "selected_count"]
                + [f"abs_alpha_{i}" for i in range(q)]
            )
            for gamma in sorted(cv_by_gamma):
                result = train_fit(data, replace(tcfg, gamma=gamma))
                alphas = np.abs(result.theta_hat.transfer_alphas())
                writer.writerow(
                    [repr(float(gamma)), repr(float(cv_by_gamma[gamma])),
                     str(len(result.selected_sources))]
                    + [repr(float(a)) for a in alphas]
                )
        outputs = [sweep_path]
        outputs.append(
            _write_manifest(out_dir, "sweep-gamma", payload, run_seed, outputs)
        )
        click.echo(f"best gamma by CV: {gamma_best}; wrote {sweep_path}")
    except ConfigError as err:
        _fail(2, str(err))
    except DataError as err:
        _fail(3, str(err))
    except OptimizationError as err:
        _fail(4, str(err))
    except MgcpError as err:
        _fail(4, str(err))


if __name__ == "__main__":
    main()
