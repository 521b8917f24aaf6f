"""Command-line client for the experiment service.

`barelab serve` starts the HTTP service; `barelab run` resolves a run
configuration from flags (plus an optional key=value config file), submits
it to a running service, polls until it finishes, and writes the CSV/JSON
outputs locally.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import httpx

from . import experiments
from .errors import BarelabError, ConfigError

DEFAULT_SERVER = "http://127.0.0.1:8321"

# flag name -> (manifest key, parser)
_RUN_FLAGS = {
    "--dataset": ("dataset", str),
    "--mnist-dir": ("mnist_dir", str),
    "--blob-classes": ("blob_classes", int),
    "--blob-per-class": ("blob_per_class", int),
    "--blob-dim": ("blob_dim", int),
    "--blob-separation": ("blob_separation", float),
    "--blob-std": ("blob_std", float),
    "--blob-test-per-class": ("blob_test_per_class", int),
    "--noise": ("noise", str),
    "--eta": ("eta", float),
    "--matrix-file": ("matrix_file", str),
    "--flips": ("flips", str),
    "--selector": ("selector", str),
    "--kappa": ("kappa", float),
    "--keep-fraction": ("keep_fraction", float),
    "--lambda": ("spl_lambda", float),
    "--epochs": ("epochs", int),
    "--batch-size": ("batch_size", int),
    "--lr": ("lr", float),
    "--hidden": ("hidden", str),
    "--trials": ("trials", int),
    "--seed": ("seed", int),
    "--train-fraction": ("train_fraction", float),
    "--val-count": ("val_count", int),
    "--patience": ("patience", int),
    "--factor": ("factor", float),
    "--min-lr": ("min_lr", float),
    "--monitor": ("monitor", str),
    "--dtype": ("dtype", str),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barelab",
                                     description="Noisy-label training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start the experiment service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)

    run = sub.add_parser("run", help="submit a run (or sweep) and collect its outputs")
    for flag, (key, kind) in _RUN_FLAGS.items():
        run.add_argument(flag, dest=key, type=kind, default=None)
    run.add_argument("--config", default=None, help="key=value file; flags override it")
    run.add_argument("--sweep", dest="sweep_axis", default=None,
                     choices=list(experiments.SWEEP_AXES))
    run.add_argument("--values", default=None,
                     help="comma-separated sweep values, e.g. 64,128,256")
    run.add_argument("--out", default=None, required=True, help="output directory")
    run.add_argument("--server", default=DEFAULT_SERVER)
    run.add_argument("--poll-interval", type=float, default=1.0)
    run.add_argument("--quiet", action="store_true")
    return parser


def read_config_file(path) -> dict:
    """Flat key=value lines mirroring the run flags; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


_CONFIG_PARSERS = {key: kind for key, kind in _RUN_FLAGS.values()}


def coerce_config_values(raw: dict) -> dict:
    out = {}
    for key, val in raw.items():
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _CONFIG_PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    return out


def gather_run_values(args) -> tuple[dict, set]:
    """Defaults < config file < explicit flags; returns (values, provided keys)."""
    values: dict = {}
    if args.config:
        values.update(coerce_config_values(read_config_file(args.config)))
    for key in _CONFIG_PARSERS:
        flag_value = getattr(args, key)
        if flag_value is not None:
            values[key] = flag_value
    return values, set(values)


def parse_values_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {text!r}") from exc


def ensure_writable(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    try:
        probe.write_text("")
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    probe.unlink()


class ServiceClient:
    """Minimal HTTP wrapper so tests can point the CLI at any transport."""

    def __init__(self, base_url: str, transport: httpx.BaseTransport | None = None):
        self.http = httpx.Client(base_url=base_url, timeout=60.0, transport=transport)

    def check(self) -> None:
        try:
            response = self.http.get("/health")
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ConfigError(
                f"no experiment service reachable at {self.http.base_url} "
                f"({exc}); start one with 'barelab serve'") from exc

    def submit(self, path: str, payload: dict) -> dict:
        response = self.http.post(path, json=payload)
        if response.status_code == 400:
            raise ConfigError(response.json()["detail"])
        response.raise_for_status()
        return response.json()

    def wait(self, job_id: str, poll_interval: float, log=None) -> dict:
        last = None
        while True:
            status = self.http.get(f"/runs/{job_id}")
            status.raise_for_status()
            body = status.json()
            if log and body["epochs_done"] != last:
                last = body["epochs_done"]
                log(f"  {body['state']}: epoch {body['epochs_done']}/{body['epochs_total']}")
            if body["state"] in ("done", "failed"):
                return body
            time.sleep(poll_interval)

    def text(self, path: str) -> str:
        response = self.http.get(path)
        response.raise_for_status()
        return response.text

    def json(self, path: str) -> dict:
        response = self.http.get(path)
        response.raise_for_status()
        return response.json()


def fetch_run_outputs(client: ServiceClient, job_id: str, manifest: dict, out: Path) -> None:
    summary = client.json(f"/runs/{job_id}/summary")["summary"]
    for trial in range(manifest["trials"]):
        csv_text = client.text(f"/runs/{job_id}/trials/{trial}/metrics.csv")
        (out / f"trial_{trial}.csv").write_text(csv_text, encoding="ascii")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="ascii")


def fetch_sweep_outputs(client: ServiceClient, job_id: str, axis: str, values: list,
                        trials: int, out: Path) -> None:
    sweep = client.json(f"/sweeps/{job_id}/summary")
    for cell, value in enumerate(values):
        cell_dir = out / experiments.cell_name(axis, value)
        cell_dir.mkdir(parents=True, exist_ok=True)
        for trial in range(trials):
            csv_text = client.text(f"/sweeps/{job_id}/cells/{cell}/trials/{trial}/metrics.csv")
            (cell_dir / f"trial_{trial}.csv").write_text(csv_text, encoding="ascii")
        (cell_dir / "summary.json").write_text(
            json.dumps(sweep["table"][cell], indent=2) + "\n", encoding="ascii")
    (out / "sweep.csv").write_text(client.text(f"/sweeps/{job_id}/table.csv"), encoding="ascii")
    (out / "sweep.json").write_text(json.dumps(sweep["table"], indent=2) + "\n", encoding="ascii")


def command_run(args, parser: argparse.ArgumentParser,
                transport: httpx.BaseTransport | None = None) -> int:
    log = (lambda *_: None) if args.quiet else (lambda msg: print(msg, flush=True))
    try:
        values, provided = gather_run_values(args)
        if (args.sweep_axis is None) != (args.values is None):
            raise ConfigError("--sweep and --values must be given together")
        manifest = experiments.resolve_manifest(values, provided)
        out = Path(args.out)
        ensure_writable(out)
    except BarelabError as exc:
        parser.error(str(exc))

    echo = manifest.to_dict()
    (out / "manifest.json").write_text(json.dumps(echo, indent=2) + "\n", encoding="ascii")
    log("resolved manifest:")
    log(json.dumps(echo, indent=2))

    client = ServiceClient(args.server, transport=transport)
    try:
        client.check()
        if args.sweep_axis:
            sweep_values = parse_values_list(args.values)
            created = client.submit("/sweeps", {
                "axis": args.sweep_axis, "values": sweep_values, "run": values})
            log(f"submitted sweep {created['id']} over {args.sweep_axis} = {sweep_values}")
            final = client.wait(created["id"], args.poll_interval, log=log)
            if final["state"] == "failed":
                print(f"sweep failed: {final['error']}", file=sys.stderr)
                return 1
            fetch_sweep_outputs(client, created["id"], args.sweep_axis, sweep_values,
                                manifest.trials, out)
            log(f"sweep table written to {out / 'sweep.csv'}")
            print((out / "sweep.csv").read_text(), end="")
        else:
            created = client.submit("/runs", values)
            log(f"submitted run {created['id']}")
            final = client.wait(created["id"], args.poll_interval, log=log)
            if final["state"] == "failed":
                print(f"run failed: {final['error']}", file=sys.stderr)
                return 1
            fetch_run_outputs(client, created["id"], echo, out)
            summary = json.loads((out / "summary.json").read_text())
            log(f"outputs written to {out}")
            print(json.dumps(summary, indent=2))
    except BarelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def command_serve(args) -> int:
    import uvicorn

    uvicorn.run("barelab.service.app:app", host=args.host, port=args.port, log_level="info")
    return 0


def main(argv=None, transport: httpx.BaseTransport | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        return command_serve(args)
    return command_run(args, parser, transport=transport)


if __name__ == "__main__":
    sys.exit(main())
