"""Command-line client for the alignment service.

Every subcommand is a thin HTTP call: arguments become a JSON request,
the response (or error) is printed.  By default the service runs
in-process, so no server needs to be up; ``--server URL`` talks to a
remote instance instead.  Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any

import httpx

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_EXIT_BY_KIND = {"usage": EXIT_USAGE, "data": EXIT_DATA, "numeric": EXIT_NUMERIC}

# Keys whose values are too bulky for the one-line-per-key summary.
_VERBOSE_KEYS = {"segments", "tracks", "boundaries", "train_losses", "val_losses"}


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _print_summary(payload: dict[str, Any]) -> None:
    for key, value in payload.items():
        if value is None:
            continue
        if key in _VERBOSE_KEYS:
            print(f"{key}: [{len(value)} entries]")
        elif isinstance(value, dict):
            print(f"{key}: {json.dumps(value, sort_keys=True)}")
        elif isinstance(value, float):
            print(f"{key}: {value:.6g}")
        else:
            print(f"{key}: {value}")


def _handle_response(response, as_json: bool) -> int:
    try:
        payload = response.json()
    except ValueError:
        payload = {"error": {"type": "usage", "message": response.text[:500]}}
    if response.status_code == 200:
        if as_json:
            print(json.dumps(payload, indent=2, sort_keys=True))
        else:
            _print_summary(payload)
        return EXIT_OK
    error = payload.get("error")
    if isinstance(error, dict):
        kind = error.get("type", "usage")
        message = error.get("message", "unknown error")
    else:
        # Request-validation failures come back as FastAPI "detail" lists.
        kind = "usage"
        message = json.dumps(payload.get("detail", payload))
    print(f"error ({kind}): {message}", file=sys.stderr)
    return _EXIT_BY_KIND.get(kind, EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chordalign",
        description="Align untimed chord sequences to audio.",
    )
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    parser.add_argument("--json", action="store_true", help="print the full JSON response")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic chord-audio corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tracks", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-min", type=float, default=12.0)
    p.add_argument("--duration-max", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--qualities", help="comma-separated quality subset, e.g. maj,min,7")

    p = sub.add_parser("train", help="train a frame classifier on a corpus")
    p.add_argument("--data", required=True, help="corpus directory of WAV+LAB pairs")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--preset", default="toy", help="model preset: toy or paper-m")
    p.add_argument("--model-set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a model config field")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a training config field (lr, seed, max_epochs, ...)")
    p.add_argument("--cache-dir", help="feature cache directory (default $CHORDALIGN_CACHE_DIR)")

    p = sub.add_parser("align", help="force-align an untimed chord list to a recording")
    p.add_argument("--audio", required=True)
    p.add_argument("--chords", required=True, help="text file, one chord label per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="output prefix; writes PREFIX.lab and PREFIX.json")
    p.add_argument("--blank-eps", type=float, default=1e-3)
    p.add_argument("--cache-dir")

    p = sub.add_parser("eval", help="score predicted LAB files against references")
    p.add_argument("--pred", required=True, help="directory of predicted .lab files")
    p.add_argument("--ref", required=True, help="directory of reference .lab files")
    p.add_argument("--window", type=float, default=0.3, help="boundary tolerance in seconds")
    p.add_argument("--out", help="write the full report JSON here")

    p = sub.add_parser("baseline", help="run an untrained baseline aligner")
    p.add_argument("--method", required=True, choices=["hcdf", "dtw"])
    p.add_argument("--audio", required=True)
    p.add_argument("--ref", help="reference LAB (required for dtw, optional scoring for hcdf)")
    p.add_argument("--out", help="output prefix")
    p.add_argument("--window", type=float, default=0.3)

    p = sub.add_parser("features", help="extract constant-Q features to a file")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="run the HTTP service with uvicorn")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _request_for(args: argparse.Namespace) -> tuple[str, dict[str, Any]]:
    if args.command == "synth":
        payload = {
            "out_dir": args.out,
            "n_tracks": args.tracks,
            "seed": args.seed,
            "duration_min": args.duration_min,
            "duration_max": args.duration_max,
            "noise_level": args.noise,
        }
        if args.qualities:
            payload["qualities"] = [q.strip() for q in args.qualities.split(",") if q.strip()]
        return "/synth", payload
    if args.command == "train":
        return "/train", {
            "data_dir": args.data,
            "out_path": args.out,
            "preset": args.preset,
            "model_overrides": args.model_set,
            "train_overrides": args.set,
            "cache_dir": args.cache_dir,
        }
    if args.command == "align":
        return "/align", {
            "audio_path": args.audio,
            "chords_path": args.chords,
            "checkpoint_path": args.checkpoint,
            "out_prefix": args.out,
            "blank_eps": args.blank_eps,
            "cache_dir": args.cache_dir,
        }
    if args.command == "eval":
        return "/eval", {
            "pred_dir": args.pred,
            "ref_dir": args.ref,
            "window": args.window,
            "out_path": args.out,
        }
    if args.command == "baseline":
        return "/baseline", {
            "method": args.method,
            "audio_path": args.audio,
            "ref_path": args.ref,
            "out_prefix": args.out,
            "window": args.window,
        }
    if args.command == "features":
        return "/features", {"audio_path": args.audio, "out_path": args.out}
    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    endpoint, payload = _request_for(args)
    try:
        with _make_client(args.server) as client:
            response = client.post(endpoint, json=payload)
            return _handle_response(response, args.json)
    except httpx.RequestError as exc:
        print(f"error (usage): cannot reach {args.server}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
