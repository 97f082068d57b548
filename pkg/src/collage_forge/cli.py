"""Command line front end.

`collage-forge run` drives a headless batch session; `collage-forge
serve` starts the HTTP API.  Flags override config-file values so a base
config can be shared across runs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SessionConfig, load_config_file
from .optimizer import write_trace_csv
from .session import Session

log = logging.getLogger(__name__)


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--patch-dir", help="directory of patch images")
    parser.add_argument("--prompt", help="global prompt")
    parser.add_argument(
        "--prompts-grid",
        help="comma-separated region prompts, row-major, grid*grid entries",
    )
    parser.add_argument("--canvas", type=int, help="canvas side in pixels")
    parser.add_argument("--grid", type=int, help="critic grid g (g*g regions)")
    parser.add_argument("--crop", type=int, help="region crop side in pixels")
    parser.add_argument(
        "--mode", choices=("transparency", "masked_transparency", "opacity")
    )
    parser.add_argument("--agg", choices=("arithmetic", "harmonic"))
    parser.add_argument("--steps", type=int, help="optimization steps")
    parser.add_argument("--pop", type=int, help="population size")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--critic-endpoint", help="remote critic base URL")
    parser.add_argument("--trace", action="store_true", help="write loss trace CSV")
    parser.add_argument("--out", help="output directory")


def _apply_overrides(data: dict, args: argparse.Namespace) -> dict:
    simple = {
        "patch_dir": args.patch_dir,
        "prompt": args.prompt,
        "canvas": args.canvas,
        "grid": args.grid,
        "crop": args.crop,
        "mode": args.mode,
        "agg": args.agg,
        "out_dir": args.out,
    }
    for key, value in simple.items():
        if value is not None:
            data[key] = value
    if args.prompts_grid is not None:
        data["region_prompts"] = [p.strip() for p in args.prompts_grid.split(",")]
    if args.critic_endpoint is not None:
        data["critic_endpoint"] = args.critic_endpoint
        data["critic"] = "remote"
    if args.trace:
        data["trace"] = True
    opt = dict(data.get("optimizer") or {})
    if args.steps is not None:
        opt["steps"] = args.steps
    if args.seed is not None:
        opt["seed"] = args.seed
    if opt:
        data["optimizer"] = opt
    if args.pop is not None:
        evo = dict(data.get("evolution") or {})
        evo["population"] = args.pop
        data["evolution"] = evo
    return data


def build_config(args: argparse.Namespace) -> SessionConfig:
    data: dict = {}
    if args.config:
        data = load_config_file(args.config).to_dict()
    data = _apply_overrides(data, args)
    if not data.get("patch_dir"):
        raise SystemExit("a patch directory is required (--patch-dir or config file)")
    return SessionConfig.from_dict(data)


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    session = Session(config)
    try:
        state = session.control("step_n", config.optimizer.steps)
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        snap = session.snapshot()
        png_path = out_dir / "collage.png"
        png_path.write_bytes(snap["png"])
        if config.trace:
            write_trace_csv(out_dir / "trace.csv", session.trace)
        best = state["selected_genome"]
        loss = state["genome_losses"][best]
        print(f"finished at step {state['step']} phase={state['phase']}")
        if loss is not None:
            print(f"best genome {best} loss {loss:.6f}")
        print(f"wrote {png_path}")
        if state["last_error"]:
            print(f"stopped early: {state['last_error']}", file=sys.stderr)
            return 1
        return 0
    finally:
        session.close()


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app
    from .session import SessionRegistry

    app = create_app(SessionRegistry(allow_multiple=args.multi_session))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="collage-forge")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a headless batch session")
    run_p.add_argument("--config", help="YAML config file")
    _add_override_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    serve_p = sub.add_parser("serve", help="start the HTTP API")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument(
        "--multi-session", action="store_true", help="allow more than one live session"
    )
    serve_p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
