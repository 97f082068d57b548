"""`clip-sidecar` entry point: load (or stub) a scorer and serve /score."""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from .encoders import EchoCritic, EncoderUnavailable, load_encoder
from .service import create_app

log = logging.getLogger(__name__)


def build_app(args: argparse.Namespace):
    if args.echo_critic:
        return create_app(EchoCritic())
    try:
        scorer = load_encoder(args.model, args.device)
    except EncoderUnavailable as exc:
        # serve anyway: /score answers 503 so callers see a live-but-empty sidecar
        log.error("model unavailable: %s", exc)
        return create_app(None, load_error=str(exc))
    log.info("serving scorer %s", scorer.name)
    return create_app(scorer)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="clip-sidecar")
    parser.add_argument("--model", default="tiny-test", help="encoder checkpoint name")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--port", type=int, default=8001)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument(
        "--echo-critic",
        action="store_true",
        help="test mode: loss = mean pixel value, uniform gradient",
    )
    args = parser.parse_args(argv)
    uvicorn.run(build_app(args), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
