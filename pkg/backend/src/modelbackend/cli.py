"""Serve entrypoint: ``mmcurate-backend --port 8330``."""

from __future__ import annotations

import argparse

from .config import BackendConfig
from .server import create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mmcurate-backend")
    parser.add_argument("--chat-model", default="tiny")
    parser.add_argument("--loss-model", default="tiny", help='"tiny" or "hf:<model id>"')
    parser.add_argument("--embed-model", default="tiny")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=64)
    parser.add_argument("--port", type=int, default=8330)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    config = BackendConfig(
        chat_model=args.chat_model,
        loss_model=args.loss_model,
        embed_model=args.embed_model,
        device=args.device,
        max_batch=args.max_batch,
        port=args.port,
    )
    app = create_app(config, preload=True)

    import uvicorn

    uvicorn.run(app, host=args.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
