"""Standalone server entry point."""

import click
import uvicorn

from .app import create_app
from .config import RESIZE_POLICIES, ServerConfig


@click.command()
@click.option("--model", default="seeded:mlp:10:1", show_default=True,
              help="Model spec: seeded:mlp:CLASSES:SEED or torchscript:PATH.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--height", default=32, show_default=True, type=int,
              help="Model input height.")
@click.option("--width", default=32, show_default=True, type=int,
              help="Model input width.")
@click.option("--resize", default="bilinear", show_default=True,
              type=click.Choice(RESIZE_POLICIES),
              help="How to handle images whose size differs from the model's.")
@click.option("--deterministic/--no-deterministic", default=True,
              show_default=True,
              help="Force inference mode and fixed preprocessing.")
def main(model, host, port, height, width, resize, deterministic):
    """Serve softmax scores for PNG images over HTTP."""
    cfg = ServerConfig(model=model, host=host, port=port, height=height,
                       width=width, resize=resize,
                       deterministic=deterministic)
    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port)


if __name__ == "__main__":
    main()
