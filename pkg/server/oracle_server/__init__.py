"""HTTP scoring service for image classifiers.

Exposes a classifier behind two endpoints:

* ``POST /v1/scores`` scores a batch of PNG images and returns softmax
  probability rows.
* ``GET /v1/health`` reports the served model id and its class count.

The service is stateless: the model is loaded once at startup and shared
read-only across requests.
"""

from .app import create_app
from .config import ServerConfig
from .models import load_model

__all__ = ["ServerConfig", "create_app", "load_model"]
