"""Reference server for the egocentric-rollout wire protocol.

Implements POST /v1/rollout and GET /v1/health with deterministic mock
backends (protocol conformance targets for any client) and a documented
hook where a real pose-conditioned video generator can be mounted.
"""

from .server import AdapterConfig, create_app, main, serve
from .fixtures import golden_fixtures

__all__ = ["AdapterConfig", "create_app", "serve", "main", "golden_fixtures"]
__version__ = "0.1.0"
