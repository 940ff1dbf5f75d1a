"""Networked operation: event stream, control channel, results stream, gateway.

Acquisition-side events arrive as plaintext JSON on a pub/sub channel;
control commands travel in authenticated encrypted envelopes over HTTP;
results fan out as plaintext JSON on a second pub/sub channel.  The
asymmetry is deliberate: control mutates state and must be keyed, the
streams carry only paths and numbers.  The wire format (JSON payloads,
envelope fields, event dictionary) is the contract; the socket plumbing
behind it is an implementation detail.
"""

from .config import Endpoint, NetworkConfig
from .envelope import AuthenticationError, ReplayGuard, decode_control, encode_control
from .feeder import Feeder
from .pubsub import Publisher, Subscriber
from .server import ServerCore, ServerState, create_server_app
from .gateway import create_gateway_app

__all__ = [
    "AuthenticationError",
    "Endpoint",
    "Feeder",
    "NetworkConfig",
    "Publisher",
    "ReplayGuard",
    "ServerCore",
    "ServerState",
    "Subscriber",
    "create_gateway_app",
    "create_server_app",
    "decode_control",
    "encode_control",
]
