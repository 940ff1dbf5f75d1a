"""Network endpoints and shared secret, persisted as a home-directory dotfile."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DOTFILE_NAME = ".radpipe-network"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def to_dict(self) -> dict:
        return {"host": self.host, "port": self.port}

    @classmethod
    def from_dict(cls, doc: dict) -> "Endpoint":
        return cls(host=str(doc["host"]), port=int(doc["port"]))


@dataclass(frozen=True)
class NetworkConfig:
    """Who listens where, and the secret keying the control channel.

    feeder: event pub/sub; server: HTTP control; results: result pub/sub;
    gateway: browser-facing HTTP + websocket.
    """

    feeder: Endpoint = field(default_factory=lambda: Endpoint("127.0.0.1", 5555))
    server: Endpoint = field(default_factory=lambda: Endpoint("127.0.0.1", 5556))
    results: Endpoint = field(default_factory=lambda: Endpoint("127.0.0.1", 5557))
    gateway: Endpoint = field(default_factory=lambda: Endpoint("127.0.0.1", 8080))
    secret: str = ""

    def to_dict(self) -> dict:
        return {
            "feeder": self.feeder.to_dict(),
            "server": self.server.to_dict(),
            "results": self.results.to_dict(),
            "gateway": self.gateway.to_dict(),
            "secret": self.secret,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        defaults = cls()
        try:
            return cls(
                feeder=Endpoint.from_dict(doc["feeder"]) if "feeder" in doc else defaults.feeder,
                server=Endpoint.from_dict(doc["server"]) if "server" in doc else defaults.server,
                results=Endpoint.from_dict(doc["results"]) if "results" in doc else defaults.results,
                gateway=Endpoint.from_dict(doc["gateway"]) if "gateway" in doc else defaults.gateway,
                secret=str(doc.get("secret", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid network config: {exc}") from exc

    def require_secret(self) -> None:
        if not self.secret:
            raise ConfigError("network secret is empty; set one with the netconf command")


def default_config_path() -> Path:
    return Path.home() / DOTFILE_NAME


def load_network_config(path: str | Path | None = None) -> NetworkConfig:
    """Read the dotfile; a missing file yields the defaults."""
    p = Path(path) if path is not None else default_config_path()
    if not p.exists():
        return NetworkConfig()
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: expected a JSON object")
    return NetworkConfig.from_dict(doc)


def save_network_config(config: NetworkConfig, path: str | Path | None = None) -> Path:
    p = Path(path) if path is not None else default_config_path()
    p.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return p
