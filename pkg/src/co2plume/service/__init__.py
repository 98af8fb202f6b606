from .app import create_app, ServiceState

__all__ = ["create_app", "ServiceState"]
