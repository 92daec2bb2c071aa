from .experiments import router

__all__ = ["router"]
