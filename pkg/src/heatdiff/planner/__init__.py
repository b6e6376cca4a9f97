from .engine import LandEdit, ModelBundle, apply_edits, simulate_scene
from .service import create_app
from .store import PlannerStore

__all__ = ["LandEdit", "ModelBundle", "PlannerStore", "apply_edits", "create_app", "simulate_scene"]
