from app.models.results import ErrorRates, RocCurve, RocPoint

__all__ = ["ErrorRates", "RocCurve", "RocPoint"]
