"""Collision probability between Gaussian-uncertain ellipsoids, and a planner that uses it."""

from .assess import AssessOptions, CollisionQuery, assess
from .geometry import ContactResult, Ellipsoid, contact_point, intersects, make_ellipsoid
from .quadform import QuadFormSpec, SeriesResult, cdf_series, pdf_series, standardize
from .riskbounds import RiskAssessment, RiskMethod, eps_safe_residual, upper_bound

__all__ = [
    "AssessOptions", "CollisionQuery", "ContactResult", "Ellipsoid", "QuadFormSpec",
    "RiskAssessment", "RiskMethod", "SeriesResult", "assess", "cdf_series", "contact_point",
    "eps_safe_residual", "intersects", "make_ellipsoid", "pdf_series", "standardize",
    "upper_bound",
]

__version__ = "0.1.0"
