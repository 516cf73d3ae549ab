"""Multi-release anonymization of spontaneous adverse-event reports with cross-release attack auditing."""

from .attacks import (AttackResult, AttackTarget, Attacker, AuditReport, BackgroundRule,
                      audit_series, audit_targets)
from .grouping import GroupingResult, QidGroup, ncc_grouping
from .model import (InfeasibleReleaseError, Interval, PrivacyConfig, QidSchema, Record, Release,
                    ReleaseHistory, SchemaError, SuperRecord, Theta)
from .pipeline import anonymize, anonymize_series, precompute_groupings
from .taxonomy import TaxonomyError, TaxonomyTree

__all__ = [
    "AttackResult", "AttackTarget", "Attacker", "AuditReport", "BackgroundRule", "GroupingResult",
    "InfeasibleReleaseError", "Interval", "PrivacyConfig", "QidGroup", "QidSchema", "Record",
    "Release", "ReleaseHistory", "SchemaError", "SuperRecord", "TaxonomyError", "TaxonomyTree",
    "Theta", "anonymize", "anonymize_series", "audit_series", "audit_targets", "ncc_grouping",
    "precompute_groupings",
]
__version__ = "0.1.0"
