"""Binary presorting for weakly labeled, imbalanced audio classification."""

__version__ = "0.1.0"
