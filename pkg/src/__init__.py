"""
Desk-scale ChatVLA: shared-attention transformer with task-routed FFN experts
"""

__version__ = "0.1.0"
