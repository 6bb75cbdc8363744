"""Monitoring module exports."""
from src.monitor.logger import StructuredLogger, setup_logging

__all__ = ['StructuredLogger', 'setup_logging']
