"""Baseline module exports."""
from src.baseline.periodogram import RangeDopplerMap, periodogram, extract_peaks, fft2d_detect

__all__ = ['RangeDopplerMap', 'periodogram', 'extract_peaks', 'fft2d_detect']
