"""
Numerical core: model constants, g-expectations, tracking plans, closed forms and Monte Carlo checks
"""
__version__ = "0.1.0"
TOOL_NAME = "hhk-knightian"
