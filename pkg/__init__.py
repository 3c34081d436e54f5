"""
Dining Hub Mobility

Dining hubs, home/work labels and job/housing moves mined from food delivery order logs.
"""

__version__ = "1.0.0"
__author__ = "Developer"
__email__ = "dev@example.com"
