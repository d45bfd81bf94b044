# version.py - Single source of truth for version number
__version__ = "1.0.0"
__app_name__ = "PAKF Bench"
