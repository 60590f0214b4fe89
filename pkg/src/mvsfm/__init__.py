from .errors import MvsfmError
__version__ = "0.1.0"
