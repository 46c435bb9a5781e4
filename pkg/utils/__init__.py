from .error_logger import ErrorLogger