class KSLabError(Exception):
    """Base exception for all laboratory errors"""
    pass
